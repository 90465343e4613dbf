//! Property tests for the tokenizer, the answer grammar, rotary embedding,
//! the split, windowing and ranking helpers.

use beamvlm_core::eval::{topk_accuracy, RankedPrediction};
use beamvlm_core::nn::{rope_apply, Tensor};
use beamvlm_core::scene::{reflect, split_assignments, window_count, Split, WINDOW};
use beamvlm_core::text::{detokenize, format_answer, parse_answer, tokenize_bytes, TextError};
use proptest::prelude::*;
use regex::Regex;

/// Independent statement of the answer grammar: the error class the parser
/// must report for `text`, or the parsed beams.
fn oracle(text: &str, m: usize, horizon: usize) -> Result<Vec<usize>, &'static str> {
    if text.trim_matches([' ', '\t', '\r', '\n']).is_empty() {
        return Err("malformed_count");
    }
    let shape = Regex::new(r"^[ \t\r\n]*[0-9]+(, *[0-9]+)*[ \t\r\n]*$").unwrap();
    if !shape.is_match(text) {
        return Err("syntax");
    }
    let fields: Vec<&str> = Regex::new("[0-9]+").unwrap().find_iter(text).map(|f| f.as_str()).collect();
    if fields.len() != horizon {
        return Err("malformed_count");
    }
    fields.iter().map(|f| f.parse::<usize>().ok().filter(|v| (1..=m).contains(v)).ok_or("out_of_range")).collect()
}

fn classify(r: Result<beamvlm_core::text::ParsedAnswer, TextError>) -> Result<Vec<usize>, &'static str> {
    r.map(|p| p.beams).map_err(|e| e.class())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn tokenizer_round_trips_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
        prop_assert_eq!(detokenize(&tokenize_bytes(&bytes)).unwrap(), bytes);
    }

    #[test]
    fn format_then_parse_is_identity(beams in proptest::collection::vec(1usize..=32, 5)) {
        let text = format_answer(&beams, 32).unwrap();
        prop_assert_eq!(parse_answer(&text, 32, 5).unwrap().beams, beams);
    }

    #[test]
    fn parser_agrees_with_grammar_oracle(text in "[0-9, \\-xA-F\\t]{0,24}", m in 2usize..64, horizon in 1usize..7) {
        prop_assert_eq!(classify(parse_answer(&text, m, horizon)), oracle(&text, m, horizon));
    }

    #[test]
    fn mutated_answers_are_rejected_with_the_right_class(
        beams in proptest::collection::vec(1usize..=32, 5),
        which in 0usize..5,
        kind in 0usize..5,
    ) {
        let mut fields: Vec<String> = beams.iter().map(|b| b.to_string()).collect();
        let expected = match kind {
            0 => { fields.remove(which); "malformed_count" }
            1 => { fields.insert(which, "7".into()); "malformed_count" }
            2 => { fields[which] = format!("-{}", fields[which]); "syntax" }
            3 => { fields[which] = format!("0x{:X}", beams[which]); "syntax" }
            _ => { fields[which] = (33 + beams[which]).to_string(); "out_of_range" }
        };
        let text = fields.join(", ");
        prop_assert_eq!(classify(parse_answer(&text, 32, 5)), Err(expected));
    }

    #[test]
    fn deleting_a_comma_is_a_syntax_error(beams in proptest::collection::vec(1usize..=32, 5), which in 0usize..4) {
        let text = format_answer(&beams, 32).unwrap();
        let pos = text.match_indices(',').nth(which).unwrap().0;
        let broken = format!("{}{}", &text[..pos], &text[pos + 1..]);
        prop_assert_eq!(classify(parse_answer(&broken, 32, 5)), Err("syntax"));
    }

    #[test]
    fn rope_preserves_norms(v in proptest::collection::vec(-10.0f64..10.0, 16), p in 0usize..5000) {
        let x = Tensor::from_vec(&[1, 16], v).unwrap();
        let y = rope_apply(&x, &[p]).unwrap();
        prop_assert!((y.norm() - x.norm()).abs() < 1e-6 * (1.0 + x.norm()));
    }

    #[test]
    fn rope_scores_depend_only_on_relative_position(
        q in proptest::collection::vec(-1.0f64..1.0, 8),
        k in proptest::collection::vec(-1.0f64..1.0, 8),
        p1 in 0usize..500, p2 in 0usize..500, s in 0usize..500,
    ) {
        let q = Tensor::from_vec(&[1, 8], q).unwrap();
        let k = Tensor::from_vec(&[1, 8], k).unwrap();
        let dot = |a: &Tensor<f64>, b: &Tensor<f64>| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>();
        let before = dot(&rope_apply(&q, &[p1]).unwrap(), &rope_apply(&k, &[p2]).unwrap());
        let after = dot(&rope_apply(&q, &[p1 + s]).unwrap(), &rope_apply(&k, &[p2 + s]).unwrap());
        prop_assert!((before - after).abs() < 1e-5);
    }

    #[test]
    fn split_sizes_and_determinism(n in 0usize..500, seed in any::<u64>()) {
        let a = split_assignments(n, 0.7, seed);
        prop_assert_eq!(a.len(), n);
        let train = a.iter().filter(|&&s| s == Split::Train).count();
        prop_assert_eq!(train, (7 * n).div_ceil(10));
        prop_assert_eq!(a, split_assignments(n, 0.7, seed));
    }

    #[test]
    fn windows_per_sequence(len in WINDOW..200) {
        prop_assert_eq!(window_count(len), len - 12);
    }

    #[test]
    fn reflection_stays_in_the_sector(az in -1000.0f64..1000.0) {
        let r = reflect(az, 45.0);
        prop_assert!((-45.0..=45.0).contains(&r));
        if (-45.0..=45.0).contains(&az) {
            prop_assert!((r - az).abs() < 1e-9);
        }
    }

    #[test]
    fn topk_is_monotone_in_k(
        scores in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 8), 1..20),
        labels in proptest::collection::vec(1usize..=8, 20),
    ) {
        let preds: Vec<RankedPrediction> = scores.iter().map(|s| RankedPrediction::from_scores(std::slice::from_ref(s), true)).collect();
        let labels: Vec<Vec<usize>> = labels[..preds.len()].iter().map(|&l| vec![l]).collect();
        let mut last = 0.0;
        for k in 1..=8 {
            let acc = topk_accuracy(&preds, &labels, k, 1).unwrap();
            prop_assert!(acc >= last);
            last = acc;
        }
        prop_assert_eq!(last, 1.0);
    }
}
