//! Byte-level tokenizer, the three-block instruction prompt and the strict
//! answer grammar.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

pub const BOS: TokenId = 256;
pub const EOS: TokenId = 257;
pub const PAD: TokenId = 258;
/// Placeholder id recorded at visual-token positions.
pub const IMG: TokenId = 259;
pub const VOCAB_SIZE: usize = 260;

/// The smoothness prior carried by the context-hint block.
pub const SMOOTHNESS_HINT: &str = "beam indices usually evolve smoothly over time";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TextError {
    #[error("cannot detokenize special token {0}")]
    Detokenize(TokenId),
    #[error("expected {expected} integers, found {found}")]
    MalformedCount { expected: usize, found: usize },
    #[error("beam index {value} outside 1..={max}")]
    OutOfRange { value: String, max: usize },
    #[error("syntax error at byte {position}")]
    Syntax { position: usize },
    #[error("empty beam history")]
    EmptyHistory,
}

impl TextError {
    /// Stable short name of the error class.
    pub fn class(&self) -> &'static str {
        match self {
            TextError::Detokenize(_) => "detokenize",
            TextError::MalformedCount { .. } => "malformed_count",
            TextError::OutOfRange { .. } => "out_of_range",
            TextError::Syntax { .. } => "syntax",
            TextError::EmptyHistory => "empty_history",
        }
    }
}

pub fn tokenize(text: &str) -> Vec<TokenId> {
    tokenize_bytes(text.as_bytes())
}

pub fn tokenize_bytes(bytes: &[u8]) -> Vec<TokenId> {
    bytes.iter().map(|&b| TokenId::from(b)).collect()
}

/// Inverse of [`tokenize_bytes`]; BOS/EOS are dropped, PAD/IMG rejected.
pub fn detokenize(ids: &[TokenId]) -> Result<Vec<u8>, TextError> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        match id {
            0..=255 => out.push(id as u8),
            BOS | EOS => {}
            other => return Err(TextError::Detokenize(other)),
        }
    }
    Ok(out)
}

/// Prompt blocks. Block text may use the `{M}`, `{N_FRAMES}`, `{HORIZON}`
/// and `{SCENARIO}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub scenario_tag: String,
    pub dataset_def: String,
    pub task_instruction: String,
    pub context_hint: String,
}

impl PromptTemplate {
    pub fn standard(scenario_tag: &str) -> Self {
        Self {
            scenario_tag: scenario_tag.to_owned(),
            dataset_def: "{SCENARIO}: {N_FRAMES} frames, codebook size {M}.".to_owned(),
            task_instruction: "Predict the next {HORIZON} beams as exactly {HORIZON} comma-separated integers."
                .to_owned(),
            context_hint: format!("Hint: {SMOOTHNESS_HINT}."),
        }
    }

    /// Parses template-file text. Lines consisting of `---` separate the
    /// dataset, task and hint blocks; text without separators is a single
    /// dataset block.
    pub fn from_template_text(scenario_tag: &str, text: &str) -> Self {
        let mut blocks: Vec<String> = Vec::new();
        let mut current = String::new();
        for line in text.lines() {
            if line.trim() == "---" {
                blocks.push(core::mem::take(&mut current));
            } else {
                if !current.is_empty() {
                    current.push('\n');
                }
                current.push_str(line);
            }
        }
        blocks.push(current);
        let mut it = blocks.into_iter().map(|b| b.trim().to_owned());
        Self {
            scenario_tag: scenario_tag.to_owned(),
            dataset_def: it.next().unwrap_or_default(),
            task_instruction: it.next().unwrap_or_default(),
            context_hint: it.next().unwrap_or_default(),
        }
    }

    /// Nonempty blocks joined by newlines, placeholders substituted.
    pub fn render(&self, m: usize, n_frames: usize, horizon: usize) -> String {
        let fill = |s: &str| {
            s.replace("{M}", &m.to_string())
                .replace("{N_FRAMES}", &n_frames.to_string())
                .replace("{HORIZON}", &horizon.to_string())
                .replace("{SCENARIO}", &self.scenario_tag)
        };
        [&self.dataset_def, &self.task_instruction, &self.context_hint]
            .iter()
            .filter(|b| !b.is_empty())
            .map(|b| fill(b))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn build_prompt(m: usize, n_frames: usize, horizon: usize, scenario_tag: &str) -> String {
    assert!(m >= 2 && n_frames >= 1 && horizon >= 1);
    PromptTemplate::standard(scenario_tag).render(m, n_frames, horizon)
}

/// A grammatical answer: `horizon` beam indices in `1..=M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAnswer {
    pub beams: Vec<usize>,
}

fn is_ws(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r')
}

/// Accepts `ws* int (',' ' '* int){horizon-1} ws*` with every integer in
/// `1..=m`. Syntax is checked first, then the count, then the range; a
/// blank answer counts as zero integers.
pub fn parse_answer(text: &str, m: usize, horizon: usize) -> Result<ParsedAnswer, TextError> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while start < bytes.len() && is_ws(bytes[start]) {
        start += 1;
    }
    let mut end = bytes.len();
    while end > start && is_ws(bytes[end - 1]) {
        end -= 1;
    }
    let mut fields: Vec<&str> = Vec::new();
    let mut i = start;
    while i < end {
        let d0 = i;
        while i < end && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == d0 {
            return Err(TextError::Syntax { position: i });
        }
        fields.push(&text[d0..i]);
        if i == end {
            break;
        }
        if bytes[i] != b',' {
            return Err(TextError::Syntax { position: i });
        }
        i += 1;
        while i < end && bytes[i] == b' ' {
            i += 1;
        }
        if i == end {
            return Err(TextError::Syntax { position: i });
        }
    }
    if fields.len() != horizon {
        return Err(TextError::MalformedCount { expected: horizon, found: fields.len() });
    }
    let beams = fields
        .iter()
        .map(|f| match f.parse::<usize>() {
            Ok(v) if (1..=m).contains(&v) => Ok(v),
            _ => Err(TextError::OutOfRange { value: (*f).to_owned(), max: m }),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ParsedAnswer { beams })
}

/// Canonical `"a, b, c, d, e"` rendering.
pub fn format_answer(beams: &[usize], m: usize) -> Result<String, TextError> {
    if let Some(&bad) = beams.iter().find(|&&b| !(1..=m).contains(&b)) {
        return Err(TextError::OutOfRange { value: bad.to_string(), max: m });
    }
    Ok(beams.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(", "))
}

/// Repeats the last observed beam `horizon` times.
pub fn fallback_answer(history: &[usize], horizon: usize) -> Result<ParsedAnswer, TextError> {
    let last = *history.last().ok_or(TextError::EmptyHistory)?;
    Ok(ParsedAnswer { beams: alloc::vec![last; horizon] })
}
