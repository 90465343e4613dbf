//! Subcommands of the `beamvlm` binary.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use beamvlm_core::baseline::RecurrentClassifier;
use beamvlm_core::eval::{
    ablate_prompt, AblationReport, BaselinePredictor, MetricsTable, OraclePredictor, VlmPredictor, DEFAULT_KS,
};
use beamvlm_core::scene::{Sample, Split};
use beamvlm_core::text::{tokenize, PromptTemplate, TokenId};
use beamvlm_core::train::{finetune_lora_with, train_with, StepRecord, TrainReport};
use beamvlm_core::vlm::{predict_beams, BeamVlm, VlmSession};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use crate::checkpoint::{Checkpoint, ModelSpec, TrainingMeta};
use crate::config::{streams, RunConfig};
use crate::dataset::{build_dataset, Dataset, DatasetSeeds};
use crate::parallel::{evaluate_parallel, ThreadedGrads};
use crate::report::{write_ablation_csv, write_metrics_csv, write_svg};
use crate::{write_file, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "beamvlm", version, about = "Generative vision-language beam prediction for ground-to-UAV links")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Vlm,
    Lstm,
    Elman,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scenario into a dataset directory.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the VLM (or a recurrent baseline) on the train split.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "vlm")]
        model: ModelChoice,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// LoRA-only fine-tuning of a trained VLM on another dataset.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Print the generated answer for one dataset sample.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Manifest index of the sample.
        #[arg(long)]
        sample: usize,
    },
    /// Top-K tables for checkpoints plus the pixel oracle.
    Eval {
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "k-list", value_delimiter = ',', default_values_t = DEFAULT_KS.to_vec())]
        k_list: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Evaluate one VLM under every prompt template in a directory.
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Directory of `*.txt` templates; `full.txt` is the reference.
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "k-list", value_delimiter = ',', default_values_t = DEFAULT_KS.to_vec())]
        k_list: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
}

/// Sets up logging from `BEAMVLM_LOG` (`error`, `info`, `debug`).
pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("BEAMVLM_LOG", "info"))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Runs the binary with `args` and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "code": e.exit_code(), "message": e.to_string() });
            eprintln!("{line}");
            e.exit_code()
        }
    }
}

fn print_resolved(what: &str, value: &impl Serialize) {
    let json = serde_json::to_string_pretty(value).expect("settings serialize");
    eprintln!("resolved {what} configuration:\n{json}");
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { config, out, seed } => {
            let cfg = load_config(&config, seed)?;
            print_resolved("gen-data", &cfg);
            cmd_gen_data(&cfg, &out).map(|_| ())
        }
        Command::Train { config, data, out, model, seed, threads } => {
            let cfg = load_config(&config, seed)?;
            print_resolved("train", &serde_json::json!({ "run": cfg, "model_kind": model, "threads": threads }));
            cmd_train(&cfg, &data, &out, model, threads).map(|_| ())
        }
        Command::Finetune { config, checkpoint, data, out, seed, threads } => {
            let cfg = load_config(&config, seed)?;
            print_resolved("finetune", &serde_json::json!({ "run": cfg, "base": checkpoint, "threads": threads }));
            cmd_finetune(&cfg, &checkpoint, &data, &out, threads).map(|_| ())
        }
        Command::Predict { checkpoint, data, sample } => {
            print_resolved("predict", &serde_json::json!({ "checkpoint": checkpoint, "data": data, "sample": sample }));
            let p = cmd_predict(&checkpoint, &data, sample)?;
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "raw: {}", p.raw);
            let beams: Vec<String> = p.beams.iter().map(|b| b.to_string()).collect();
            let _ = writeln!(stdout, "beams: {}", beams.join(", "));
            let _ = writeln!(stdout, "valid={}", p.valid);
            Ok(())
        }
        Command::Eval { checkpoints, data, out, k_list, threads } => {
            let ks = k_list_with_defaults(&k_list)?;
            print_resolved(
                "eval",
                &serde_json::json!({ "checkpoints": checkpoints, "data": data, "out": out, "k_list": ks, "threads": threads }),
            );
            cmd_eval(&checkpoints, &data, &out, &ks, threads).map(|_| ())
        }
        Command::Ablate { checkpoint, data, prompts, out, k_list, threads } => {
            let ks = k_list_with_defaults(&k_list)?;
            print_resolved(
                "ablate",
                &serde_json::json!({ "checkpoint": checkpoint, "data": data, "prompts": prompts, "out": out, "k_list": ks, "threads": threads }),
            );
            cmd_ablate(&checkpoint, &data, &prompts, &out, &ks, threads).map(|_| ())
        }
    }
}

/// The CSV always carries Top-1/2/3/5; extra K values are added for plots.
fn k_list_with_defaults(k_list: &[usize]) -> Result<Vec<usize>> {
    if k_list.contains(&0) {
        return Err(Error::Config("K values must be at least 1".into()));
    }
    let mut ks: Vec<usize> = DEFAULT_KS.iter().chain(k_list).copied().collect();
    ks.sort_unstable();
    ks.dedup();
    Ok(ks)
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    let ds = build_dataset(
        out,
        &cfg.scenario,
        &cfg.world,
        &cfg.codebook,
        cfg.split.train_fraction,
        DatasetSeeds {
            master: cfg.seed,
            trajectories: cfg.seed_for(streams::TRAJECTORIES),
            split: cfg.seed_for(streams::SPLIT),
        },
    )?;
    info!(
        "wrote {} sequences, {} samples ({} train / {} test) to {}",
        ds.manifest.sequences.len(),
        ds.manifest.samples.len(),
        ds.manifest.num_train,
        ds.manifest.num_test,
        out.display()
    );
    Ok(ds)
}

/// Renders a template for a dataset's scenario tag.
pub fn prompt_ids(template: &PromptTemplate, scenario_tag: &str, model: &beamvlm_core::vlm::VlmConfig) -> Vec<TokenId> {
    let t = PromptTemplate { scenario_tag: scenario_tag.to_owned(), ..template.clone() };
    tokenize(&t.render(model.num_beams, model.n_frames, model.horizon))
}

fn log_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".log.jsonl");
    out.with_file_name(name)
}

struct StepLog {
    lines: String,
}

impl StepLog {
    fn new() -> Self {
        Self { lines: String::new() }
    }

    fn record(&mut self, r: &StepRecord) {
        match r.top1_holdout {
            Some(t) => info!("step {} epoch {} loss {:.4} holdout top1 {:.3}", r.step, r.epoch, r.loss, t),
            None => log::debug!("step {} epoch {} loss {:.4}", r.step, r.epoch, r.loss),
        }
        self.lines.push_str(&serde_json::to_string(r).expect("records serialize"));
        self.lines.push('\n');
    }
}

fn meta_of(seed: u64, report: &TrainReport) -> TrainingMeta {
    TrainingMeta { seed, step: report.steps, loss: report.records.last().map(|r| r.loss) }
}

/// Held-out probe set for periodic Top-1 during training.
fn probe_set(ds: &Dataset, cfg: &RunConfig) -> Result<Vec<Sample>> {
    if cfg.train.eval_every.is_none() {
        return Ok(Vec::new());
    }
    let mut test = ds.samples(Some(Split::Test))?;
    test.truncate(64);
    Ok(test)
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path, kind: ModelChoice, threads: usize) -> Result<Checkpoint> {
    let ds = Dataset::open(data)?;
    let train_set = ds.samples(Some(Split::Train))?;
    info!("training {kind:?} on {} samples", train_set.len());
    let mut log = StepLog::new();
    let ckpt = match kind {
        ModelChoice::Vlm => {
            let mut model = BeamVlm::<f32>::new(cfg.model.clone(), cfg.seed_for(streams::MODEL_INIT))?;
            let template = cfg.prompt_template();
            let prompt = prompt_ids(&template, ds.scenario_tag(), &model.config);
            let probe = probe_set(&ds, cfg)?;
            let exec = ThreadedGrads { threads };
            let report =
                train_with(&mut model, &train_set, &probe, &prompt, &cfg.train, &exec, &mut |r| log.record(r))?;
            Checkpoint::from_vlm(&model, &template, meta_of(cfg.train.seed, &report))
        }
        ModelChoice::Lstm | ModelChoice::Elman => {
            let mut bc = cfg.baseline_config();
            bc.cell = if kind == ModelChoice::Lstm {
                beamvlm_core::baseline::CellType::Lstm
            } else {
                beamvlm_core::baseline::CellType::Elman
            };
            let mut clf = RecurrentClassifier::<f32>::new(bc, cfg.seed_for(streams::BASELINE_INIT))?;
            let tc = cfg.baseline_train();
            let report = beamvlm_core::baseline::train_baseline(&mut clf, &train_set, &tc, &mut |r| log.record(r))?;
            Checkpoint::from_baseline(&clf, meta_of(tc.seed, &report))
        }
    };
    ckpt.store(out)?;
    write_file(&log_path(out), &log.lines)?;
    info!("checkpoint written to {}", out.display());
    Ok(ckpt)
}

/// Order-sensitive hash of every non-adapter array.
pub fn base_checksum(model: &BeamVlm<f32>) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for e in model.params.entries().iter().filter(|e| !beamvlm_core::vlm::is_lora_param(&e.name)) {
        h.update(e.name.as_bytes());
        for v in e.value.data() {
            h.update(&v.to_le_bytes());
        }
    }
    h.finalize()
}

pub fn cmd_finetune(cfg: &RunConfig, base: &Path, data: &Path, out: &Path, threads: usize) -> Result<Checkpoint> {
    let (mut model, template) = Checkpoint::load(base)?.into_vlm()?;
    let ds = Dataset::open(data)?;
    let train_set = ds.samples(Some(Split::Train))?;
    let prompt = prompt_ids(&template, ds.scenario_tag(), &model.config);
    let before = base_checksum(&model);
    let probe = probe_set(&ds, cfg)?;
    let tc = beamvlm_core::train::TrainConfig { seed: cfg.seed_for(streams::LORA_INIT), ..cfg.train.clone() };
    let mut log = StepLog::new();
    let exec = ThreadedGrads { threads };
    let report =
        finetune_lora_with(&mut model, cfg.lora, &train_set, &probe, &prompt, &tc, &exec, &mut |r| log.record(r))?;
    let after = base_checksum(&model);
    if before != after {
        return Err(Error::Config("base weights changed during LoRA-only fine-tuning".into()));
    }
    info!("fine-tuned {} adapter parameters; base checksum {before:08x} unchanged", model.params.num_trainable());
    let ckpt = Checkpoint::from_vlm(&model, &template, meta_of(tc.seed, &report));
    ckpt.store(out)?;
    write_file(&log_path(out), &log.lines)?;
    Ok(ckpt)
}

pub fn cmd_predict(checkpoint: &Path, data: &Path, index: usize) -> Result<beamvlm_core::vlm::Prediction> {
    let (model, template) = Checkpoint::load(checkpoint)?.into_vlm()?;
    let ds = Dataset::open(data)?;
    let sample = ds.load_sample(index)?;
    let prompt = prompt_ids(&template, ds.scenario_tag(), &model.config);
    let mut session = VlmSession::new(&model)?;
    let c = &model.config;
    Ok(predict_beams(
        &mut session,
        &sample.frames,
        &prompt,
        &sample.history_beams,
        c.num_beams,
        c.horizon,
        c.max_answer_tokens,
    )?)
}

fn predictor_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Evaluates each checkpoint and the pixel oracle on the test split and
/// writes `metrics.csv` plus one `topk_k<K>.svg` per K.
pub fn cmd_eval(
    checkpoints: &[PathBuf],
    data: &Path,
    out: &Path,
    ks: &[usize],
    threads: usize,
) -> Result<Vec<(String, MetricsTable)>> {
    if checkpoints.is_empty() {
        return Err(Error::Config("eval needs at least one --checkpoint".into()));
    }
    let ds = Dataset::open(data)?;
    let test = ds.samples(Some(Split::Test))?;
    let mut tables = Vec::new();
    for path in checkpoints {
        let name = predictor_name(path);
        let ckpt = Checkpoint::load(path)?;
        let table = match &ckpt.model {
            ModelSpec::Vlm { .. } => {
                let (model, template) = ckpt.into_vlm()?;
                let prompt = prompt_ids(&template, ds.scenario_tag(), &model.config);
                let (table, preds) = evaluate_parallel(|| Ok(VlmPredictor::new(&model, &prompt)?), &test, ks, threads)?;
                let valid: usize = preds.iter().map(|p| p.valid).sum();
                let consistent: usize = preds.iter().map(|p| p.consistent).sum();
                info!("{name}: greedy/rank-1 agreement on {consistent} of {valid} valid answers");
                table
            }
            ModelSpec::Baseline { .. } => {
                let clf = ckpt.into_baseline()?;
                evaluate_parallel(|| Ok(BaselinePredictor { model: &clf }), &test, ks, threads)?.0
            }
        };
        info!("{name}: top1@t+1 = {:.4}", table.top(1, 1).unwrap_or(f64::NAN));
        tables.push((name, table));
    }
    let cb = ds.codebook()?;
    let world = ds.manifest.world.clone();
    let (oracle, _) = evaluate_parallel(|| Ok(OraclePredictor { codebook: &cb, world: &world }), &test, ks, threads)?;
    tables.push(("oracle".to_owned(), oracle));
    write_metrics_csv(&out.join("metrics.csv"), &tables)?;
    for &k in ks {
        write_svg(&out.join(format!("topk_k{k}.svg")), &tables, k)?;
    }
    Ok(tables)
}

/// Reads `*.txt` templates; `full` comes first, the rest alphabetically.
pub fn load_prompt_variants(dir: &Path, scenario_tag: &str) -> Result<Vec<(String, PromptTemplate)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut variants = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let text = crate::read_to_string(&path)?;
        variants.push((predictor_name(&path), PromptTemplate::from_template_text(scenario_tag, &text)));
    }
    variants.sort_by(|a, b| (a.0 != "full", &a.0).cmp(&(b.0 != "full", &b.0)));
    if variants.first().map(|v| v.0.as_str()) != Some("full") {
        return Err(Error::Config(format!("{} has no full.txt reference prompt", dir.display())));
    }
    if variants.len() < 2 {
        return Err(Error::Config("ablation needs at least one variant besides full.txt".into()));
    }
    Ok(variants)
}

pub fn cmd_ablate(
    checkpoint: &Path,
    data: &Path,
    prompts: &Path,
    out: &Path,
    ks: &[usize],
    threads: usize,
) -> Result<AblationReport> {
    let (model, _) = Checkpoint::load(checkpoint)?.into_vlm()?;
    let ds = Dataset::open(data)?;
    let test = ds.samples(Some(Split::Test))?;
    let variants: Vec<(String, Vec<TokenId>)> = load_prompt_variants(prompts, ds.scenario_tag())?
        .into_iter()
        .map(|(name, t)| {
            let ids = tokenize(&t.render(model.config.num_beams, model.config.n_frames, model.config.horizon));
            (name, ids)
        })
        .collect();
    let report = if threads <= 1 {
        ablate_prompt(&model, &test, &variants, ks)?
    } else {
        let mut rows: Vec<beamvlm_core::eval::AblationRow> = Vec::new();
        for (name, prompt) in &variants {
            let (metrics, _) = evaluate_parallel(|| Ok(VlmPredictor::new(&model, prompt)?), &test, ks, threads)?;
            let delta_top1 = match rows.first() {
                None => vec![0.0; metrics.horizon()],
                Some(full) => (1..=metrics.horizon())
                    .map(|s| metrics.top(1, s).unwrap_or(0.0) - full.metrics.top(1, s).unwrap_or(0.0))
                    .collect(),
            };
            rows.push(beamvlm_core::eval::AblationRow { variant: name.clone(), metrics, delta_top1 });
        }
        AblationReport { rows }
    };
    for row in &report.rows {
        info!(
            "{}: top1@t+1 {:.4} (delta {:+.4})",
            row.variant,
            row.metrics.top(1, 1).unwrap_or(f64::NAN),
            row.delta_top1[0]
        );
    }
    write_ablation_csv(&out.join("ablation.csv"), &report)?;
    Ok(report)
}
