//! Experiment configs and the commands behind the `dyml` binary.
//!
//! Output layout under the output directory:
//!
//! ```text
//! train.dyml, test.dyml, dataset.json         gen
//! <method>/seed-<s>/checkpoint.dymc           train
//! <method>/seed-<s>/diagnostics.csv           train
//! <method>/seed-<s>/report.{json,csv}         eval
//! <method>/seed-<s>/test_embeddings.dyme      eval
//! study-<name>.csv, study-<name>-summary.csv  study
//! ```

mod config;
mod study;

pub use config::{DatasetConfig, ExperimentConfig, MethodConfig, RunConfig, StudyConfig, DEFAULT_OUT_DIR};
pub use study::{cmd_study, median, run_cells, Cell, CellResult, StudyName, StudyOutput};

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{DymlError, Result};
use crate::evaluator::{evaluate, write_report_csv, write_report_json, OverallReport, ReportMeta};
use crate::geometry::{embed_all, load_embeddings, save_embeddings, Embedding, EmbeddingModel};
use crate::taxonomy::{generate_synthetic, Dataset};
use crate::trainer::{read_checkpoint, write_checkpoint, EpochDiagnostics, Method, TrainState, Trainer};

pub const CHECKPOINT_FILE: &str = "checkpoint.dymc";
pub const ABORT_CHECKPOINT_FILE: &str = "checkpoint-abort.dymc";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";

/// Directory of one (method, seed) run.
pub fn run_dir(out: &Path, method: Method, seed: u64) -> PathBuf {
    out.join(method.to_string()).join(format!("seed-{seed}"))
}

/// Writes `train.dyml`, `test.dyml` and a `dataset.json` manifest.
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<(PathBuf, PathBuf)> {
    cfg.validate()?;
    let (train, test) = generate_synthetic(&cfg.dataset.synthetic)?;
    std::fs::create_dir_all(out)?;
    let (train_path, test_path) = (out.join("train.dyml"), out.join("test.dyml"));
    train.save(&train_path)?;
    test.save(&test_path)?;
    let manifest = serde_json::json!({
        "config_hash": cfg.hash()?,
        "seed": cfg.dataset.synthetic.seed,
        "synthetic": cfg.dataset.synthetic,
        "train": { "samples": train.len(), "classes_per_scale": train.taxonomy().classes_per_scale() },
        "test": { "samples": test.len(), "classes_per_scale": test.taxonomy().classes_per_scale() },
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| DymlError::Format(e.to_string()))?;
    std::fs::write(out.join("dataset.json"), text + "\n")?;
    Ok((train_path, test_path))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Continue from an existing checkpoint in the run directory.
    pub resume: bool,
    /// Stop once this many epochs are complete; the schedule still spans
    /// the configured epochs.
    pub until_epoch: Option<usize>,
}

fn diagnostics_header(num_scales: usize) -> String {
    format!("config_hash,seed,method,{}", EpochDiagnostics::csv_header(num_scales))
}

fn save_checkpoint(path: &Path, state: &TrainState, config: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, state, config)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, dataset: &Dataset) -> Result<(TrainState, String)> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(&mut r, dataset.taxonomy())
}

/// Trains one model per seed and writes a checkpoint plus per-epoch
/// diagnostics for each. Returns the checkpoint paths.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, opts: &TrainOptions) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let (train, _) = cfg.dataset.load()?;
    let canonical = cfg.canonical()?;
    let hash = cfg.hash()?;
    let method = cfg.method.method();
    let target = opts.until_epoch.unwrap_or(cfg.trainer.epochs).min(cfg.trainer.epochs);
    let mut paths = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let dir = run_dir(out, method, seed);
        std::fs::create_dir_all(&dir)?;
        let ckpt = dir.join(CHECKPOINT_FILE);
        let diag_path = dir.join(DIAGNOSTICS_FILE);
        let prefix = format!("{hash},{seed},{method}");

        let (mut trainer, mut lines) = if opts.resume && ckpt.exists() {
            let (state, stored) = load_checkpoint(&ckpt, &train)?;
            if stored != canonical {
                return Err(DymlError::InvalidConfig(format!(
                    "{} was written with a different config",
                    ckpt.display()
                )));
            }
            let keep = state.epoch + 1;
            let lines: Vec<String> =
                std::fs::read_to_string(&diag_path)?.lines().take(keep).map(String::from).collect();
            if lines.len() != keep {
                return Err(DymlError::Format(format!("{} is shorter than the checkpoint", diag_path.display())));
            }
            (Trainer::resume(&train, cfg.loss.clone(), cfg.trainer.clone(), state)?, lines)
        } else {
            let trainer = Trainer::new(&train, method, cfg.loss.clone(), cfg.trainer.clone(), seed)?;
            (trainer, vec![diagnostics_header(train.taxonomy().num_scales())])
        };

        while trainer.state().epoch < target {
            match trainer.run_epoch() {
                Ok(d) => {
                    log::info!("{method} seed {seed} epoch {}: loss {:.6}", d.epoch, d.loss);
                    lines.push(format!("{prefix},{}", d.csv_row()));
                }
                Err(e @ DymlError::NonFiniteLoss { .. }) => {
                    save_checkpoint(&dir.join(ABORT_CHECKPOINT_FILE), trainer.state(), &canonical)?;
                    std::fs::write(&diag_path, lines.join("\n") + "\n")?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        std::fs::write(&diag_path, lines.join("\n") + "\n")?;
        save_checkpoint(&ckpt, trainer.state(), &canonical)?;
        paths.push(ckpt);
    }
    Ok(paths)
}

pub fn embed_dataset(model: &EmbeddingModel, dataset: &Dataset) -> Result<Vec<Embedding>> {
    let features: Vec<Vec<f64>> = dataset.samples().iter().map(|s| s.features.clone()).collect();
    embed_all(model, &features)
}

/// Embeds a dataset with a model and evaluates retrieval on it.
pub fn evaluate_model(model: &EmbeddingModel, dataset: &Dataset) -> Result<OverallReport> {
    let embeddings = embed_dataset(model, dataset)?;
    evaluate(&embeddings, &dataset.label_chains(), dataset.taxonomy())
}

/// What `cmd_eval` evaluates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalSource {
    /// The checkpoint of every configured seed in the output directory.
    Runs,
    Checkpoint(PathBuf),
    /// A DYME1 embedding dump of the test split, in sample order.
    Embeddings(PathBuf),
}

fn write_reports(dir: &Path, report: &OverallReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_report_json(&dir.join("report.json"), report)?;
    write_report_csv(&dir.join("report.csv"), report)
}

/// Evaluates on the test split and writes `report.json` and `report.csv`.
pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path, source: &EvalSource) -> Result<Vec<OverallReport>> {
    cfg.validate()?;
    let (train, test) = cfg.dataset.load()?;
    let meta = |seed: u64, method: String| -> Result<ReportMeta> {
        Ok(ReportMeta { config_hash: cfg.hash()?, seed, method, config: cfg.echo()? })
    };
    let chains = test.label_chains();
    match source {
        EvalSource::Embeddings(path) => {
            let embeddings = load_embeddings(path)?;
            if embeddings.len() != test.len() {
                return Err(DymlError::DimensionMismatch { expected: test.len(), got: embeddings.len() });
            }
            let mut report = evaluate(&embeddings, &chains, test.taxonomy())?;
            report.meta = Some(meta(cfg.experiment.seeds[0], "embeddings".into())?);
            write_reports(out, &report)?;
            Ok(vec![report])
        }
        EvalSource::Checkpoint(path) => {
            let (state, _) = load_checkpoint(path, &train)?;
            let dir = path.parent().map_or_else(|| out.to_path_buf(), Path::to_path_buf);
            Ok(vec![eval_state(&state, &test, &dir, meta(state.seed, state.method.to_string())?)?])
        }
        EvalSource::Runs => {
            let method = cfg.method.method();
            cfg.experiment
                .seeds
                .iter()
                .map(|&seed| {
                    let dir = run_dir(out, method, seed);
                    let (state, _) = load_checkpoint(&dir.join(CHECKPOINT_FILE), &train)?;
                    eval_state(&state, &test, &dir, meta(seed, method.to_string())?)
                })
                .collect()
        }
    }
}

fn eval_state(state: &TrainState, test: &Dataset, dir: &Path, meta: ReportMeta) -> Result<OverallReport> {
    let embeddings = embed_dataset(&state.model, test)?;
    let mut report = evaluate(&embeddings, &test.label_chains(), test.taxonomy())?;
    report.meta = Some(meta);
    std::fs::create_dir_all(dir)?;
    save_embeddings(&dir.join("test_embeddings.dyme"), &embeddings)?;
    write_reports(dir, &report)?;
    Ok(report)
}
