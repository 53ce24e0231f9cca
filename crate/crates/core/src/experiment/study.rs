use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{evaluate_model, ExperimentConfig};
use crate::error::{DymlError, Result};
use crate::evaluator::OverallReport;
use crate::losses::LossKind;
use crate::taxonomy::Dataset;
use crate::trainer::{derive_seed, record_similarity_distributions, EpochDiagnostics, Method, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyName {
    SingleVsMulti,
    Benchmark,
    Conflict,
}

impl StudyName {
    pub fn as_str(self) -> &'static str {
        match self {
            StudyName::SingleVsMulti => "single_vs_multi",
            StudyName::Benchmark => "benchmark",
            StudyName::Conflict => "conflict",
        }
    }
}

impl std::str::FromStr for StudyName {
    type Err = DymlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_vs_multi" => Ok(StudyName::SingleVsMulti),
            "benchmark" => Ok(StudyName::Benchmark),
            "conflict" => Ok(StudyName::Conflict),
            other => Err(DymlError::InvalidConfig(format!("unknown study {other:?}"))),
        }
    }
}

/// One (method, seed) training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub method: Method,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    /// Training diagnostics, starting with the untrained state at epoch 0.
    pub diagnostics: Vec<EpochDiagnostics>,
    /// Held-out similarity tier means after each epoch (all pairs), when
    /// tracked; index 0 is the untrained state.
    pub test_tiers: Vec<Vec<f64>>,
    /// Retrieval on the test split after training.
    pub report: OverallReport,
}

fn run_cell(
    cfg: &ExperimentConfig,
    cell: Cell,
    train: &Dataset,
    test: &Dataset,
    track_tiers: bool,
) -> Result<CellResult> {
    let mut trainer = Trainer::new(train, cell.method, cfg.loss.clone(), cfg.trainer.clone(), cell.seed)?;
    let tiers = |t: &Trainer| -> Result<Vec<f64>> {
        let seed = derive_seed(cell.seed, 200 + t.state().epoch as u64);
        Ok(record_similarity_distributions(&t.state().model, test, 0, seed)?.means)
    };
    let mut diagnostics = vec![trainer.diagnostics(f64::NAN)?];
    let mut test_tiers = Vec::new();
    if track_tiers {
        test_tiers.push(tiers(&trainer)?);
    }
    for _ in 0..cfg.trainer.epochs {
        diagnostics.push(trainer.run_epoch()?);
        if track_tiers {
            test_tiers.push(tiers(&trainer)?);
        }
    }
    let report = evaluate_model(&trainer.state().model, test)?;
    log::info!("{} seed {}: overall R@1 {:.4}", cell.method, cell.seed, report.cmc[0]);
    Ok(CellResult { cell, diagnostics, test_tiers, report })
}

/// Trains and evaluates every cell, `jobs` at a time (0 picks the number
/// of cores). Results come back in cell order whatever the parallelism.
pub fn run_cells(
    cfg: &ExperimentConfig,
    cells: &[Cell],
    train: &Dataset,
    test: &Dataset,
    jobs: usize,
    track_tiers: bool,
) -> Result<Vec<CellResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| DymlError::InvalidConfig(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| cells.par_iter().map(|&c| run_cell(cfg, c, train, test, track_tiers)).collect())
}

/// Median of a nonempty slice; NaN for an empty one.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub name: StudyName,
    pub results: Vec<CellResult>,
    /// One row per cell (or per cell and epoch for the conflict study).
    pub table: String,
    /// Medians over seeds, one row per method.
    pub summary: String,
    pub files: Vec<PathBuf>,
}

fn num(x: f64) -> String {
    format!("{x:.12}")
}

fn cells_for(cfg: &ExperimentConfig, name: StudyName, num_scales: usize) -> Vec<Cell> {
    let methods: Vec<Method> = match name {
        StudyName::SingleVsMulti => {
            let kind = LossKind::Baseline(cfg.study.baseline);
            (0..num_scales).map(|s| Method::single(kind, s)).chain([Method::multi(kind)]).collect()
        }
        StudyName::Benchmark => cfg.study.methods.iter().map(|&k| Method::multi(k)).collect(),
        StudyName::Conflict => cfg.study.conflict_methods.iter().map(|&k| Method::multi(k)).collect(),
    };
    methods.into_iter().flat_map(|method| cfg.experiment.seeds.iter().map(move |&seed| Cell { method, seed })).collect()
}

/// Runs a named study and writes `study-<name>.csv` and
/// `study-<name>-summary.csv` into `out`.
pub fn cmd_study(cfg: &ExperimentConfig, name: StudyName, out: &Path, jobs: usize) -> Result<StudyOutput> {
    cfg.validate()?;
    let (train, test) = cfg.dataset.load()?;
    let m = train.taxonomy().num_scales();
    let cells = cells_for(cfg, name, m);
    for c in &cells {
        c.method.validate(m)?;
    }
    let results = run_cells(cfg, &cells, &train, &test, jobs, name == StudyName::Conflict)?;
    let hash = cfg.hash()?;
    let (table, summary) = match name {
        StudyName::SingleVsMulti => single_vs_multi_tables(&hash, &results, m),
        StudyName::Benchmark => benchmark_tables(&hash, &results),
        StudyName::Conflict => conflict_tables(&hash, &results, m),
    };
    std::fs::create_dir_all(out)?;
    let files = vec![
        out.join(format!("study-{}.csv", name.as_str())),
        out.join(format!("study-{}-summary.csv", name.as_str())),
    ];
    std::fs::write(&files[0], &table)?;
    std::fs::write(&files[1], &summary)?;
    Ok(StudyOutput { name, results, table, summary, files })
}

/// Methods in first-appearance order with their results.
fn by_method(results: &[CellResult]) -> Vec<(Method, Vec<&CellResult>)> {
    let mut groups: Vec<(Method, Vec<&CellResult>)> = Vec::new();
    for r in results {
        match groups.iter_mut().find(|(m, _)| *m == r.cell.method) {
            Some((_, v)) => v.push(r),
            None => groups.push((r.cell.method, vec![r])),
        }
    }
    groups
}

fn single_vs_multi_tables(hash: &str, results: &[CellResult], m: usize) -> (String, String) {
    let cols: String = (0..m).map(|s| format!(",R@1_scale{s}")).collect();
    let mut table = format!("config_hash,method,seed{cols},R@1_overall\n");
    let mut summary = format!("config_hash,method,seeds{cols},R@1_overall\n");
    for r in results {
        let _ = write!(table, "{hash},{},{}", r.cell.method, r.cell.seed);
        for s in &r.report.scales {
            let _ = write!(table, ",{}", num(s.cmc[0]));
        }
        let _ = writeln!(table, ",{}", num(r.report.cmc[0]));
    }
    for (method, rs) in by_method(results) {
        let _ = write!(summary, "{hash},{method},{}", rs.len());
        for s in 0..m {
            let v: Vec<f64> = rs.iter().map(|r| r.report.scales[s].cmc[0]).collect();
            let _ = write!(summary, ",{}", num(median(&v)));
        }
        let v: Vec<f64> = rs.iter().map(|r| r.report.cmc[0]).collect();
        let _ = writeln!(summary, ",{}", num(median(&v)));
    }
    (table, summary)
}

fn benchmark_tables(hash: &str, results: &[CellResult]) -> (String, String) {
    let metrics = |r: &OverallReport| {
        let mut v = vec![r.asi, r.map];
        v.extend(&r.cmc);
        v.extend(r.scales.iter().map(|s| s.cmc[0]));
        v
    };
    let header = |first: &str| {
        let Some(r) = results.first() else { return format!("config_hash,method,{first}\n") };
        let cols: String = r.report.ranks.iter().map(|k| format!(",R@{k}")).collect();
        let scales: String =
            r.report.scales.iter().map(|s| format!(",R@{}_scale{}", r.report.ranks[0], s.scale)).collect();
        format!("config_hash,method,{first},ASI,mAP{cols}{scales}\n")
    };
    let mut table = header("seed");
    let mut summary = header("seeds");
    for r in results {
        let vals: String = metrics(&r.report).into_iter().map(|x| format!(",{}", num(x))).collect();
        let _ = writeln!(table, "{hash},{},{}{vals}", r.cell.method, r.cell.seed);
    }
    for (method, rs) in by_method(results) {
        let all: Vec<Vec<f64>> = rs.iter().map(|r| metrics(&r.report)).collect();
        let vals: String = (0..all[0].len())
            .map(|j| format!(",{}", num(median(&all.iter().map(|v| v[j]).collect::<Vec<_>>()))))
            .collect();
        let _ = writeln!(summary, "{hash},{method},{}{vals}", rs.len());
    }
    (table, summary)
}

fn conflict_tables(hash: &str, results: &[CellResult], m: usize) -> (String, String) {
    let tiers = |prefix: &str| -> String {
        (0..=m).map(|t| if t == m { format!(",{prefix}negative") } else { format!(",{prefix}tier{t}") }).collect()
    };
    let acc: String = (0..m).map(|s| format!(",acc_scale{s}")).collect();
    let mut table = format!("config_hash,method,seed,epoch,loss{acc}{}{}\n", tiers("train_"), tiers("test_"));
    for r in results {
        for (d, test) in r.diagnostics.iter().zip(&r.test_tiers) {
            let _ = write!(table, "{hash},{},{},{},{}", r.cell.method, r.cell.seed, d.epoch, num(d.loss));
            for &a in d.accuracy.iter().chain(&d.tier_means).chain(test) {
                let _ = write!(table, ",{}", num(a));
            }
            table.push('\n');
        }
    }
    let mut summary = format!("config_hash,method,seeds{acc}{}\n", tiers("test_"));
    for (method, rs) in by_method(results) {
        let last = |r: &&CellResult| -> Vec<f64> {
            let d = r.diagnostics.last().map(|d| d.accuracy.clone()).unwrap_or_default();
            d.into_iter().chain(r.test_tiers.last().cloned().unwrap_or_default()).collect()
        };
        let all: Vec<Vec<f64>> = rs.iter().map(last).collect();
        let vals: String = (0..all[0].len())
            .map(|j| format!(",{}", num(median(&all.iter().map(|v| v[j]).collect::<Vec<_>>()))))
            .collect();
        let _ = writeln!(summary, "{hash},{method},{}{vals}", rs.len());
    }
    (table, summary)
}
