//! Trains a baseline on each single scale and on all scales at once, then
//! compares per-scale and overall R@1 on the held-out split.

use dyml::experiment::{cmd_study, ExperimentConfig, StudyName};

fn main() -> dyml::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.seeds = vec![0, 1, 2];
    let out = std::env::temp_dir().join("dyml-example-single-vs-multi");
    let study = cmd_study(&cfg, StudyName::SingleVsMulti, &out, 0)?;
    print!("{}", study.summary);
    Ok(())
}
