//! Median retrieval metrics of several losses over a few seeds.

use dyml::experiment::{cmd_study, ExperimentConfig, StudyName};
use dyml::losses::{BaselineKind, LossKind};

fn main() -> dyml::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.seeds = vec![0, 1, 2];
    cfg.study.methods = vec![
        LossKind::Baseline(BaselineKind::Cosface),
        LossKind::Baseline(BaselineKind::Multisim),
        LossKind::CslCls,
        LossKind::CslPair,
        LossKind::CslJoint,
    ];
    let out = std::env::temp_dir().join("dyml-example-benchmark");
    let study = cmd_study(&cfg, StudyName::Benchmark, &out, 0)?;
    print!("{}", study.summary);
    println!("written to {}", out.display());
    Ok(())
}
