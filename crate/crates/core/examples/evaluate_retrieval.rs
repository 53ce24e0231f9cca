//! Trains briefly, then evaluates multi-scale retrieval on the held-out
//! split: CMC and mAP per scale, their means, and ASI.

use dyml::experiment::evaluate_model;
use dyml::losses::{LossConfig, LossKind};
use dyml::taxonomy::{generate_synthetic, SyntheticSpec};
use dyml::trainer::{train, Method, TrainConfig};

fn main() -> dyml::Result<()> {
    let (data, test) = generate_synthetic(&SyntheticSpec::default())?;
    let config = TrainConfig { epochs: 5, ..TrainConfig::default() };
    let (state, _) = train(&data, Method::multi(LossKind::CslCls), &LossConfig::default(), &config, 0)?;
    let report = evaluate_model(&state.model, &test)?;
    for (i, s) in report.scales.iter().enumerate() {
        println!("scale {i}: R@1 {:.4} R@10 {:.4} mAP {:.4} ({} queries)", s.cmc[0], s.cmc[1], s.map, s.queries);
    }
    println!("overall: R@1 {:.4} mAP {:.4} ASI {:.4}", report.cmc[0], report.map, report.asi);
    Ok(())
}
