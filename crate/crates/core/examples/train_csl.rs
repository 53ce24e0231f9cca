//! Trains the cross-scale classification loss on the synthetic benchmark
//! and prints the per-epoch diagnostics.

use dyml::losses::{LossConfig, LossKind};
use dyml::taxonomy::{generate_synthetic, SyntheticSpec};
use dyml::trainer::{train, EpochDiagnostics, Method, TrainConfig};

fn main() -> dyml::Result<()> {
    let (data, _) = generate_synthetic(&SyntheticSpec::default())?;
    let config = TrainConfig { epochs: 10, ..TrainConfig::default() };
    let (state, diags) = train(&data, Method::multi(LossKind::CslCls), &LossConfig::default(), &config, 0)?;
    println!("{}", EpochDiagnostics::csv_header(data.taxonomy().num_scales()));
    for d in &diags {
        println!("{}", d.csv_row());
    }
    println!("finished at epoch {} after {} steps", state.epoch, state.step);
    Ok(())
}
