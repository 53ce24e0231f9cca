//! Stops training halfway, saves a checkpoint, resumes from it, and checks
//! that the result equals an uninterrupted run.

use dyml::losses::{LossConfig, LossKind};
use dyml::taxonomy::{generate_synthetic, SyntheticSpec};
use dyml::trainer::{read_checkpoint, write_checkpoint, Method, TrainConfig, Trainer};

fn main() -> dyml::Result<()> {
    let (data, _) = generate_synthetic(&SyntheticSpec::default())?;
    let config = TrainConfig { epochs: 4, ..TrainConfig::default() };
    let method = Method::multi(LossKind::CslJoint);

    let mut straight = Trainer::new(&data, method, LossConfig::default(), config.clone(), 9)?;
    straight.run(4)?;

    let mut first = Trainer::new(&data, method, LossConfig::default(), config.clone(), 9)?;
    first.run(2)?;
    let path = std::env::temp_dir().join("dyml-example-checkpoint.dymc");
    write_checkpoint(&mut std::fs::File::create(&path)?, first.state(), "example")?;
    let (state, _) = read_checkpoint(&mut std::fs::File::open(&path)?, data.taxonomy())?;
    let mut resumed = Trainer::resume(&data, LossConfig::default(), config, state)?;
    resumed.run(2)?;

    println!("checkpoint {}", path.display());
    println!("resumed run equals uninterrupted run: {}", resumed.state() == straight.state());
    Ok(())
}
