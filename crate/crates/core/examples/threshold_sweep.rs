//! Pairwise precision and recall of a single cosine threshold at each
//! scale, before and after training.

use dyml::evaluator::threshold_sweep;
use dyml::experiment::embed_dataset;
use dyml::geometry::EmbeddingModel;
use dyml::losses::{LossConfig, LossKind};
use dyml::taxonomy::{generate_synthetic, SyntheticSpec};
use dyml::trainer::{train, Method, TrainConfig};

fn sweep(label: &str, model: &EmbeddingModel, test: &dyml::taxonomy::Dataset) -> dyml::Result<()> {
    let emb = embed_dataset(model, test)?;
    let chains = test.label_chains();
    let thresholds = [0.0, 0.2, 0.4, 0.6];
    println!("{label}");
    for scale in 0..test.taxonomy().num_scales() {
        for row in threshold_sweep(&emb, &chains, scale, &thresholds)? {
            println!("  scale {scale} t {:.1}: precision {:.3} recall {:.3}", row.threshold, row.precision, row.recall);
        }
    }
    Ok(())
}

fn main() -> dyml::Result<()> {
    let (data, test) = generate_synthetic(&SyntheticSpec::default())?;
    let method = Method::multi(LossKind::CslCls);
    let untrained =
        train(&data, method, &LossConfig::default(), &TrainConfig { epochs: 0, ..TrainConfig::default() }, 0)?.0;
    sweep("untrained", &untrained.model, &test)?;
    let trained = train(&data, method, &LossConfig::default(), &TrainConfig::default(), 0)?.0;
    sweep("trained", &trained.model, &test)?;
    Ok(())
}
