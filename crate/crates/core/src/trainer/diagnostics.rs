use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainState;
use crate::error::{DymlError, Result};
use crate::geometry::{dot, embed_all, Embedding, EmbeddingModel};
use crate::taxonomy::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDiagnostics {
    pub epoch: usize,
    /// Training classification accuracy per scale, in percent.
    pub accuracy: Vec<f64>,
    /// Mean cosine per similarity tier: tier `i < M` holds pairs that first
    /// share a label at scale `i`; tier `M` holds pairs sharing nothing.
    pub tier_means: Vec<f64>,
    /// Loss on the fixed probe batches.
    pub loss: f64,
    /// Mean batch loss over the epoch's steps.
    pub mean_batch_loss: f64,
}

impl EpochDiagnostics {
    pub fn csv_header(num_scales: usize) -> String {
        let mut cols = vec!["epoch".to_string(), "loss".into(), "mean_batch_loss".into()];
        cols.extend((0..num_scales).map(|i| format!("acc_scale{i}")));
        cols.extend((0..num_scales).map(|i| format!("tier{i}_mean")));
        cols.push("negative_mean".into());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.epoch.to_string(), fmt(self.loss), fmt(self.mean_batch_loss)];
        cols.extend(self.accuracy.iter().map(|&a| fmt(a)));
        cols.extend(self.tier_means.iter().map(|&a| fmt(a)));
        cols.join(",")
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.12}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TierMeans {
    pub means: Vec<f64>,
    /// Pairs available per tier.
    pub available: Vec<usize>,
}

/// Tier of a pair: the finest scale at which the two chains agree, or `M`.
pub fn pair_tier(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).position(|(x, y)| x == y).unwrap_or(a.len())
}

/// Mean cosine per similarity tier over `sample_count` random pairs per tier
/// (drawn with replacement). When a tier has at most `sample_count` pairs,
/// or `sample_count` is 0, every pair is used.
pub fn record_similarity_distributions(
    model: &EmbeddingModel,
    dataset: &Dataset,
    sample_count: usize,
    seed: u64,
) -> Result<TierMeans> {
    let features: Vec<Vec<f64>> = dataset.samples().iter().map(|s| s.features.clone()).collect();
    let embeddings = embed_all(model, &features)?;
    tier_means_of(&embeddings, &dataset.label_chains(), sample_count, seed)
}

pub fn tier_means_of(
    embeddings: &[Embedding],
    chains: &[Vec<usize>],
    sample_count: usize,
    seed: u64,
) -> Result<TierMeans> {
    let m = chains.first().map_or(0, Vec::len);
    let mut tiers: Vec<Vec<(u32, u32)>> = vec![Vec::new(); m + 1];
    for i in 0..chains.len() {
        for j in i + 1..chains.len() {
            tiers[pair_tier(&chains[i], &chains[j])].push((i as u32, j as u32));
        }
    }
    if let Some(t) = tiers.iter().position(Vec::is_empty) {
        return Err(DymlError::InsufficientPairs(format!("similarity tier {t} has no pairs")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sim = |&(i, j): &(u32, u32)| dot(embeddings[i as usize].as_slice(), embeddings[j as usize].as_slice());
    let means = tiers
        .iter()
        .map(|pairs| {
            if sample_count == 0 || pairs.len() <= sample_count {
                pairs.iter().map(sim).sum::<f64>() / pairs.len() as f64
            } else {
                (0..sample_count).map(|_| sim(&pairs[rng.random_range(0..pairs.len())])).sum::<f64>()
                    / sample_count as f64
            }
        })
        .collect();
    Ok(TierMeans { means, available: tiers.iter().map(Vec::len).collect() })
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Training classification accuracy per scale, in percent.
///
/// Scales covered by trained proxies are classified by those proxies (for a
/// shared bank: the ancestor of the closest fine proxy). Other scales fall
/// back to the nearest normalized class mean of the embeddings.
pub fn classification_accuracy(state: &TrainState, dataset: &Dataset) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(DymlError::EmptyDataset);
    }
    let t = dataset.taxonomy();
    let features: Vec<Vec<f64>> = dataset.samples().iter().map(|s| s.features.clone()).collect();
    let embeddings = embed_all(&state.model, &features)?;
    let n = dataset.len() as f64;
    (0..t.num_scales())
        .map(|scale| {
            let predict: Box<dyn Fn(&Embedding) -> usize> = if let Some(bank) = state.bank() {
                Box::new(move |e| t.ancestor(argmax(bank.proxies().similarities(e.as_slice()).into_iter()), scale))
            } else if let Some(ps) = state.scale_proxies.get(&scale) {
                Box::new(move |e| argmax(ps.proxies.similarities(e.as_slice()).into_iter()))
            } else {
                let mut means = vec![vec![0.0; state.model.d_out()]; t.num_classes(scale)];
                for (e, s) in embeddings.iter().zip(dataset.samples()) {
                    for (m, x) in means[s.label_chain[scale]].iter_mut().zip(e.as_slice()) {
                        *m += x;
                    }
                }
                Box::new(move |e| argmax(means.iter().map(|m| dot(m, e.as_slice()) / dot(m, m).sqrt())))
            };
            let hits =
                embeddings.iter().zip(dataset.samples()).filter(|(e, s)| predict(e) == s.label_chain[scale]).count();
            Ok(100.0 * hits as f64 / n)
        })
        .collect()
}
