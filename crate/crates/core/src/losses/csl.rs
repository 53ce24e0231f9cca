//! Cross-scale loss.
//!
//! For an anchor with fine-scale positive similarity `s_p` and, at each scale
//! `i`, negative similarities `s_{n,k}`:
//!
//! ```text
//! L = sum_i ln(1 + sum_k exp(alpha * (s_{n,k} - s_p + m_i)))
//! ```
//!
//! The fine-scale positive is the only reference; coarser scales contribute
//! negatives only, with wider margins. In the classification form the
//! negatives are the non-ancestor classes at each scale, each represented by
//! its hardest fine proxy. In the pair form they are the in-batch samples
//! that are negatives at that scale, and `s_p` is the hardest in-batch fine
//! positive.

use super::{axpy, check_batch, softplus_lse, LossConfig, LossOutput, ProxyKey};
use crate::error::{DymlError, Result};
use crate::geometry::dot;
use crate::proxies::{subtree_max, ProxyBank};

/// Scalar form of the loss with derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct CslTerms {
    pub value: f64,
    pub d_positive: f64,
    /// `d_negatives[i][k]` is the derivative w.r.t. `negatives[i][k]`.
    pub d_negatives: Vec<Vec<f64>>,
}

/// Evaluates the loss of one anchor from raw similarities. `negatives[i]`
/// holds the negative similarities at scale `i`; empty scales contribute 0.
pub fn csl_terms(positive: f64, negatives: &[Vec<f64>], alpha: f64, margins: &[f64]) -> CslTerms {
    let mut value = 0.0;
    let mut d_positive = 0.0;
    let d_negatives = negatives
        .iter()
        .zip(margins)
        .map(|(negs, &m)| {
            let args: Vec<f64> = negs.iter().map(|&s| alpha * (s - positive + m)).collect();
            let (v, w) = softplus_lse(&args);
            value += v;
            w.iter()
                .map(|wk| {
                    d_positive -= alpha * wk;
                    alpha * wk
                })
                .collect()
        })
        .collect();
    CslTerms { value, d_positive, d_negatives }
}

/// Classification form over the shared proxy bank.
pub fn csl_cls(
    embeddings: &[Vec<f64>],
    chains: &[Vec<usize>],
    bank: &ProxyBank,
    config: &LossConfig,
) -> Result<LossOutput> {
    let d = check_batch(embeddings, chains.len())?;
    let t = bank.taxonomy();
    let margins = config.margins_for(t.num_scales())?;
    if d != bank.dim() {
        return Err(DymlError::DimensionMismatch { expected: bank.dim(), got: d });
    }
    for chain in chains {
        if chain.first().is_some_and(|&f| f >= t.num_fine()) {
            return Err(DymlError::MissingProxy(format!("no proxy for fine class {}", chain[0])));
        }
        t.validate_chain(chain)?;
    }
    let proxies = bank.proxies();
    let batch = embeddings.len();
    let inv = 1.0 / batch as f64;
    let mut out = LossOutput::zeros(batch, d);

    for (b, (e, chain)) in embeddings.iter().zip(chains).enumerate() {
        let sims = proxies.similarities(e);
        let own = chain[0];
        let positive = sims[own];
        // (scale, chosen fine proxy) for every negative term
        let mut picks: Vec<Vec<usize>> = Vec::with_capacity(t.num_scales());
        let mut negatives: Vec<Vec<f64>> = Vec::with_capacity(t.num_scales());
        for (scale, &ancestor) in chain.iter().enumerate() {
            let (ids, vals): (Vec<usize>, Vec<f64>) = bank
                .subtrees(scale)
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != ancestor)
                .map(|(_, members)| subtree_max(&sims, members))
                .unzip();
            picks.push(ids);
            negatives.push(vals);
        }
        let terms = csl_terms(positive, &negatives, config.alpha, margins.as_slice());
        out.value += inv * terms.value;

        let grad_e = &mut out.grad_embeddings[b];
        axpy(grad_e, inv * terms.d_positive, proxies.get(own));
        for (ids, ds) in picks.iter().zip(&terms.d_negatives) {
            for (&proxy, &dn) in ids.iter().zip(ds) {
                axpy(grad_e, inv * dn, proxies.get(proxy));
            }
        }
        out.add_proxy_grad(ProxyKey { scale: 0, class: own }, inv * terms.d_positive, e);
        for (ids, ds) in picks.iter().zip(&terms.d_negatives) {
            for (&proxy, &dn) in ids.iter().zip(ds) {
                out.add_proxy_grad(ProxyKey { scale: 0, class: proxy }, inv * dn, e);
            }
        }
    }
    Ok(out)
}

/// Pair form over in-batch samples. Anchors without an in-batch fine
/// positive are skipped and counted.
pub fn csl_pair(embeddings: &[Vec<f64>], chains: &[Vec<usize>], config: &LossConfig) -> Result<LossOutput> {
    let d = check_batch(embeddings, chains.len())?;
    let m = chains[0].len();
    if chains.iter().any(|c| c.len() != m) {
        return Err(DymlError::NestingViolation("label chains of unequal length".into()));
    }
    let margins = config.margins_for(m)?;
    let batch = embeddings.len();
    let sims: Vec<Vec<f64>> = embeddings.iter().map(|a| embeddings.iter().map(|b| dot(a, b)).collect()).collect();

    // (anchor, hardest positive, per-scale negative ids, terms)
    let mut contributions = Vec::new();
    let mut skipped = 0;
    for a in 0..batch {
        let hardest =
            (0..batch).filter(|&j| j != a && chains[j][0] == chains[a][0]).fold(None::<(usize, f64)>, |best, j| {
                match best {
                    Some((_, s)) if s <= sims[a][j] => best,
                    _ => Some((j, sims[a][j])),
                }
            });
        let Some((pos, positive)) = hardest else {
            skipped += 1;
            continue;
        };
        let ids: Vec<Vec<usize>> =
            (0..m).map(|i| (0..batch).filter(|&j| chains[j][i] != chains[a][i]).collect()).collect();
        let negatives: Vec<Vec<f64>> = ids.iter().map(|js| js.iter().map(|&j| sims[a][j]).collect()).collect();
        let terms = csl_terms(positive, &negatives, config.alpha, margins.as_slice());
        contributions.push((a, pos, ids, terms));
    }

    let mut out = LossOutput::zeros(batch, d);
    out.skipped_anchors = skipped;
    if contributions.is_empty() {
        return Ok(out);
    }
    let inv = 1.0 / contributions.len() as f64;
    for (a, pos, ids, terms) in &contributions {
        out.value += inv * terms.value;
        let g = inv * terms.d_positive;
        axpy(&mut out.grad_embeddings[*a], g, &embeddings[*pos]);
        axpy(&mut out.grad_embeddings[*pos], g, &embeddings[*a]);
        for (js, ds) in ids.iter().zip(&terms.d_negatives) {
            for (&j, &dn) in js.iter().zip(ds) {
                let g = inv * dn;
                axpy(&mut out.grad_embeddings[*a], g, &embeddings[j]);
                axpy(&mut out.grad_embeddings[j], g, &embeddings[*a]);
            }
        }
    }
    Ok(out)
}

/// `csl_cls + pair_weight * csl_pair`.
pub fn csl_joint(
    embeddings: &[Vec<f64>],
    chains: &[Vec<usize>],
    bank: &ProxyBank,
    config: &LossConfig,
) -> Result<LossOutput> {
    let mut out = csl_cls(embeddings, chains, bank, config)?;
    if config.pair_weight != 0.0 {
        let pair = csl_pair(embeddings, chains, config)?;
        out.accumulate(&pair, config.pair_weight);
    }
    Ok(out)
}
