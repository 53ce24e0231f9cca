//! Baseline losses at a single scale and their multi-scale sum.
//!
//! With `s_k = <x, w_k>` for unit proxies `w_k` and `y` the target class:
//!
//! - softmax (normalized): `-ln softmax(s * s_k)[y]`
//! - cosface: `-ln softmax(s * (s_k - m [k = y]))[y]`
//! - circle (class-level): `ln(1 + sum_{k != y} exp(g a_k (s_k - m) - g a_y (s_y - 1 + m)))`
//!   with `a_k = [s_k + m]_+`, `a_y = [1 + m - s_y]_+`. The weights `a` are
//!   differentiated, not held constant, so the gradient is that of the stated
//!   scalar.
//!
//! Pair losses use in-batch similarities `s_ij = <x_i, x_j>`:
//!
//! - triplet: mean over all valid `(a, p, n)` of `[s_an - s_ap + margin]_+`
//! - npair: mean over positive pairs `(a, p)` of `ln(1 + sum_n exp(s_an - s_ap))`,
//!   plus `reg * mean_i |x_i|^2`
//! - multisim: per anchor, negatives with `s_an + eps > min_p s_ap` and
//!   positives with `s_ap - eps < max_n s_an` are kept, then
//!   `1/alpha ln(1 + sum_p exp(-alpha (s_ap - lambda))) + 1/beta ln(1 + sum_n exp(beta (s_an - lambda)))`
//!
//! Pair losses average over anchors that have an in-batch positive; a batch
//! with none is an `InsufficientPairs` error.

use super::{axpy, check_batch, cross_entropy, softplus_lse, BaselineKind, LossConfig, LossOutput, ProxyKey};
use crate::error::{DymlError, Result};
use crate::geometry::dot;
use crate::proxies::ClassProxies;

pub fn baseline_loss(
    kind: BaselineKind,
    embeddings: &[Vec<f64>],
    labels: &[usize],
    proxies: Option<&ClassProxies>,
    scale: usize,
    config: &LossConfig,
) -> Result<LossOutput> {
    let d = check_batch(embeddings, labels.len())?;
    if kind.uses_proxies() {
        let proxies = proxies
            .ok_or_else(|| DymlError::MissingProxy(format!("{} needs a proxy set at scale {scale}", kind.name())))?;
        if proxies.dim() != d {
            return Err(DymlError::DimensionMismatch { expected: proxies.dim(), got: d });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= proxies.len()) {
            return Err(DymlError::MissingProxy(format!("no proxy for class {l} at scale {scale}")));
        }
        Ok(classification(kind, embeddings, labels, proxies, scale, config))
    } else {
        pairwise(kind, embeddings, labels, config)
    }
}

fn classification(
    kind: BaselineKind,
    embeddings: &[Vec<f64>],
    labels: &[usize],
    proxies: &ClassProxies,
    scale: usize,
    config: &LossConfig,
) -> LossOutput {
    let batch = embeddings.len();
    let inv = 1.0 / batch as f64;
    let mut out = LossOutput::zeros(batch, embeddings[0].len());
    for (b, (e, &y)) in embeddings.iter().zip(labels).enumerate() {
        let sims = proxies.similarities(e);
        let (value, d_sims) = match kind {
            BaselineKind::Softmax => {
                let s = config.softmax_scale;
                let logits: Vec<f64> = sims.iter().map(|&c| s * c).collect();
                let (v, g) = cross_entropy(&logits, y);
                (v, g.into_iter().map(|gk| s * gk).collect::<Vec<_>>())
            }
            BaselineKind::Cosface => {
                let (s, m) = (config.cosface_scale, config.cosface_margin);
                let logits: Vec<f64> =
                    sims.iter().enumerate().map(|(k, &c)| s * if k == y { c - m } else { c }).collect();
                let (v, g) = cross_entropy(&logits, y);
                (v, g.into_iter().map(|gk| s * gk).collect())
            }
            BaselineKind::Circle => circle_terms(&sims, y, config.circle_gamma, config.circle_margin),
            _ => unreachable!("pair kinds are handled elsewhere"),
        };
        out.value += inv * value;
        for (k, &dk) in d_sims.iter().enumerate() {
            if dk == 0.0 {
                continue;
            }
            axpy(&mut out.grad_embeddings[b], inv * dk, proxies.get(k));
            out.add_proxy_grad(ProxyKey { scale, class: k }, inv * dk, e);
        }
    }
    out
}

fn circle_terms(sims: &[f64], y: usize, gamma: f64, m: f64) -> (f64, Vec<f64>) {
    let sp = sims[y];
    // -g [1 + m - sp]_+ (sp - 1 + m) = g ((sp - 1)^2 - m^2) while active
    let (pos_arg, d_pos_arg) =
        if 1.0 + m - sp > 0.0 { (gamma * ((sp - 1.0).powi(2) - m * m), 2.0 * gamma * (sp - 1.0)) } else { (0.0, 0.0) };
    let mut ids = Vec::with_capacity(sims.len());
    let mut args = Vec::with_capacity(sims.len());
    let mut d_args = Vec::with_capacity(sims.len());
    for (k, &sn) in sims.iter().enumerate() {
        if k == y {
            continue;
        }
        // g [sn + m]_+ (sn - m) = g (sn^2 - m^2) while active
        let (a, da) = if sn + m > 0.0 { (gamma * (sn * sn - m * m), 2.0 * gamma * sn) } else { (0.0, 0.0) };
        ids.push(k);
        args.push(a + pos_arg);
        d_args.push(da);
    }
    let (value, w) = softplus_lse(&args);
    let mut grad = vec![0.0; sims.len()];
    for ((&k, &wk), &da) in ids.iter().zip(&w).zip(&d_args) {
        grad[k] = wk * da;
        grad[y] += wk * d_pos_arg;
    }
    (value, grad)
}

fn pairwise(kind: BaselineKind, embeddings: &[Vec<f64>], labels: &[usize], config: &LossConfig) -> Result<LossOutput> {
    let batch = embeddings.len();
    let sims: Vec<Vec<f64>> = embeddings.iter().map(|a| embeddings.iter().map(|b| dot(a, b)).collect()).collect();
    let positives: Vec<Vec<usize>> =
        (0..batch).map(|a| (0..batch).filter(|&j| j != a && labels[j] == labels[a]).collect()).collect();
    let negatives: Vec<Vec<usize>> =
        (0..batch).map(|a| (0..batch).filter(|&j| labels[j] != labels[a]).collect()).collect();
    let anchors: Vec<usize> = (0..batch).filter(|&a| !positives[a].is_empty()).collect();
    if anchors.is_empty() {
        return Err(DymlError::InsufficientPairs(format!("{}: no anchor has an in-batch positive", kind.name())));
    }

    // d loss / d s_ij, accumulated as (i, j, coefficient)
    let mut d_pairs: Vec<(usize, usize, f64)> = Vec::new();
    let mut value = 0.0;
    match kind {
        BaselineKind::Triplet => {
            let count: usize = anchors.iter().map(|&a| positives[a].len() * negatives[a].len()).sum();
            if count > 0 {
                let inv = 1.0 / count as f64;
                for &a in &anchors {
                    for &p in &positives[a] {
                        for &n in &negatives[a] {
                            let h = sims[a][n] - sims[a][p] + config.triplet_margin;
                            if h > 0.0 {
                                value += inv * h;
                                d_pairs.push((a, n, inv));
                                d_pairs.push((a, p, -inv));
                            }
                        }
                    }
                }
            }
        }
        BaselineKind::Npair => {
            let count: usize = anchors.iter().map(|&a| positives[a].len()).sum();
            let inv = 1.0 / count as f64;
            for &a in &anchors {
                for &p in &positives[a] {
                    let args: Vec<f64> = negatives[a].iter().map(|&n| sims[a][n] - sims[a][p]).collect();
                    let (v, w) = softplus_lse(&args);
                    value += inv * v;
                    for (&n, &wn) in negatives[a].iter().zip(&w) {
                        d_pairs.push((a, n, inv * wn));
                        d_pairs.push((a, p, -inv * wn));
                    }
                }
            }
        }
        BaselineKind::Multisim => {
            let (alpha, beta, lambda, eps) = (config.ms_alpha, config.ms_beta, config.ms_lambda, config.ms_epsilon);
            let inv = 1.0 / anchors.len() as f64;
            for &a in &anchors {
                if negatives[a].is_empty() {
                    continue;
                }
                let min_pos = positives[a].iter().map(|&p| sims[a][p]).fold(f64::INFINITY, f64::min);
                let max_neg = negatives[a].iter().map(|&n| sims[a][n]).fold(f64::NEG_INFINITY, f64::max);
                let kept_neg: Vec<usize> =
                    negatives[a].iter().copied().filter(|&n| sims[a][n] + eps > min_pos).collect();
                let kept_pos: Vec<usize> =
                    positives[a].iter().copied().filter(|&p| sims[a][p] - eps < max_neg).collect();
                if kept_neg.is_empty() || kept_pos.is_empty() {
                    continue;
                }
                let pos_args: Vec<f64> = kept_pos.iter().map(|&p| -alpha * (sims[a][p] - lambda)).collect();
                let (vp, wp) = softplus_lse(&pos_args);
                let neg_args: Vec<f64> = kept_neg.iter().map(|&n| beta * (sims[a][n] - lambda)).collect();
                let (vn, wn) = softplus_lse(&neg_args);
                value += inv * (vp / alpha + vn / beta);
                // d/ds of (1/alpha) ln(1 + sum exp(-alpha (s - lambda))) = -w
                for (&p, &w) in kept_pos.iter().zip(&wp) {
                    d_pairs.push((a, p, -inv * w));
                }
                for (&n, &w) in kept_neg.iter().zip(&wn) {
                    d_pairs.push((a, n, inv * w));
                }
            }
        }
        _ => unreachable!("classification kinds are handled elsewhere"),
    }

    let mut out = LossOutput::zeros(batch, embeddings[0].len());
    out.skipped_anchors = batch - anchors.len();
    for (i, j, c) in d_pairs {
        axpy(&mut out.grad_embeddings[i], c, &embeddings[j]);
        axpy(&mut out.grad_embeddings[j], c, &embeddings[i]);
    }
    if kind == BaselineKind::Npair && config.npair_reg > 0.0 {
        let inv = 1.0 / batch as f64;
        for (e, g) in embeddings.iter().zip(&mut out.grad_embeddings) {
            value += config.npair_reg * inv * dot(e, e);
            axpy(g, 2.0 * config.npair_reg * inv, e);
        }
    }
    out.value = value;
    Ok(out)
}

/// Unweighted sum of `baseline_loss` over every scale. `scale_proxies[i]` is
/// the independent proxy set of scale `i` (ignored by pair kinds, which may
/// pass an empty slice).
pub fn multi_scale_sum(
    kind: BaselineKind,
    embeddings: &[Vec<f64>],
    chains: &[Vec<usize>],
    scale_proxies: &[ClassProxies],
    config: &LossConfig,
) -> Result<LossOutput> {
    let d = check_batch(embeddings, chains.len())?;
    let m = chains[0].len();
    if chains.iter().any(|c| c.len() != m) {
        return Err(DymlError::NestingViolation("label chains of unequal length".into()));
    }
    if kind.uses_proxies() && scale_proxies.len() != m {
        return Err(DymlError::MissingProxy(format!("{} proxy sets for {m} scales", scale_proxies.len())));
    }
    let mut out = LossOutput::zeros(embeddings.len(), d);
    for scale in 0..m {
        let labels: Vec<usize> = chains.iter().map(|c| c[scale]).collect();
        let proxies = scale_proxies.get(scale);
        let part = baseline_loss(kind, embeddings, &labels, proxies, scale, config)?;
        out.accumulate(&part, 1.0);
    }
    Ok(out)
}
