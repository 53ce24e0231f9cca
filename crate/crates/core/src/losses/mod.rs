//! Metric-learning objectives with analytic gradients.
//!
//! Every loss consumes a batch of embeddings that are expected to be unit
//! norm and computes similarities as plain dot products, so the returned
//! gradients are exact derivatives of the scalar with respect to the raw
//! embedding and proxy entries. Projection back to the sphere is the
//! caller's business (the embedding network's normalization Jacobian, or
//! proxy renormalization after a step).
//!
//! Batch reduction is the arithmetic mean over contributing anchors.

mod baselines;
mod csl;

pub use baselines::{baseline_loss, multi_scale_sum};
pub use csl::{csl_cls, csl_joint, csl_pair, csl_terms, CslTerms};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DymlError, Result};

/// Per-scale similarity margins, strictly increasing from fine to coarse.
#[derive(Debug, Clone, PartialEq)]
pub struct Margins(Vec<f64>);

impl Margins {
    pub fn new(m: Vec<f64>) -> Result<Self> {
        if m.is_empty() {
            return Err(DymlError::MarginOrderViolation("no margins given".into()));
        }
        if m.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(DymlError::MarginOrderViolation(format!("margins {m:?} must be finite and nonnegative")));
        }
        if m.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DymlError::MarginOrderViolation(format!("margins {m:?} are not strictly increasing")));
        }
        Ok(Self(m))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Loss hyperparameters.
///
/// Baseline defaults follow the original publications: CosFace `s = 64,
/// m = 0.35`; Circle loss `gamma = 256, m = 0.25` (classification setting);
/// Multi-Similarity `alpha = 2, beta = 50, lambda = 1, epsilon = 0.1`; the
/// normalized softmax uses temperature `0.05` (scale 20); triplet margin
/// `0.2`; N-pair L2 weight `0.002`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Scaling factor of the cross-scale loss.
    pub alpha: f64,
    /// Cross-scale margins, finest first.
    pub margins: Vec<f64>,
    /// Weight of the pair term in the joint cross-scale loss.
    pub pair_weight: f64,
    pub softmax_scale: f64,
    pub cosface_scale: f64,
    pub cosface_margin: f64,
    pub circle_gamma: f64,
    pub circle_margin: f64,
    pub triplet_margin: f64,
    pub npair_reg: f64,
    pub ms_alpha: f64,
    pub ms_beta: f64,
    pub ms_lambda: f64,
    pub ms_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 32.0,
            margins: vec![0.1, 0.2, 0.3],
            pair_weight: 0.05,
            softmax_scale: 20.0,
            cosface_scale: 64.0,
            cosface_margin: 0.35,
            circle_gamma: 256.0,
            circle_margin: 0.25,
            triplet_margin: 0.2,
            npair_reg: 0.002,
            ms_alpha: 2.0,
            ms_beta: 50.0,
            ms_lambda: 1.0,
            ms_epsilon: 0.1,
        }
    }
}

impl LossConfig {
    /// Margins validated against the number of scales.
    pub fn margins_for(&self, num_scales: usize) -> Result<Margins> {
        let m = Margins::new(self.margins.clone())?;
        if m.len() != num_scales {
            return Err(DymlError::MarginOrderViolation(format!("{} margins for {num_scales} scales", m.len())));
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("softmax_scale", self.softmax_scale),
            ("cosface_scale", self.cosface_scale),
            ("circle_gamma", self.circle_gamma),
            ("ms_alpha", self.ms_alpha),
            ("ms_beta", self.ms_beta),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(DymlError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("pair_weight", self.pair_weight),
            ("cosface_margin", self.cosface_margin),
            ("circle_margin", self.circle_margin),
            ("triplet_margin", self.triplet_margin),
            ("npair_reg", self.npair_reg),
            ("ms_epsilon", self.ms_epsilon),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DymlError::InvalidConfig(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !self.ms_lambda.is_finite() {
            return Err(DymlError::InvalidConfig("ms_lambda must be finite".into()));
        }
        Margins::new(self.margins.clone())?;
        Ok(())
    }
}

/// Identifies one proxy: the class id within the proxy set of `scale`.
/// Shared-proxy losses only use scale `0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProxyKey {
    pub scale: usize,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_embeddings: Vec<Vec<f64>>,
    pub grad_proxies: BTreeMap<ProxyKey, Vec<f64>>,
    /// Anchors that could not contribute (no in-batch positive).
    pub skipped_anchors: usize,
}

impl LossOutput {
    pub fn zeros(batch: usize, dim: usize) -> Self {
        Self {
            value: 0.0,
            grad_embeddings: vec![vec![0.0; dim]; batch],
            grad_proxies: BTreeMap::new(),
            skipped_anchors: 0,
        }
    }

    /// `self += weight * other`.
    pub fn accumulate(&mut self, other: &LossOutput, weight: f64) {
        self.value += weight * other.value;
        for (mine, theirs) in self.grad_embeddings.iter_mut().zip(&other.grad_embeddings) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += weight * b;
            }
        }
        for (key, g) in &other.grad_proxies {
            let slot = self.grad_proxies.entry(*key).or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in slot.iter_mut().zip(g) {
                *a += weight * b;
            }
        }
        self.skipped_anchors += other.skipped_anchors;
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad_embeddings.iter().flatten().all(|x| x.is_finite())
            && self.grad_proxies.values().flatten().all(|x| x.is_finite())
    }

    /// Proxy gradients of one scale, keyed by class id.
    pub fn proxy_grads_at(&self, scale: usize) -> BTreeMap<usize, Vec<f64>> {
        self.grad_proxies.iter().filter(|(k, _)| k.scale == scale).map(|(k, g)| (k.class, g.clone())).collect()
    }

    pub(crate) fn add_proxy_grad(&mut self, key: ProxyKey, coef: f64, v: &[f64]) {
        let slot = self.grad_proxies.entry(key).or_insert_with(|| vec![0.0; v.len()]);
        axpy(slot, coef, v);
    }
}

/// `y += a * x`
#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `ln(1 + sum_k exp(args_k))` in shifted form, plus its partial derivatives
/// `exp(args_k) / (1 + sum exp)`.
pub(crate) fn softplus_lse(args: &[f64]) -> (f64, Vec<f64>) {
    if args.is_empty() {
        return (0.0, Vec::new());
    }
    let shift = args.iter().copied().fold(0.0f64, f64::max);
    let sum: f64 = args.iter().map(|&a| (a - shift).exp()).sum();
    let value = if shift == 0.0 { sum.ln_1p() } else { shift + ((-shift).exp() + sum).ln() };
    let weights = args.iter().map(|&a| (a - value).exp()).collect();
    (value, weights)
}

/// Cross-entropy `-ln softmax(logits)[target]` and its gradient.
pub(crate) fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let shift = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|&z| (z - shift).exp()).sum();
    let lse = shift + total.ln();
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - lse).exp()).collect();
    grad[target] -= 1.0;
    (lse - logits[target], grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Softmax,
    Cosface,
    Circle,
    Triplet,
    Npair,
    Multisim,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::Softmax,
        BaselineKind::Cosface,
        BaselineKind::Circle,
        BaselineKind::Triplet,
        BaselineKind::Npair,
        BaselineKind::Multisim,
    ];

    /// Classification kinds train one proxy per class.
    pub fn uses_proxies(self) -> bool {
        matches!(self, BaselineKind::Softmax | BaselineKind::Cosface | BaselineKind::Circle)
    }

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Softmax => "softmax",
            BaselineKind::Cosface => "cosface",
            BaselineKind::Circle => "circle",
            BaselineKind::Triplet => "triplet",
            BaselineKind::Npair => "npair",
            BaselineKind::Multisim => "multisim",
        }
    }
}

/// Every trainable objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossKind {
    /// A baseline summed over all scales (or applied at one scale in
    /// single-scale mode).
    Baseline(BaselineKind),
    CslCls,
    CslPair,
    CslJoint,
}

impl LossKind {
    /// The seven methods of the benchmark study.
    pub const BENCHMARK: [LossKind; 7] = [
        LossKind::Baseline(BaselineKind::Triplet),
        LossKind::Baseline(BaselineKind::Npair),
        LossKind::Baseline(BaselineKind::Multisim),
        LossKind::Baseline(BaselineKind::Softmax),
        LossKind::Baseline(BaselineKind::Cosface),
        LossKind::Baseline(BaselineKind::Circle),
        LossKind::CslCls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Baseline(b) => b.name(),
            LossKind::CslCls => "csl_cls",
            LossKind::CslPair => "csl_pair",
            LossKind::CslJoint => "csl_joint",
        }
    }

    pub fn uses_shared_proxies(self) -> bool {
        matches!(self, LossKind::CslCls | LossKind::CslJoint)
    }

    pub fn uses_scale_proxies(self) -> bool {
        matches!(self, LossKind::Baseline(b) if b.uses_proxies())
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = DymlError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "csl_cls" | "csl" => LossKind::CslCls,
            "csl_pair" => LossKind::CslPair,
            "csl_joint" => LossKind::CslJoint,
            other => LossKind::Baseline(
                BaselineKind::ALL
                    .into_iter()
                    .find(|b| b.name() == other)
                    .ok_or_else(|| DymlError::InvalidConfig(format!("unknown loss kind {other:?}")))?,
            ),
        })
    }
}

impl Serialize for LossKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for LossKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub(crate) fn check_batch(embeddings: &[Vec<f64>], labels_len: usize) -> Result<usize> {
    if embeddings.is_empty() {
        return Err(DymlError::EmptyBatch);
    }
    if labels_len != embeddings.len() {
        return Err(DymlError::DimensionMismatch { expected: embeddings.len(), got: labels_len });
    }
    let d = embeddings[0].len();
    for e in embeddings {
        if e.len() != d {
            return Err(DymlError::DimensionMismatch { expected: d, got: e.len() });
        }
    }
    Ok(d)
}
