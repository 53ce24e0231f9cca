//! Training loop: nested batch sampling, SGD with momentum and cosine decay,
//! proxy renormalization, per-epoch diagnostics and checkpoints.

mod checkpoint;
mod diagnostics;
mod optim;
mod sampler;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use diagnostics::{classification_accuracy, record_similarity_distributions, EpochDiagnostics, TierMeans};
pub use optim::{cosine_lr, SgdMomentum};
pub use sampler::{sample_batch, HierarchicalSampler, SamplerSpec};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DymlError, Result};
use crate::geometry::{EmbeddingModel, ForwardPass};
use crate::losses::{baseline_loss, csl_cls, csl_joint, csl_pair, multi_scale_sum, LossConfig, LossKind, LossOutput};
use crate::proxies::{init_proxies, ClassProxies, ProxyBank};
use crate::taxonomy::Dataset;

/// Trainer hyperparameters. Defaults are desk-scale choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Embedding dimension.
    pub embed_dim: usize,
    /// Width of the hidden ReLU layer; 0 for a linear map.
    pub hidden: usize,
    pub bias: bool,
    pub lr_model: f64,
    pub lr_proxy: f64,
    pub momentum: f64,
    pub cosine_decay: bool,
    /// 0 means one pass worth of samples: `ceil(N / batch_size)`.
    pub steps_per_epoch: usize,
    pub sampler: SamplerSpec,
    /// Pairs drawn per similarity tier for diagnostics.
    pub diag_pairs: usize,
    /// Fixed batches on which the diagnostic loss is measured.
    pub probe_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            embed_dim: 128,
            hidden: 0,
            bias: false,
            lr_model: 0.01,
            lr_proxy: 0.05,
            momentum: 0.9,
            cosine_decay: true,
            steps_per_epoch: 0,
            sampler: SamplerSpec::default(),
            diag_pairs: 2000,
            probe_batches: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(DymlError::InvalidConfig("embed_dim must be at least 2".into()));
        }
        for (name, v) in [("lr_model", self.lr_model), ("lr_proxy", self.lr_proxy)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DymlError::InvalidConfig(format!("{name} must be nonnegative")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(DymlError::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        self.sampler.validate()
    }

    pub fn steps_per_epoch(&self, dataset_len: usize) -> usize {
        if self.steps_per_epoch > 0 {
            self.steps_per_epoch
        } else {
            dataset_len.div_ceil(self.sampler.batch_size()).max(1)
        }
    }
}

/// What is optimized: a loss kind, optionally restricted to one scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Method {
    pub kind: LossKind,
    /// Single-scale mode: train a baseline with the labels of this scale
    /// only.
    pub scale: Option<usize>,
}

impl Method {
    pub fn multi(kind: LossKind) -> Self {
        Self { kind, scale: None }
    }

    pub fn single(kind: LossKind, scale: usize) -> Self {
        Self { kind, scale: Some(scale) }
    }

    pub fn validate(&self, num_scales: usize) -> Result<()> {
        match (self.kind, self.scale) {
            (LossKind::Baseline(_), Some(s)) if s >= num_scales => {
                Err(DymlError::InvalidConfig(format!("scale {s} out of range for {num_scales} scales")))
            }
            (LossKind::Baseline(_), _) | (_, None) => Ok(()),
            (k, Some(_)) => Err(DymlError::InvalidConfig(format!("{k} has no single-scale mode"))),
        }
    }

    fn trained_scales(&self, num_scales: usize) -> Vec<usize> {
        match self.scale {
            Some(s) => vec![s],
            None => (0..num_scales).collect(),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.scale {
            None => write!(f, "{}", self.kind),
            Some(s) => write!(f, "{}@{s}", self.kind),
        }
    }
}

/// A proxy set with its momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyState {
    pub proxies: ClassProxies,
    pub velocity: Vec<Vec<f64>>,
}

impl ProxyState {
    pub fn new(proxies: ClassProxies) -> Self {
        let velocity = vec![vec![0.0; proxies.dim()]; proxies.len()];
        Self { proxies, velocity }
    }

    fn step(&mut self, grads: &BTreeMap<usize, Vec<f64>>, lr: f64, momentum: f64) -> Result<()> {
        proxy_step(&mut self.proxies, &mut self.velocity, grads, lr, momentum)
    }
}

/// Momentum step on a proxy set followed by renormalization of every proxy
/// with a nonzero velocity.
fn proxy_step(
    proxies: &mut ClassProxies,
    velocity: &mut [Vec<f64>],
    grads: &BTreeMap<usize, Vec<f64>>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let mut directions = BTreeMap::new();
    for (k, v) in velocity.iter_mut().enumerate() {
        let g = grads.get(&k);
        for (j, vj) in v.iter_mut().enumerate() {
            *vj = momentum * *vj + g.map_or(0.0, |g| g[j]);
        }
        if v.iter().any(|&x| x != 0.0) {
            directions.insert(k, v.clone());
        }
    }
    proxies.apply_gradients(&directions, lr)
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub method: Method,
    pub seed: u64,
    pub epoch: usize,
    pub step: usize,
    pub total_steps: usize,
    pub model: EmbeddingModel,
    pub model_optimizer: SgdMomentum,
    /// Shared fine-scale proxies (cross-scale classification losses).
    pub shared: Option<(ProxyBank, Vec<Vec<f64>>)>,
    /// Independent per-scale proxy sets (classification baselines).
    pub scale_proxies: BTreeMap<usize, ProxyState>,
    pub rng: ChaCha8Rng,
}

pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl TrainState {
    pub fn init(dataset: &Dataset, method: Method, config: &TrainConfig, seed: u64) -> Result<Self> {
        let t = dataset.taxonomy();
        method.validate(t.num_scales())?;
        config.validate()?;
        let hidden = (config.hidden > 0).then_some(config.hidden);
        let model =
            EmbeddingModel::random(dataset.d_in(), config.embed_dim, hidden, config.bias, derive_seed(seed, 1))?;
        let model_optimizer = SgdMomentum::new(config.momentum, model.num_params());
        let shared = if method.kind.uses_shared_proxies() {
            let bank = init_proxies(t, config.embed_dim, derive_seed(seed, 2))?;
            let velocity = vec![vec![0.0; config.embed_dim]; t.num_fine()];
            Some((bank, velocity))
        } else {
            None
        };
        let scale_proxies = if method.kind.uses_scale_proxies() {
            method
                .trained_scales(t.num_scales())
                .into_iter()
                .map(|s| {
                    let p = ClassProxies::random(t.num_classes(s), config.embed_dim, derive_seed(seed, 10 + s as u64))?;
                    Ok((s, ProxyState::new(p)))
                })
                .collect::<Result<BTreeMap<_, _>>>()?
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            method,
            seed,
            epoch: 0,
            step: 0,
            total_steps: config.epochs * config.steps_per_epoch(dataset.len()),
            model,
            model_optimizer,
            shared,
            scale_proxies,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 3)),
        })
    }

    pub fn bank(&self) -> Option<&ProxyBank> {
        self.shared.as_ref().map(|(b, _)| b)
    }

    pub fn scale_proxy_sets(&self) -> BTreeMap<usize, &ClassProxies> {
        self.scale_proxies.iter().map(|(&s, p)| (s, &p.proxies)).collect()
    }

    /// Loss and gradients of this state's objective on a batch of unit
    /// embeddings.
    pub fn objective(&self, embeddings: &[Vec<f64>], chains: &[Vec<usize>], config: &LossConfig) -> Result<LossOutput> {
        objective(self.method, embeddings, chains, self.bank(), &self.scale_proxy_sets(), config)
    }
}

/// Dispatches a method to its loss.
pub fn objective(
    method: Method,
    embeddings: &[Vec<f64>],
    chains: &[Vec<usize>],
    bank: Option<&ProxyBank>,
    scale_proxies: &BTreeMap<usize, &ClassProxies>,
    config: &LossConfig,
) -> Result<LossOutput> {
    let need_bank = || bank.ok_or_else(|| DymlError::MissingProxy("shared proxy bank required".into()));
    match (method.kind, method.scale) {
        (LossKind::CslCls, _) => csl_cls(embeddings, chains, need_bank()?, config),
        (LossKind::CslJoint, _) => csl_joint(embeddings, chains, need_bank()?, config),
        (LossKind::CslPair, _) => csl_pair(embeddings, chains, config),
        (LossKind::Baseline(kind), Some(scale)) => {
            let labels: Vec<usize> = chains.iter().map(|c| c[scale]).collect();
            baseline_loss(kind, embeddings, &labels, scale_proxies.get(&scale).copied(), scale, config)
        }
        (LossKind::Baseline(kind), None) => {
            let sets: Vec<ClassProxies> = if kind.uses_proxies() {
                let m = chains.first().map_or(0, Vec::len);
                (0..m)
                    .map(|s| {
                        scale_proxies
                            .get(&s)
                            .map(|p| (*p).clone())
                            .ok_or_else(|| DymlError::MissingProxy(format!("no proxy set for scale {s}")))
                    })
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            multi_scale_sum(kind, embeddings, chains, &sets, config)
        }
    }
}

/// Drives a [`TrainState`] over a dataset.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    loss: LossConfig,
    config: TrainConfig,
    sampler: HierarchicalSampler,
    probes: Vec<Vec<usize>>,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, method: Method, loss: LossConfig, config: TrainConfig, seed: u64) -> Result<Self> {
        let state = TrainState::init(dataset, method, &config, seed)?;
        Self::resume(dataset, loss, config, state)
    }

    /// Continues from a saved state. The configs must match the ones the
    /// state was created with.
    pub fn resume(dataset: &'a Dataset, loss: LossConfig, config: TrainConfig, state: TrainState) -> Result<Self> {
        if dataset.is_empty() {
            return Err(DymlError::EmptyDataset);
        }
        loss.validate()?;
        config.validate()?;
        if state.method.kind.uses_shared_proxies() || state.method.kind == LossKind::CslPair {
            loss.margins_for(dataset.taxonomy().num_scales())?;
        }
        if state.model.d_in() != dataset.d_in() {
            return Err(DymlError::DimensionMismatch { expected: state.model.d_in(), got: dataset.d_in() });
        }
        let sampler = HierarchicalSampler::new(dataset, config.sampler)?;
        let mut probe_rng = ChaCha8Rng::seed_from_u64(derive_seed(state.seed, 4));
        let probes = (0..config.probe_batches).map(|_| sampler.sample_batch(&mut probe_rng)).collect();
        Ok(Self { dataset, loss, config, sampler, probes, state })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.loss
    }

    fn forward_batch(&self, indices: &[usize]) -> Result<ForwardBatch> {
        let samples = self.dataset.samples();
        let passes =
            indices.iter().map(|&i| self.state.model.forward(&samples[i].features)).collect::<Result<Vec<_>>>()?;
        let embeddings = passes.iter().map(|p| p.embedding().to_vec()).collect();
        let chains = indices.iter().map(|&i| samples[i].label_chain.clone()).collect();
        Ok((passes, embeddings, chains))
    }

    /// Loss of the current state on the given sample indices.
    pub fn batch_loss(&self, indices: &[usize]) -> Result<f64> {
        let (_, embeddings, chains) = self.forward_batch(indices)?;
        Ok(self.state.objective(&embeddings, &chains, &self.loss)?.value)
    }

    /// Draws the next batch without advancing the state.
    pub fn peek_batch(&self) -> Vec<usize> {
        self.sampler.sample_batch(&mut self.state.rng.clone())
    }

    /// One optimizer step. Returns the batch loss before the update. On a
    /// non-finite loss the state is left untouched.
    pub fn step(&mut self) -> Result<f64> {
        let mut rng = self.state.rng.clone();
        let indices = self.sampler.sample_batch(&mut rng);
        let (passes, embeddings, chains) = self.forward_batch(&indices)?;
        let out = self.state.objective(&embeddings, &chains, &self.loss)?;
        if !out.is_finite() {
            return Err(DymlError::NonFiniteLoss { epoch: self.state.epoch, step: self.state.step });
        }

        let samples = self.dataset.samples();
        let mut grad_params = vec![0.0; self.state.model.num_params()];
        for ((&i, pass), g) in indices.iter().zip(&passes).zip(&out.grad_embeddings) {
            self.state.model.backward(&samples[i].features, pass, g, &mut grad_params);
        }
        if grad_params.iter().any(|g| !g.is_finite()) {
            return Err(DymlError::NonFiniteLoss { epoch: self.state.epoch, step: self.state.step });
        }

        let (step, total) = (self.state.step, self.state.total_steps);
        let schedule = |base: f64| if self.config.cosine_decay { cosine_lr(base, step, total) } else { base };
        let (lr_model, lr_proxy) = (schedule(self.config.lr_model), schedule(self.config.lr_proxy));
        let momentum = self.config.momentum;

        let state = &mut self.state;
        state.model_optimizer.step(state.model.params_mut(), &grad_params, lr_model);
        if let Some((bank, velocity)) = state.shared.as_mut() {
            proxy_step(bank.proxies_mut(), velocity, &out.proxy_grads_at(0), lr_proxy, momentum)?;
        }
        for (&scale, ps) in state.scale_proxies.iter_mut() {
            ps.step(&out.proxy_grads_at(scale), lr_proxy, momentum)?;
        }
        state.rng = rng;
        state.step += 1;
        Ok(out.value)
    }

    /// Runs one epoch of steps and returns its diagnostics.
    pub fn run_epoch(&mut self) -> Result<EpochDiagnostics> {
        let steps = self.config.steps_per_epoch(self.dataset.len());
        let mut total = 0.0;
        for _ in 0..steps {
            total += self.step()?;
        }
        self.state.epoch += 1;
        self.diagnostics(total / steps as f64)
    }

    pub fn run(&mut self, epochs: usize) -> Result<Vec<EpochDiagnostics>> {
        (0..epochs).map(|_| self.run_epoch()).collect()
    }

    /// Diagnostics of the current state on the training set.
    pub fn diagnostics(&self, mean_batch_loss: f64) -> Result<EpochDiagnostics> {
        let probe_loss = if self.probes.is_empty() {
            f64::NAN
        } else {
            let sum = self.probes.iter().map(|b| self.batch_loss(b)).sum::<Result<f64>>()?;
            sum / self.probes.len() as f64
        };
        let accuracy = classification_accuracy(&self.state, self.dataset)?;
        let tiers = record_similarity_distributions(
            &self.state.model,
            self.dataset,
            self.config.diag_pairs,
            derive_seed(self.state.seed, 100 + self.state.epoch as u64),
        )?;
        Ok(EpochDiagnostics {
            epoch: self.state.epoch,
            accuracy,
            tier_means: tiers.means,
            loss: probe_loss,
            mean_batch_loss,
        })
    }
}

/// Forward passes, embeddings and label chains of one batch.
type ForwardBatch = (Vec<ForwardPass>, Vec<Vec<f64>>, Vec<Vec<usize>>);

/// Trains `config.epochs` epochs from a fresh initialization.
pub fn train(
    dataset: &Dataset,
    method: Method,
    loss: &LossConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<(TrainState, Vec<EpochDiagnostics>)> {
    let mut trainer = Trainer::new(dataset, method, loss.clone(), config.clone(), seed)?;
    let diags = trainer.run(config.epochs)?;
    Ok((trainer.into_state(), diags))
}
