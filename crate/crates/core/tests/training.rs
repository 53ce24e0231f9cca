mod common;

use dyml::geometry::EmbeddingModel;
use dyml::losses::{LossConfig, LossKind};
use dyml::proxies::init_proxies;
use dyml::taxonomy::{generate_synthetic, SyntheticSpec};
use dyml::trainer::{
    read_checkpoint, record_similarity_distributions, train, write_checkpoint, HierarchicalSampler, Method,
    SamplerSpec, TrainConfig, Trainer,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn default_data() -> (dyml::taxonomy::Dataset, dyml::taxonomy::Dataset) {
    generate_synthetic(&SyntheticSpec::default()).unwrap()
}

#[test]
fn sampler_frequencies_are_uniform_within_three_sigma() {
    let (train, _) = default_data();
    let sampler = HierarchicalSampler::new(&train, SamplerSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let fine = train.taxonomy().num_fine();
    let mut counts = vec![0usize; fine];
    let draws = 1000;
    for _ in 0..draws {
        let mut seen = vec![false; fine];
        for i in sampler.sample_batch(&mut rng) {
            seen[train.samples()[i].label_chain[0]] = true;
        }
        for (c, s) in counts.iter_mut().zip(seen) {
            *c += s as usize;
        }
    }
    // 4 of 4 coarse, 2 of 3 middle per coarse, 2 of 3 fine per middle
    let p = 16.0 / 36.0;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (class, &c) in counts.iter().enumerate() {
        let z = (c as f64 - draws as f64 * p) / sigma;
        assert!(z.abs() <= 3.0, "fine class {class}: {c} draws, z = {z:.2}");
    }
}

#[test]
fn small_steps_decrease_the_batch_loss() {
    let (train, _) = default_data();
    let config = TrainConfig { lr_model: 1e-3, lr_proxy: 1e-3, ..TrainConfig::default() };
    let mut trainer = Trainer::new(&train, Method::multi(LossKind::CslCls), LossConfig::default(), config, 7).unwrap();
    let steps = 200;
    let mut decreased = 0;
    for _ in 0..steps {
        let batch = trainer.peek_batch();
        let before = trainer.step().unwrap();
        if trainer.batch_loss(&batch).unwrap() < before {
            decreased += 1;
        }
    }
    assert!(decreased as f64 >= 0.95 * steps as f64, "{decreased} of {steps} steps decreased the loss");
}

#[test]
fn random_proxies_are_nearly_orthogonal() {
    let t = default_data().0.taxonomy().clone();
    let (mut sum, mut count) = (0.0, 0usize);
    for seed in 0..1000 {
        let bank = init_proxies(&t, 128, seed).unwrap();
        let v = bank.proxies().vectors();
        for i in 0..v.len() {
            assert!((dyml::geometry::l2_norm(&v[i]) - 1.0).abs() < 1e-12);
            for j in i + 1..v.len() {
                sum += dyml::geometry::dot(&v[i], &v[j]);
                count += 1;
            }
        }
    }
    let mean = sum / count as f64;
    assert!(mean.abs() < 0.05, "mean pairwise cosine {mean}");
}

#[test]
fn raw_features_follow_the_tier_ordering() {
    let (train, test) = default_data();
    for ds in [&train, &test] {
        let identity = EmbeddingModel::identity(ds.d_in());
        let tiers = record_similarity_distributions(&identity, ds, 1000, 5).unwrap();
        assert!(tiers.available.iter().all(|&n| n >= 1000), "{:?}", tiers.available);
        assert!(tiers.means.windows(2).all(|w| w[0] > w[1]), "{:?}", tiers.means);
    }
}

#[test]
fn cross_scale_training_raises_fine_accuracy() {
    let (train, _) = default_data();
    let config = TrainConfig::default();
    let fresh =
        Trainer::new(&train, Method::multi(LossKind::CslCls), LossConfig::default(), config.clone(), 7).unwrap();
    let initial = fresh.diagnostics(f64::NAN).unwrap().accuracy[0];
    let (_, diags) = train_with(&train, &config);
    let (first, last) = (diags[0].accuracy[0], diags.last().unwrap().accuracy[0]);
    assert_eq!(diags.len(), 30);
    assert!(last - initial >= 10.0, "fine accuracy {initial:.1}% -> {last:.1}%");
    assert!(last > first, "fine accuracy {first:.1}% after epoch 1, {last:.1}% after epoch 30");
    for d in &diags {
        assert!(d.accuracy.iter().all(|a| (0.0..=100.0).contains(a)));
        assert!(d.tier_means.iter().all(|m| (-1.0..=1.0).contains(m)));
    }
}

fn train_with(
    ds: &dyml::taxonomy::Dataset,
    config: &TrainConfig,
) -> (dyml::trainer::TrainState, Vec<dyml::trainer::EpochDiagnostics>) {
    train(ds, Method::multi(LossKind::CslCls), &LossConfig::default(), config, 7).unwrap()
}

#[test]
fn training_is_deterministic() {
    let (train, _) = default_data();
    let config = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let (a, da) = train_with(&train, &config);
    let (b, db) = train_with(&train, &config);
    assert_eq!(a, b);
    assert_eq!(format!("{da:?}"), format!("{db:?}"));
}

#[test]
fn checkpoint_then_step_equals_uninterrupted_step() {
    let (train, _) = default_data();
    let config = TrainConfig { epochs: 2, ..TrainConfig::default() };
    for kind in ["csl_joint", "cosface", "triplet"] {
        let method = Method::multi(kind.parse().unwrap());
        let mut straight = Trainer::new(&train, method, LossConfig::default(), config.clone(), 3).unwrap();
        for _ in 0..5 {
            straight.step().unwrap();
        }
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, straight.state(), "cfg").unwrap();
        straight.step().unwrap();

        let (state, cfg) = read_checkpoint(&mut bytes.as_slice(), train.taxonomy()).unwrap();
        assert_eq!(cfg, "cfg");
        let mut resumed = Trainer::resume(&train, LossConfig::default(), config.clone(), state).unwrap();
        resumed.step().unwrap();
        assert_eq!(resumed.state(), straight.state(), "{kind}");
    }
}

#[test]
fn proxy_norms_stay_unit_during_training() {
    let (train, _) = default_data();
    let config = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let mut trainer = Trainer::new(&train, Method::multi(LossKind::CslCls), LossConfig::default(), config, 1).unwrap();
    for _ in 0..3 {
        trainer.run_epoch().unwrap();
        for p in trainer.state().bank().unwrap().proxies().vectors() {
            assert!((dyml::geometry::l2_norm(p) - 1.0).abs() < 1e-9);
        }
    }
}

/// Trailing mean over `w` epochs.
fn smoothed(v: &[f64], w: usize) -> Vec<f64> {
    v.windows(w).map(|x| x.iter().sum::<f64>() / w as f64).collect()
}

#[test]
fn smoothed_loss_falls_and_settles() {
    let (data, _) = default_data();
    for seed in [0, 1, 2] {
        let (_, diags) =
            train(&data, Method::multi(LossKind::CslCls), &LossConfig::default(), &TrainConfig::default(), seed)
                .unwrap();
        let loss: Vec<f64> = diags.iter().map(|d| d.loss).collect();
        let s = smoothed(&loss, 5);
        assert!(*s.last().unwrap() <= 0.2 * s[0], "seed {seed}: {s:?}");
        let tail = &s[s.len() - s.len() / 3..];
        assert!(tail.windows(2).all(|w| w[1] <= w[0]), "seed {seed}: {tail:?}");
    }
}
