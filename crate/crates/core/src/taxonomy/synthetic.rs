use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, Split, Taxonomy};
use crate::error::{DymlError, Result};

/// Nested Gaussian-cluster benchmark.
///
/// `branching[0]` is the number of coarse classes; `branching[j]` for `j > 0`
/// is the number of children per class when descending one scale. So
/// `[4, 3, 3]` yields 4 coarse, 12 middle and 36 fine classes per split.
///
/// `sigmas` holds the center noise of every non-coarse scale, coarse to
/// fine, and must be strictly decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub branching: Vec<usize>,
    pub samples_per_fine_class: usize,
    pub d_in: usize,
    pub sigmas: Vec<f64>,
    pub sigma_sample: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            branching: vec![4, 3, 3],
            samples_per_fine_class: 20,
            d_in: 32,
            sigmas: vec![0.2, 0.1],
            sigma_sample: 0.15,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn num_scales(&self) -> usize {
        self.branching.len()
    }

    /// Classes per scale, finest first.
    pub fn classes_per_scale(&self) -> Vec<usize> {
        let mut counts: Vec<usize> = self
            .branching
            .iter()
            .scan(1usize, |acc, &b| {
                *acc *= b;
                Some(*acc)
            })
            .collect();
        counts.reverse();
        counts
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.branching.len();
        if m == 0 {
            return Err(DymlError::InvalidSpec("branching must list at least one scale".into()));
        }
        if self.branching[0] == 0 {
            return Err(DymlError::InvalidSpec("need at least one coarse class".into()));
        }
        if let Some(b) = self.branching[1..].iter().find(|&&b| b < 2) {
            return Err(DymlError::InvalidSpec(format!("branching {b} < 2 below the coarse scale")));
        }
        if self.sigmas.len() != m - 1 {
            return Err(DymlError::InvalidSpec(format!(
                "{} sigmas for {} non-coarse scales",
                self.sigmas.len(),
                m - 1
            )));
        }
        if self.sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(DymlError::InvalidSpec("sigmas must be finite and nonnegative".into()));
        }
        if self.sigmas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(DymlError::InvalidSpec(format!(
                "sigmas {:?} are not strictly decreasing from coarse to fine",
                self.sigmas
            )));
        }
        if !self.sigma_sample.is_finite() || self.sigma_sample < 0.0 {
            return Err(DymlError::InvalidSpec("sigma_sample must be finite and nonnegative".into()));
        }
        if self.d_in < 2 {
            return Err(DymlError::InvalidSpec("d_in must be at least 2".into()));
        }
        if self.samples_per_fine_class == 0 {
            return Err(DymlError::InvalidSpec("samples_per_fine_class must be positive".into()));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize, sigma: f64) -> Vec<f64> {
    (0..d).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn perturb(rng: &mut ChaCha8Rng, center: &[f64], sigma: f64) -> Vec<f64> {
    let noise = gaussian(rng, center.len(), sigma);
    normalize(center.iter().zip(noise).map(|(c, n)| c + n).collect())
}

/// Centers per scale, coarse first; children of parent `p` get ids
/// `p * b .. (p + 1) * b`.
fn grow_tree(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, coarse: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    let mut levels = vec![coarse.to_vec()];
    for (j, &b) in spec.branching.iter().enumerate().skip(1) {
        let sigma = spec.sigmas[j - 1];
        let parents = levels.last().unwrap();
        let children =
            parents.iter().flat_map(|p| (0..b).map(|_| perturb(rng, p, sigma)).collect::<Vec<_>>()).collect();
        levels.push(children);
    }
    levels
}

fn draw_split(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticSpec,
    taxonomy: &Taxonomy,
    fine_centers: &[Vec<f64>],
) -> Vec<Sample> {
    let mut samples = Vec::with_capacity(fine_centers.len() * spec.samples_per_fine_class);
    for (fine, center) in fine_centers.iter().enumerate() {
        for _ in 0..spec.samples_per_fine_class {
            let noise = gaussian(rng, spec.d_in, spec.sigma_sample);
            // Stored at f32 precision so the on-disk container is lossless.
            let features = center.iter().zip(noise).map(|(c, n)| (c + n) as f32 as f64).collect();
            samples.push(Sample { features, label_chain: taxonomy.chain(fine).to_vec() });
        }
    }
    samples
}

/// Generates a train and a test split over a nested cluster hierarchy.
///
/// Coarse centers are uniform on the unit sphere and shared by both splits.
/// Below the coarse scale each split grows its own subtree, so train and
/// test are disjoint at every non-coarse scale.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.num_scales();
    let counts = spec.classes_per_scale();
    // Finest-first parent maps: class c at scale i has parent c / b.
    let maps: Vec<Vec<usize>> = (0..m - 1)
        .map(|i| {
            let b = spec.branching[m - 1 - i];
            (0..counts[i]).map(|c| c / b).collect()
        })
        .collect();
    let taxonomy = Taxonomy::new(counts.clone(), maps)?;

    let coarse: Vec<Vec<f64>> = (0..spec.branching[0]).map(|_| normalize(gaussian(&mut rng, spec.d_in, 1.0))).collect();

    let train_tree = grow_tree(&mut rng, spec, &coarse);
    let train_samples = draw_split(&mut rng, spec, &taxonomy, train_tree.last().unwrap());
    let test_tree = grow_tree(&mut rng, spec, &coarse);
    let test_samples = draw_split(&mut rng, spec, &taxonomy, test_tree.last().unwrap());

    let test_offset: Vec<usize> = (0..m).map(|i| if i + 1 < m { counts[i] } else { 0 }).collect();
    let train = Dataset::new(taxonomy.clone(), Split::Train, train_samples)?;
    let test = Dataset::with_offsets(taxonomy, Split::Test, test_samples, test_offset)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn default_spec() -> SyntheticSpec {
        SyntheticSpec { seed: 7, ..SyntheticSpec::default() }
    }

    #[test]
    fn counts_follow_branching() {
        let (train, test) = generate_synthetic(&default_spec()).unwrap();
        assert_eq!(train.taxonomy().classes_per_scale(), &[36, 12, 4]);
        assert_eq!(train.len(), 720);
        assert_eq!(test.len(), 720);
        assert_eq!(train.d_in(), 32);
    }

    #[test]
    fn chains_consistent() {
        let (train, test) = generate_synthetic(&default_spec()).unwrap();
        for ds in [&train, &test] {
            for s in ds.samples() {
                let t = ds.taxonomy();
                for i in 0..t.num_scales() - 1 {
                    assert_eq!(t.parent_maps()[i][s.label_chain[i]], s.label_chain[i + 1]);
                }
            }
        }
    }

    #[test]
    fn open_set_split() {
        let (train, test) = generate_synthetic(&default_spec()).unwrap();
        for scale in 0..3 {
            let a: BTreeSet<usize> = (0..train.len()).map(|i| train.global_label(i, scale)).collect();
            let b: BTreeSet<usize> = (0..test.len()).map(|i| test.global_label(i, scale)).collect();
            if scale < 2 {
                assert!(a.is_disjoint(&b), "scale {scale} leaks classes");
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn zero_sample_noise_collapses_classes() {
        let spec = SyntheticSpec { sigma_sample: 0.0, ..default_spec() };
        let (train, _) = generate_synthetic(&spec).unwrap();
        for group in train.indices_by_fine_class() {
            let first = &train.samples()[group[0]].features;
            for &i in &group[1..] {
                assert_eq!(&train.samples()[i].features, first);
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_synthetic(&default_spec()).unwrap();
        let b = generate_synthetic(&default_spec()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 8, ..default_spec() }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn invalid_specs() {
        let bad_sigma = SyntheticSpec { sigmas: vec![0.1, 0.2], ..default_spec() };
        assert!(matches!(generate_synthetic(&bad_sigma), Err(DymlError::InvalidSpec(_))));
        let equal_sigma = SyntheticSpec { sigmas: vec![0.1, 0.1], ..default_spec() };
        assert!(matches!(generate_synthetic(&equal_sigma), Err(DymlError::InvalidSpec(_))));
        let bad_branch = SyntheticSpec { branching: vec![4, 1, 3], ..default_spec() };
        assert!(matches!(generate_synthetic(&bad_branch), Err(DymlError::InvalidSpec(_))));
    }
}
