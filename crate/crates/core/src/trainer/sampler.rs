use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DymlError, Result};
use crate::taxonomy::Dataset;

/// Nested batch composition: coarse classes, middle classes per coarse,
/// fine classes per middle, samples per fine class.
///
/// For taxonomies with fewer than three scales the counts collapse onto the
/// available levels; with more, intermediate levels draw one class each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub coarse_per_batch: usize,
    pub middle_per_coarse: usize,
    pub fine_per_middle: usize,
    pub instances_per_fine: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self { coarse_per_batch: 4, middle_per_coarse: 2, fine_per_middle: 2, instances_per_fine: 4 }
    }
}

impl SamplerSpec {
    pub fn batch_size(&self) -> usize {
        self.coarse_per_batch * self.middle_per_coarse * self.fine_per_middle * self.instances_per_fine
    }

    /// Classes to draw per parent at each scale, coarsest first.
    fn level_counts(&self, num_scales: usize) -> Vec<usize> {
        let (c, m, f) = (self.coarse_per_batch, self.middle_per_coarse, self.fine_per_middle);
        match num_scales {
            1 => vec![c * m * f],
            2 => vec![c, m * f],
            n => {
                let mut v = vec![c, m];
                v.extend(std::iter::repeat_n(1, n - 3));
                v.push(f);
                v
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size() == 0 {
            return Err(DymlError::InvalidConfig("sampler counts must be positive".into()));
        }
        Ok(())
    }
}

/// Precomputed class tree of a dataset for nested sampling.
#[derive(Debug, Clone)]
pub struct HierarchicalSampler {
    spec: SamplerSpec,
    /// `children[scale][class]`: classes at `scale - 1` under `class`.
    children: Vec<Vec<Vec<usize>>>,
    by_fine: Vec<Vec<usize>>,
}

impl HierarchicalSampler {
    pub fn new(dataset: &Dataset, spec: SamplerSpec) -> Result<Self> {
        spec.validate()?;
        let t = dataset.taxonomy();
        let m = t.num_scales();
        let mut children = vec![Vec::new()];
        for scale in 1..m {
            let mut lists = vec![Vec::new(); t.num_classes(scale)];
            for (child, &parent) in t.parent_maps()[scale - 1].iter().enumerate() {
                lists[parent].push(child);
            }
            children.push(lists);
        }
        let sampler = Self { spec, children, by_fine: dataset.indices_by_fine_class() };
        sampler.check_capacity(dataset)?;
        Ok(sampler)
    }

    fn check_capacity(&self, dataset: &Dataset) -> Result<()> {
        let t = dataset.taxonomy();
        let m = t.num_scales();
        let counts = self.spec.level_counts(m);
        let top = m - 1;
        if t.num_classes(top) < counts[0] {
            return Err(DymlError::InsufficientClasses(format!(
                "batch needs {} classes at scale {top}, dataset has {}",
                counts[0],
                t.num_classes(top)
            )));
        }
        for (level, &need) in counts.iter().enumerate().skip(1) {
            let scale = top - level;
            if let Some(small) = self.children[scale + 1].iter().find(|c| c.len() < need) {
                return Err(DymlError::InsufficientClasses(format!(
                    "batch needs {need} children per class at scale {}, some class has {}",
                    scale + 1,
                    small.len()
                )));
            }
        }
        if let Some(small) = self.by_fine.iter().find(|s| s.len() < self.spec.instances_per_fine) {
            return Err(DymlError::InsufficientClasses(format!(
                "batch needs {} samples per fine class, some class has {}",
                self.spec.instances_per_fine,
                small.len()
            )));
        }
        Ok(())
    }

    pub fn spec(&self) -> SamplerSpec {
        self.spec
    }

    /// Sample indices of one batch, grouped by the nested draw.
    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let m = self.children.len();
        let counts = self.spec.level_counts(m);
        let top = m - 1;
        let num_top = if top == 0 { self.by_fine.len() } else { self.children[top].len() };
        let mut frontier: Vec<usize> = draw(rng, &(0..num_top).collect::<Vec<_>>(), counts[0]);
        for (level, &need) in counts.iter().enumerate().skip(1) {
            let parent_scale = top - level + 1;
            frontier = frontier.iter().flat_map(|&p| draw(rng, &self.children[parent_scale][p], need)).collect();
        }
        frontier.iter().flat_map(|&fine| draw(rng, &self.by_fine[fine], self.spec.instances_per_fine)).collect()
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, pool: &[usize], k: usize) -> Vec<usize> {
    index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
}

/// Draws one batch; convenience wrapper over [`HierarchicalSampler`].
pub fn sample_batch<R: Rng + ?Sized>(dataset: &Dataset, spec: SamplerSpec, rng: &mut R) -> Result<Vec<usize>> {
    Ok(HierarchicalSampler::new(dataset, spec)?.sample_batch(rng))
}
