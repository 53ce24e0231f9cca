//! Hierarchical label spaces and labelled datasets.
//!
//! A [`Taxonomy`] has `M` scales. Scale `0` is the finest; every class at
//! scale `i < M - 1` has exactly one parent at scale `i + 1`. Each fine class
//! therefore owns a unique ancestor chain `(l^1, ..., l^M)`, which is the label
//! chain carried by every [`Sample`].

mod io;
mod synthetic;

pub use io::{read_csv, read_dataset, write_csv, write_dataset, DATASET_MAGIC};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{DymlError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    classes_per_scale: Vec<usize>,
    parents: Vec<Vec<usize>>,
    /// Ancestor chain for every fine class, indexed `[fine][scale]`.
    chains: Vec<Vec<usize>>,
}

impl Taxonomy {
    /// Validates the parent maps and precomputes the ancestor chains.
    ///
    /// `parent_maps[i]` maps class ids of scale `i` to class ids of scale
    /// `i + 1`; there are `M - 1` maps for `M` scales.
    pub fn new(classes_per_scale: Vec<usize>, parent_maps: Vec<Vec<usize>>) -> Result<Self> {
        let m = classes_per_scale.len();
        if m == 0 {
            return Err(DymlError::NestingViolation("taxonomy needs at least one scale".into()));
        }
        if let Some(i) = classes_per_scale.iter().position(|&c| c == 0) {
            return Err(DymlError::NestingViolation(format!("scale {i} has no classes")));
        }
        if parent_maps.len() != m - 1 {
            return Err(DymlError::NestingViolation(format!(
                "{m} scales need {} parent maps, got {}",
                m - 1,
                parent_maps.len()
            )));
        }
        for (i, map) in parent_maps.iter().enumerate() {
            if map.len() != classes_per_scale[i] {
                return Err(DymlError::NestingViolation(format!(
                    "parent map of scale {i} covers {} of {} classes",
                    map.len(),
                    classes_per_scale[i]
                )));
            }
            let upper = classes_per_scale[i + 1];
            let mut hit = vec![false; upper];
            for (class, &p) in map.iter().enumerate() {
                if p >= upper {
                    return Err(DymlError::NestingViolation(format!(
                        "class {class} at scale {i} has parent {p}, but scale {} has {upper} classes",
                        i + 1
                    )));
                }
                hit[p] = true;
            }
            if let Some(empty) = hit.iter().position(|&h| !h) {
                return Err(DymlError::NestingViolation(format!("class {empty} at scale {} has no children", i + 1)));
            }
            if classes_per_scale[i + 1] >= classes_per_scale[i] {
                log::warn!(
                    "scale {} has {} classes, not fewer than scale {i} ({}); scales are not distinct",
                    i + 1,
                    classes_per_scale[i + 1],
                    classes_per_scale[i]
                );
            }
        }
        let chains = (0..classes_per_scale[0])
            .map(|fine| {
                let mut chain = Vec::with_capacity(m);
                chain.push(fine);
                for map in &parent_maps {
                    let last = *chain.last().unwrap();
                    chain.push(map[last]);
                }
                chain
            })
            .collect();
        Ok(Self { classes_per_scale, parents: parent_maps, chains })
    }

    /// Rebuilds a taxonomy from observed label chains. Every class at every
    /// scale must be observed, and chains must agree on each parent.
    pub fn from_label_chains<'a, I>(classes_per_scale: Vec<usize>, chains: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [usize]>,
    {
        let m = classes_per_scale.len();
        let mut parents: Vec<Vec<Option<usize>>> =
            (0..m.saturating_sub(1)).map(|i| vec![None; classes_per_scale[i]]).collect();
        for chain in chains {
            if chain.len() != m {
                return Err(DymlError::NestingViolation(format!(
                    "label chain of length {} for {m} scales",
                    chain.len()
                )));
            }
            for i in 0..m {
                if chain[i] >= classes_per_scale[i] {
                    return Err(DymlError::NestingViolation(format!("label {} out of range at scale {i}", chain[i])));
                }
            }
            for i in 0..m.saturating_sub(1) {
                match parents[i][chain[i]] {
                    None => parents[i][chain[i]] = Some(chain[i + 1]),
                    Some(p) if p == chain[i + 1] => {}
                    Some(p) => {
                        return Err(DymlError::NestingViolation(format!(
                            "class {} at scale {i} has parents {p} and {}",
                            chain[i],
                            chain[i + 1]
                        )))
                    }
                }
            }
        }
        let maps = parents
            .into_iter()
            .enumerate()
            .map(|(i, map)| {
                map.into_iter()
                    .enumerate()
                    .map(|(c, p)| {
                        p.ok_or_else(|| DymlError::NestingViolation(format!("class {c} at scale {i} never observed")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(classes_per_scale, maps)
    }

    pub fn num_scales(&self) -> usize {
        self.classes_per_scale.len()
    }

    pub fn classes_per_scale(&self) -> &[usize] {
        &self.classes_per_scale
    }

    pub fn num_classes(&self, scale: usize) -> usize {
        self.classes_per_scale[scale]
    }

    pub fn num_fine(&self) -> usize {
        self.classes_per_scale[0]
    }

    pub fn parent_maps(&self) -> &[Vec<usize>] {
        &self.parents
    }

    /// Ancestor chain of a fine class, finest first.
    pub fn chain(&self, fine: usize) -> &[usize] {
        &self.chains[fine]
    }

    pub fn ancestor(&self, fine: usize, scale: usize) -> usize {
        self.chains[fine][scale]
    }

    /// Fine-class ids beneath `class` at `scale`, ascending.
    pub fn subtree(&self, scale: usize, class: usize) -> Vec<usize> {
        (0..self.num_fine()).filter(|&f| self.chains[f][scale] == class).collect()
    }

    /// Checks that `chain` is a valid ancestor chain in this taxonomy.
    pub fn validate_chain(&self, chain: &[usize]) -> Result<()> {
        if chain.len() != self.num_scales() {
            return Err(DymlError::NestingViolation(format!(
                "label chain of length {} for {} scales",
                chain.len(),
                self.num_scales()
            )));
        }
        let fine = chain[0];
        if fine >= self.num_fine() || self.chains[fine] != chain {
            return Err(DymlError::NestingViolation(format!(
                "label chain {chain:?} is inconsistent with the taxonomy"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label_chain: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// An immutable labelled sample set over one taxonomy.
///
/// Labels are local to the dataset's own taxonomy. `class_offset[i]` maps a
/// local id at scale `i` into the id space shared by the train and test
/// splits of one generated benchmark, which is how open-set disjointness is
/// expressed.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    taxonomy: Taxonomy,
    split: Split,
    samples: Vec<Sample>,
    class_offset: Vec<usize>,
    d_in: usize,
}

impl Dataset {
    pub fn new(taxonomy: Taxonomy, split: Split, samples: Vec<Sample>) -> Result<Self> {
        let offsets = vec![0; taxonomy.num_scales()];
        Self::with_offsets(taxonomy, split, samples, offsets)
    }

    pub fn with_offsets(
        taxonomy: Taxonomy,
        split: Split,
        samples: Vec<Sample>,
        class_offset: Vec<usize>,
    ) -> Result<Self> {
        if class_offset.len() != taxonomy.num_scales() {
            return Err(DymlError::InvalidSpec("one class offset per scale required".into()));
        }
        let d_in = samples.first().map_or(0, |s| s.features.len());
        for s in &samples {
            if s.features.len() != d_in {
                return Err(DymlError::DimensionMismatch { expected: d_in, got: s.features.len() });
            }
            taxonomy.validate_chain(&s.label_chain)?;
        }
        Ok(Self { taxonomy, split, samples, class_offset, d_in })
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn class_offset(&self) -> &[usize] {
        &self.class_offset
    }

    /// Label of `sample` at `scale` in the id space shared across splits.
    pub fn global_label(&self, sample: usize, scale: usize) -> usize {
        self.samples[sample].label_chain[scale] + self.class_offset[scale]
    }

    pub fn label_chains(&self) -> Vec<Vec<usize>> {
        self.samples.iter().map(|s| s.label_chain.clone()).collect()
    }

    /// Sample indices grouped by fine class.
    pub fn indices_by_fine_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.taxonomy.num_fine()];
        for (i, s) in self.samples.iter().enumerate() {
            groups[s.label_chain[0]].push(i);
        }
        groups
    }
}
