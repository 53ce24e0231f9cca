//! Class proxies and the shared-proxy index over a taxonomy.
//!
//! Only fine classes own a proxy. A class at a coarser scale is represented
//! by the set of proxies of the fine classes beneath it, and its similarity to
//! an embedding is the largest cosine in that set.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{DymlError, Result};
use crate::geometry::{dot, l2_norm};
use crate::io::{read_f64s, read_magic, read_u32, write_f64s, write_magic, write_u32};
use crate::taxonomy::Taxonomy;

pub const PROXY_MAGIC: &[u8; 5] = b"DYMP1";

/// A flat set of unit class vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProxies {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl ClassProxies {
    /// Isotropic Gaussian draws, normalized.
    pub fn random(count: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(DymlError::InvalidDimension(format!("proxy dimension {dim} < 2")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = (0..count)
            .map(|_| loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = l2_norm(&v);
                if n > 0.0 {
                    break v.into_iter().map(|x| x / n).collect();
                }
            })
            .collect();
        Ok(Self { dim, vectors })
    }

    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        if dim < 2 {
            return Err(DymlError::InvalidDimension(format!("proxy dimension {dim} < 2")));
        }
        let vectors = vectors
            .into_iter()
            .map(|v| {
                if v.len() != dim {
                    return Err(DymlError::DimensionMismatch { expected: dim, got: v.len() });
                }
                let n = l2_norm(&v);
                if n == 0.0 || !n.is_finite() {
                    return Err(DymlError::DegenerateEmbedding);
                }
                Ok(v.into_iter().map(|x| x / n).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, class: usize) -> &[f64] {
        &self.vectors[class]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Raw mutable access; callers must restore unit norm.
    pub fn vectors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.vectors
    }

    /// Cosines between `embedding` and every proxy.
    pub fn similarities(&self, embedding: &[f64]) -> Vec<f64> {
        self.vectors.iter().map(|p| dot(embedding, p)).collect()
    }

    /// `p <- normalize(p - lr * g)` for every proxy with a nonzero gradient.
    /// Proxies without one are left bitwise untouched.
    pub fn apply_gradients(&mut self, grads: &BTreeMap<usize, Vec<f64>>, lr: f64) -> Result<()> {
        for (&id, g) in grads {
            if id >= self.vectors.len() {
                return Err(DymlError::UnknownProxyId(id));
            }
            if g.len() != self.dim {
                return Err(DymlError::DimensionMismatch { expected: self.dim, got: g.len() });
            }
        }
        for (&id, g) in grads {
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let p = &mut self.vectors[id];
            for (x, gx) in p.iter_mut().zip(g) {
                *x -= lr * gx;
            }
            let n = l2_norm(p);
            if n == 0.0 || !n.is_finite() {
                return Err(DymlError::DegenerateEmbedding);
            }
            p.iter_mut().for_each(|x| *x /= n);
        }
        Ok(())
    }

    /// `"DYMP1"`, count (u32), d (u32), then `count * d` little-endian f64.
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        write_magic(w, PROXY_MAGIC)?;
        write_u32(w, self.vectors.len())?;
        write_u32(w, self.dim)?;
        for v in &self.vectors {
            write_f64s(w, v)?;
        }
        Ok(())
    }

    /// Reads a proxy block written by [`ClassProxies::write`]. Stored vectors
    /// are taken verbatim.
    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        read_magic(r, PROXY_MAGIC)?;
        let count = read_u32(r)?;
        let dim = read_u32(r)?;
        let vectors = (0..count).map(|_| read_f64s(r, dim)).collect::<Result<Vec<_>>>()?;
        if vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(DymlError::Format("non-finite proxy entry".into()));
        }
        Ok(Self { dim, vectors })
    }
}

/// One hardest negative at some scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardNegative {
    /// Negative class id at the queried scale.
    pub class: usize,
    /// Fine proxy achieving the maximum cosine within that class.
    pub proxy: usize,
    pub similarity: f64,
}

/// Fine-scale proxies plus the per-scale subtree index.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyBank {
    proxies: ClassProxies,
    taxonomy: Taxonomy,
    /// `subtrees[scale][class]` lists the fine ids beneath `class`.
    subtrees: Vec<Vec<Vec<usize>>>,
}

impl ProxyBank {
    pub fn new(taxonomy: &Taxonomy, proxies: ClassProxies) -> Result<Self> {
        if proxies.len() != taxonomy.num_fine() {
            return Err(DymlError::MissingProxy(format!(
                "{} proxies for {} fine classes",
                proxies.len(),
                taxonomy.num_fine()
            )));
        }
        let subtrees = (0..taxonomy.num_scales())
            .map(|scale| {
                let mut lists = vec![Vec::new(); taxonomy.num_classes(scale)];
                for fine in 0..taxonomy.num_fine() {
                    lists[taxonomy.ancestor(fine, scale)].push(fine);
                }
                lists
            })
            .collect();
        Ok(Self { proxies, taxonomy: taxonomy.clone(), subtrees })
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn proxies(&self) -> &ClassProxies {
        &self.proxies
    }

    pub fn proxies_mut(&mut self) -> &mut ClassProxies {
        &mut self.proxies
    }

    pub fn dim(&self) -> usize {
        self.proxies.dim()
    }

    pub fn subtree(&self, scale: usize, class: usize) -> &[usize] {
        &self.subtrees[scale][class]
    }

    pub fn subtrees(&self, scale: usize) -> &[Vec<usize>] {
        &self.subtrees[scale]
    }

    pub fn apply_proxy_gradients(&mut self, grads: &BTreeMap<usize, Vec<f64>>, lr: f64) -> Result<()> {
        self.proxies.apply_gradients(grads, lr)
    }
}

pub fn init_proxies(taxonomy: &Taxonomy, d: usize, seed: u64) -> Result<ProxyBank> {
    ProxyBank::new(taxonomy, ClassProxies::random(taxonomy.num_fine(), d, seed)?)
}

/// Largest entry of `sims` over `members`; ties go to the lowest id since
/// members are ascending.
pub(crate) fn subtree_max(sims: &[f64], members: &[usize]) -> (usize, f64) {
    let mut best = (members[0], sims[members[0]]);
    for &f in &members[1..] {
        if sims[f] > best.1 {
            best = (f, sims[f]);
        }
    }
    best
}

/// Hardest proxy of every non-ancestor class at `scale`, in ascending class
/// order.
pub fn hardest_negative(
    embedding: &[f64],
    scale: usize,
    chain: &[usize],
    bank: &ProxyBank,
) -> Result<Vec<HardNegative>> {
    let t = bank.taxonomy();
    if scale >= t.num_scales() {
        return Err(DymlError::DegenerateScale(format!("scale {scale} does not exist")));
    }
    if t.num_classes(scale) < 2 {
        return Err(DymlError::DegenerateScale(format!("scale {scale} has a single class")));
    }
    if embedding.len() != bank.dim() {
        return Err(DymlError::DimensionMismatch { expected: bank.dim(), got: embedding.len() });
    }
    t.validate_chain(chain)?;
    let sims = bank.proxies().similarities(embedding);
    Ok(bank
        .subtrees(scale)
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != chain[scale])
        .map(|(class, members)| {
            let (proxy, similarity) = subtree_max(&sims, members);
            HardNegative { class, proxy, similarity }
        })
        .collect())
}
