//! Unit embeddings, cosine similarity, and the embedding network.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{DymlError, Result};
use crate::io::{expect_eof, read_f64s, read_magic, read_u32, read_u64, write_f64s, write_magic, write_u32, write_u64};

pub const EMBEDDING_MAGIC: &[u8; 5] = b"DYME1";

/// Sequential dot product; the fixed summation order keeps results bitwise
/// reproducible.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// A vector of unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn normalize(mut v: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&v);
        if norm == 0.0 || !norm.is_finite() {
            return Err(DymlError::DegenerateEmbedding);
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(DymlError::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    Ok(dot(&a.0, &b.0))
}

/// Row-major `queries x gallery` cosine matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, q: usize, g: usize) -> f64 {
        self.data[q * self.cols + g]
    }

    pub fn row(&self, q: usize) -> &[f64] {
        &self.data[q * self.cols..(q + 1) * self.cols]
    }
}

pub fn similarity_matrix<E: AsRef<[f64]> + Sync>(queries: &[E], gallery: &[E]) -> Result<SimilarityMatrix> {
    if queries.is_empty() || gallery.is_empty() {
        return Err(DymlError::EmptyGallery);
    }
    let d = queries[0].as_ref().len();
    for e in queries.iter().chain(gallery) {
        if e.as_ref().len() != d {
            return Err(DymlError::DimensionMismatch { expected: d, got: e.as_ref().len() });
        }
    }
    let cols = gallery.len();
    let mut data = vec![0.0; queries.len() * cols];
    data.par_chunks_mut(cols).zip(queries.par_iter()).for_each(|(row, q)| {
        for (out, g) in row.iter_mut().zip(gallery) {
            *out = dot(q.as_ref(), g.as_ref());
        }
    });
    Ok(SimilarityMatrix { rows: queries.len(), cols, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    rows: usize,
    cols: usize,
    bias: bool,
    offset: usize,
}

impl Dense {
    fn len(&self) -> usize {
        self.rows * self.cols + if self.bias { self.rows } else { 0 }
    }

    fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let w = &params[self.offset..self.offset + self.rows * self.cols];
        (0..self.rows)
            .map(|r| {
                let z = dot(&w[r * self.cols..(r + 1) * self.cols], x);
                if self.bias {
                    z + params[self.offset + self.rows * self.cols + r]
                } else {
                    z
                }
            })
            .collect()
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. `x`.
    fn backward(&self, params: &[f64], x: &[f64], grad_out: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        let base = self.offset;
        let mut grad_x = vec![0.0; self.cols];
        for r in 0..self.rows {
            let g = grad_out[r];
            if g == 0.0 {
                continue;
            }
            let row = base + r * self.cols;
            for c in 0..self.cols {
                grad_params[row + c] += g * x[c];
                grad_x[c] += g * params[row + c];
            }
            if self.bias {
                grad_params[base + self.rows * self.cols + r] += g;
            }
        }
        grad_x
    }
}

/// Linear (or one-hidden-layer ReLU) map followed by L2 normalization.
///
/// All parameters live in one flat vector so optimizers and checkpoints can
/// treat the model as a point in `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    d_in: usize,
    d_out: usize,
    hidden: Option<usize>,
    layers: Vec<Dense>,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    hidden_pre: Option<Vec<f64>>,
    output: Vec<f64>,
    norm: f64,
    embedding: Vec<f64>,
}

impl ForwardPass {
    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }
}

impl EmbeddingModel {
    fn layout(d_in: usize, d_out: usize, hidden: Option<usize>, bias: bool) -> Vec<Dense> {
        match hidden {
            None => vec![Dense { rows: d_out, cols: d_in, bias, offset: 0 }],
            Some(h) => {
                let first = Dense { rows: h, cols: d_in, bias, offset: 0 };
                let second = Dense { rows: d_out, cols: h, bias, offset: first.len() };
                vec![first, second]
            }
        }
    }

    /// Gaussian weights with variance `1 / fan_in`, zero biases.
    pub fn random(d_in: usize, d_out: usize, hidden: Option<usize>, bias: bool, seed: u64) -> Result<Self> {
        if d_in == 0 || d_out == 0 || hidden == Some(0) {
            return Err(DymlError::InvalidDimension("model dimensions must be positive".into()));
        }
        let layers = Self::layout(d_in, d_out, hidden, bias);
        let n: usize = layers.iter().map(Dense::len).sum();
        let mut params = vec![0.0; n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &layers {
            let scale = 1.0 / (layer.cols as f64).sqrt();
            for p in &mut params[layer.offset..layer.offset + layer.rows * layer.cols] {
                *p = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(Self { d_in, d_out, hidden, layers, params })
    }

    pub fn identity(d: usize) -> Self {
        let layers = Self::layout(d, d, None, false);
        let mut params = vec![0.0; d * d];
        for i in 0..d {
            params[i * d + i] = 1.0;
        }
        Self { d_in: d, d_out: d, hidden: None, layers, params }
    }

    pub fn from_params(d_in: usize, d_out: usize, hidden: Option<usize>, bias: bool, params: Vec<f64>) -> Result<Self> {
        let layers = Self::layout(d_in, d_out, hidden, bias);
        let n: usize = layers.iter().map(Dense::len).sum();
        if params.len() != n {
            return Err(DymlError::DimensionMismatch { expected: n, got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(DymlError::InvalidDimension("non-finite model parameter".into()));
        }
        Ok(Self { d_in, d_out, hidden, layers, params })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn hidden(&self) -> Option<usize> {
        self.hidden
    }

    pub fn has_bias(&self) -> bool {
        self.layers[0].bias
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardPass> {
        if x.len() != self.d_in {
            return Err(DymlError::DimensionMismatch { expected: self.d_in, got: x.len() });
        }
        let (hidden_pre, output) = match self.layers.as_slice() {
            [only] => (None, only.forward(&self.params, x)),
            [first, second] => {
                let pre = first.forward(&self.params, x);
                let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
                let out = second.forward(&self.params, &act);
                (Some(pre), out)
            }
            _ => unreachable!("layout has one or two layers"),
        };
        let norm = l2_norm(&output);
        if norm == 0.0 || !norm.is_finite() {
            return Err(DymlError::DegenerateEmbedding);
        }
        let embedding = output.iter().map(|v| v / norm).collect();
        Ok(ForwardPass { hidden_pre, output, norm, embedding })
    }

    /// Backpropagates `grad_embedding` (gradient w.r.t. the unit output)
    /// into `grad_params` and returns the gradient w.r.t. the input.
    pub fn backward(&self, x: &[f64], pass: &ForwardPass, grad_embedding: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        // d(z/|z|)/dz = (I - e e^T) / |z|
        let e = &pass.embedding;
        let radial = dot(e, grad_embedding);
        let grad_out: Vec<f64> = grad_embedding.iter().zip(e).map(|(g, ei)| (g - radial * ei) / pass.norm).collect();
        debug_assert_eq!(pass.output.len(), grad_out.len());
        match self.layers.as_slice() {
            [only] => only.backward(&self.params, x, &grad_out, grad_params),
            [first, second] => {
                let pre = pass.hidden_pre.as_ref().expect("two-layer pass keeps hidden values");
                let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
                let grad_act = second.backward(&self.params, &act, &grad_out, grad_params);
                let grad_pre: Vec<f64> =
                    grad_act.iter().zip(pre).map(|(g, &p)| if p > 0.0 { *g } else { 0.0 }).collect();
                first.backward(&self.params, x, &grad_pre, grad_params)
            }
            _ => unreachable!("layout has one or two layers"),
        }
    }

    /// Jacobian of the unit output w.r.t. the input, `d_out x d_in`.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let pass = self.forward(x)?;
        let mut scratch = vec![0.0; self.params.len()];
        Ok((0..self.d_out)
            .map(|k| {
                let mut basis = vec![0.0; self.d_out];
                basis[k] = 1.0;
                self.backward(x, &pass, &basis, &mut scratch)
            })
            .collect())
    }
}

pub fn embed(model: &EmbeddingModel, features: &[f64]) -> Result<Embedding> {
    Ok(Embedding(model.forward(features)?.embedding))
}

pub fn embed_all(model: &EmbeddingModel, features: &[Vec<f64>]) -> Result<Vec<Embedding>> {
    features.par_iter().map(|x| embed(model, x)).collect()
}

/// `"DYME1"`, count (u64), d (u32), then `count * d` little-endian f64.
pub fn write_embeddings<W: Write>(w: &mut W, embeddings: &[Embedding]) -> Result<()> {
    let d = embeddings.first().map_or(0, Embedding::dim);
    write_magic(w, EMBEDDING_MAGIC)?;
    write_u64(w, embeddings.len() as u64)?;
    write_u32(w, d)?;
    for e in embeddings {
        if e.dim() != d {
            return Err(DymlError::DimensionMismatch { expected: d, got: e.dim() });
        }
        write_f64s(w, e.as_slice())?;
    }
    Ok(())
}

/// Keeps stored unit vectors bit-exact; renormalizes anything else.
fn stored_embedding(v: Vec<f64>) -> Result<Embedding> {
    if (l2_norm(&v) - 1.0).abs() < 1e-9 {
        Ok(Embedding(v))
    } else {
        Embedding::normalize(v)
    }
}

pub fn read_embeddings<R: Read>(r: &mut R) -> Result<Vec<Embedding>> {
    read_magic(r, EMBEDDING_MAGIC)?;
    let n = read_u64(r)? as usize;
    let d = read_u32(r)?;
    let out = (0..n).map(|_| read_f64s(r, d).and_then(stored_embedding)).collect::<Result<Vec<_>>>()?;
    expect_eof(r)?;
    Ok(out)
}

pub fn save_embeddings(path: &Path, embeddings: &[Embedding]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_embeddings(&mut w, embeddings)?;
    w.flush()?;
    Ok(())
}

pub fn load_embeddings(path: &Path) -> Result<Vec<Embedding>> {
    read_embeddings(&mut BufReader::new(File::open(path)?))
}
