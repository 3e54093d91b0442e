//! Shared discrete codebook: nearest-neighbour quantization of encoder
//! features, the straight-through gradient path, and the three-term loss.

use crate::error::{Error, Result};
use crate::numerics::{Graph, RngStream, Tensor, Var};

/// Commitment weight used when none is configured.
pub const DEFAULT_BETA: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    vectors: Tensor,
    beta: f64,
}

impl Codebook {
    pub fn new(vectors: Tensor, beta: f64) -> Result<Self> {
        let shape = vectors.shape();
        if shape.len() != 2 || shape[0] < 2 {
            return Err(Error::config(format!(
                "codebook must be a J x D matrix with J >= 2, got {shape:?}"
            )));
        }
        if vectors.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::config("codebook contains non-finite values"));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::config(format!("beta must be finite and >= 0, got {beta}")));
        }
        Ok(Self {
            vectors: vectors.with_grad(),
            beta,
        })
    }

    /// `size` vectors of length `dim`, uniform in `[-1/size, 1/size]`.
    pub fn init(size: usize, dim: usize, beta: f64, rng: &mut RngStream) -> Result<Self> {
        if size < 2 || dim == 0 {
            return Err(Error::config(format!(
                "codebook needs J >= 2 and D >= 1, got J={size}, D={dim}"
            )));
        }
        let bound = 1.0 / size as f64;
        let data = (0..size * dim).map(|_| rng.uniform_range(-bound, bound)).collect();
        Self::new(Tensor::new(vec![size, dim], data)?, beta)
    }

    pub fn size(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn vector(&self, j: usize) -> &[f64] {
        self.vectors.row(j)
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut Tensor {
        &mut self.vectors
    }

    /// Bits needed to send one index: `ceil(log2 J)`.
    pub fn bits_per_index(&self) -> usize {
        bits_per_index(self.size())
    }

    /// Index of the nearest vector; ties go to the smallest index.
    pub fn nearest(&self, z: &[f64]) -> usize {
        nearest(z, self.vectors.data(), self.dim())
    }

    /// Half the gap between the second-nearest and the nearest distance.
    /// Any perturbation of `z` shorter than this keeps the same index.
    pub fn absorption_radius(&self, z: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        let mut second = f64::INFINITY;
        for row in self.vectors.data().chunks(self.dim()) {
            let d = squared_distance(z, row).sqrt();
            if d < best {
                second = best;
                best = d;
            } else if d < second {
                second = d;
            }
        }
        (second - best) / 2.0
    }

    /// Row-major `indices.len() x D` block of the selected vectors.
    pub fn lookup(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            if i >= self.size() {
                return Err(Error::contract(format!(
                    "index {i} outside codebook of {}",
                    self.size()
                )));
            }
            out.extend_from_slice(self.vector(i));
        }
        Ok(out)
    }
}

pub fn bits_per_index(size: usize) -> usize {
    let mut bits = 0;
    while (1usize << bits) < size {
        bits += 1;
    }
    bits
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn nearest(z: &[f64], vectors: &[f64], dim: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, row) in vectors.chunks(dim).enumerate() {
        let d = squared_distance(z, row);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Nearest-neighbour lookup: the index and a copy of the chosen vector.
pub fn quantize(z: &[f64], cb: &Codebook) -> Result<(usize, Vec<f64>)> {
    if z.len() != cb.dim() {
        return Err(Error::contract(format!(
            "feature of length {} for codebook dimension {}",
            z.len(),
            cb.dim()
        )));
    }
    let j = cb.nearest(z);
    Ok((j, cb.vector(j).to_vec()))
}

/// Indices of the nearest codebook vectors for every row of `z_e`.
pub fn nearest_indices(g: &Graph, z_e: Var, cb: &Codebook) -> Result<Vec<usize>> {
    let d = *g.shape(z_e).last().unwrap_or(&0);
    if d != cb.dim() {
        return Err(Error::contract(format!(
            "features of width {d} for codebook dimension {}",
            cb.dim()
        )));
    }
    Ok(g.value(z_e).chunks(d).map(|row| cb.nearest(row)).collect())
}

/// Replaces every row of `z_e` with its codebook vector at `indices` in the
/// forward pass and copies the incoming gradient unaltered back to `z_e`.
/// The codebook itself gets no gradient along this path.
pub fn straight_through_lookup(g: &mut Graph, z_e: Var, cb: &Codebook, indices: &[usize]) -> Result<Var> {
    let rows = g.value(z_e).len() / cb.dim();
    if indices.len() != rows {
        return Err(Error::contract(format!(
            "{} indices for {rows} feature rows",
            indices.len()
        )));
    }
    let replacement = cb.lookup(indices)?;
    g.straight_through(z_e, replacement)
}

/// Straight-through quantization: nearest lookup forward, identity backward.
pub fn quantize_straight_through(g: &mut Graph, z_e: Var, cb: &Codebook) -> Result<(Var, Vec<usize>)> {
    let indices = nearest_indices(g, z_e, cb)?;
    let z_b = straight_through_lookup(g, z_e, cb, &indices)?;
    Ok((z_b, indices))
}

/// The two codebook terms, averaged over feature rows:
/// `|ng[z_e] - e|^2 + beta |z_e - ng[e]|^2`, with `e` gathered from the
/// codebook leaf `codebook` at `indices`.
pub fn commitment_terms(g: &mut Graph, z_e: Var, codebook: Var, indices: &[usize], beta: f64) -> Result<Var> {
    let shape = g.shape(codebook).to_vec();
    let (size, dim) = (shape[0], shape[1]);
    if let Some(&bad) = indices.iter().find(|&&i| i >= size) {
        return Err(Error::contract(format!(
            "selected vector {bad} is not in a codebook of {size}"
        )));
    }
    let rows = g.value(z_e).len() / dim;
    if rows != indices.len() {
        return Err(Error::contract(format!(
            "{} indices for {rows} feature rows",
            indices.len()
        )));
    }
    let e_sel = g.gather_rows(codebook, indices)?;
    let z_frozen = g.stop_grad(z_e);
    let e_frozen = g.stop_grad(e_sel);
    let to_codebook = g.sub(z_frozen, e_sel)?;
    let to_encoder = g.sub(z_e, e_frozen)?;
    let codebook_term = g.sum_squares(to_codebook);
    let commit = g.sum_squares(to_encoder);
    let commit = g.scale(commit, beta);
    let both = g.add(codebook_term, commit)?;
    Ok(g.scale(both, 1.0 / rows as f64))
}

/// Full codebook training loss: task term plus [`commitment_terms`].
pub fn codebook_loss(g: &mut Graph, task: Var, z_e: Var, codebook: Var, indices: &[usize], beta: f64) -> Result<Var> {
    let terms = commitment_terms(g, z_e, codebook, indices, beta)?;
    g.add(task, terms)
}
