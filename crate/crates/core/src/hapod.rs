//! Orthonormalization in the energy product and incremental hierarchical POD.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{bilinear, CsrMatrix};

/// Relative norm below which a vector counts as linearly dependent.
pub const DEFLATION_TOL: f64 = 1e-10;

/// Vectors orthonormal in the product `G`, kept together with `G v`.
#[derive(Clone, Debug, Default)]
pub struct OrthonormalSet {
    pub vectors: Vec<DVector<f64>>,
    pub gram_vectors: Vec<DVector<f64>>,
}

impl OrthonormalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_orthonormal(gram: &CsrMatrix, vectors: Vec<DVector<f64>>) -> Self {
        let gram_vectors = vectors.iter().map(|v| gram.mul_vec(v.as_slice())).collect();
        Self { vectors, gram_vectors }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Removes the components along the set (two passes) and returns the coefficients.
    pub fn project_out(&self, v: &mut DVector<f64>) -> Vec<f64> {
        let mut coeffs = vec![0.0; self.len()];
        for _ in 0..2 {
            for (c, (q, gq)) in coeffs.iter_mut().zip(self.vectors.iter().zip(&self.gram_vectors)) {
                let d = gq.dot(v);
                *c += d;
                v.axpy(-d, q, 1.0);
            }
        }
        coeffs
    }

    /// Orthonormalizes `v` against the set and appends it unless it is numerically dependent
    /// (remaining norm below `DEFLATION_TOL` times the original norm).
    pub fn try_push(&mut self, gram: &CsrMatrix, mut v: DVector<f64>) -> bool {
        let original = g_norm(gram, &v);
        if original == 0.0 || !original.is_finite() {
            return false;
        }
        self.project_out(&mut v);
        let norm = g_norm(gram, &v);
        if norm < DEFLATION_TOL * original {
            return false;
        }
        v /= norm;
        self.gram_vectors.push(gram.mul_vec(v.as_slice()));
        self.vectors.push(v);
        true
    }
}

pub fn g_norm(gram: &CsrMatrix, v: &DVector<f64>) -> f64 {
    bilinear(gram, v.as_slice(), v.as_slice()).max(0.0).sqrt()
}

/// Two-pass Gram-Schmidt in the `G` product against `existing` (assumed orthonormal).
/// Dependent vectors are dropped.
pub fn gram_schmidt(vectors: &[DVector<f64>], gram: &CsrMatrix, existing: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut set = OrthonormalSet::from_orthonormal(gram, existing.to_vec());
    let start = set.len();
    for v in vectors {
        set.try_push(gram, v.clone());
    }
    set.vectors.split_off(start)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HapodConfig {
    /// Bound on the root-mean-square projection error of the inputs.
    pub eps_pod: f64,
    pub chunk_size: usize,
    /// Share of the error budget given to the final compression.
    pub omega: f64,
}

impl Default for HapodConfig {
    fn default() -> Self {
        Self { eps_pod: 1e-12, chunk_size: 100, omega: 0.75 }
    }
}

impl HapodConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_pod > 0.0) || self.chunk_size == 0 || !(self.omega > 0.0 && self.omega < 1.0) {
            return Err(Error::InvalidArgument(format!("invalid HaPOD configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct HapodResult {
    pub modes: Vec<DVector<f64>>,
    pub singular_values: Vec<f64>,
    /// Sum of all locally discarded squared singular values; bounds the total squared error.
    pub error_bound_sq: f64,
    /// Largest number of full-order vectors held at once.
    pub peak_stored: usize,
    pub num_inputs: usize,
}

/// Incremental HaPOD: vectors are buffered in chunks, and each chunk is compressed together
/// with the current scaled modes.
pub struct Hapod<'a> {
    gram: &'a CsrMatrix,
    config: HapodConfig,
    total: usize,
    intermediate_tol_sq: f64,
    final_tol_sq: f64,
    intermediate_left: usize,
    modes: Vec<DVector<f64>>,
    singular_values: Vec<f64>,
    buffer: Vec<DVector<f64>>,
    error_bound_sq: f64,
    peak_stored: usize,
    processed: usize,
}

impl<'a> Hapod<'a> {
    /// `total` is the number of vectors that will be pushed.
    pub fn new(gram: &'a CsrMatrix, config: HapodConfig, total: usize) -> Result<Self> {
        config.validate()?;
        let total = total.max(1);
        let steps = total.div_ceil(config.chunk_size);
        let budget = config.eps_pod * config.eps_pod * total as f64;
        let (intermediate_tol_sq, final_tol_sq) = if steps > 1 {
            ((1.0 - config.omega * config.omega) * budget / (steps - 1) as f64, config.omega * config.omega * budget)
        } else {
            (0.0, budget)
        };
        Ok(Self {
            gram,
            config,
            total,
            intermediate_tol_sq,
            final_tol_sq,
            intermediate_left: steps - 1,
            modes: Vec::new(),
            singular_values: Vec::new(),
            buffer: Vec::new(),
            error_bound_sq: 0.0,
            peak_stored: 0,
            processed: 0,
        })
    }

    pub fn push(&mut self, v: DVector<f64>) {
        self.buffer.push(v);
        self.processed += 1;
        self.peak_stored = self.peak_stored.max(self.modes.len() + self.buffer.len());
        if self.buffer.len() >= self.config.chunk_size {
            let tol = if self.processed >= self.total || self.intermediate_left == 0 {
                self.final_tol_sq
            } else {
                self.intermediate_left -= 1;
                self.intermediate_tol_sq
            };
            self.compress(tol);
        }
    }

    pub fn finish(mut self) -> HapodResult {
        if !self.buffer.is_empty() {
            self.compress(self.final_tol_sq);
        }
        HapodResult {
            modes: self.modes,
            singular_values: self.singular_values,
            error_bound_sq: self.error_bound_sq,
            peak_stored: self.peak_stored,
            num_inputs: self.processed,
        }
    }

    /// POD of `[modes * sigma, buffer]` via a `G`-orthogonal QR and an SVD of the small factor.
    fn compress(&mut self, tol_sq: f64) {
        let old = self.modes.len();
        let incoming = std::mem::take(&mut self.buffer);
        let cols = old + incoming.len();
        let mut q = OrthonormalSet::from_orthonormal(self.gram, std::mem::take(&mut self.modes));
        let mut r_entries: Vec<Vec<f64>> = (0..old)
            .map(|i| {
                let mut col = vec![0.0; i + 1];
                col[i] = self.singular_values[i];
                col
            })
            .collect();
        let mut dropped_sq = 0.0;
        for mut v in incoming {
            let mut coeffs = q.project_out(&mut v);
            let norm = g_norm(self.gram, &v);
            let scale = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt().max(norm);
            if norm > 1e-14 * scale && norm > 0.0 {
                v /= norm;
                q.gram_vectors.push(self.gram.mul_vec(v.as_slice()));
                q.vectors.push(v);
                coeffs.push(norm);
            } else {
                dropped_sq += norm * norm;
            }
            r_entries.push(coeffs);
        }
        let m = q.len();
        if m == 0 {
            self.error_bound_sq += dropped_sq;
            self.singular_values.clear();
            return;
        }
        let mut r = DMatrix::zeros(m, cols);
        for (j, col) in r_entries.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                r[(i, j)] = *v;
            }
        }
        let svd = r.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
        let sigmas: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

        // keep the fewest modes whose discarded tail fits into the remaining budget
        let budget = (tol_sq - dropped_sq).max(0.0);
        let mut tail = 0.0;
        let mut keep = sigmas.len();
        while keep > 0 {
            let s = sigmas[keep - 1];
            if tail + s * s > budget {
                break;
            }
            tail += s * s;
            keep -= 1;
        }
        // exactly zero singular values carry no information
        while keep > 0 && sigmas[keep - 1] == 0.0 {
            keep -= 1;
        }
        self.error_bound_sq += tail + dropped_sq;

        let basis = DMatrix::from_columns(&q.vectors);
        self.modes = order[..keep].iter().map(|&i| &basis * u.column(i)).collect();
        self.singular_values = sigmas[..keep].to_vec();
    }
}

/// One-shot HaPOD of a list of vectors.
pub fn hapod(vectors: &[DVector<f64>], gram: &CsrMatrix, config: HapodConfig) -> Result<HapodResult> {
    let mut h = Hapod::new(gram, config, vectors.len())?;
    for v in vectors {
        h.push(v.clone());
    }
    Ok(h.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        CsrMatrix::from_dense(&(&a * a.transpose() + DMatrix::identity(n, n)))
    }

    fn gram_matrix(g: &CsrMatrix, vs: &[DVector<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(vs.len(), vs.len(), |i, j| bilinear(g, vs[i].as_slice(), vs[j].as_slice()))
    }

    #[test]
    fn gram_schmidt_examples() {
        let id = CsrMatrix::identity(3);
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let e2 = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let out = gram_schmidt(&[e1.clone(), &e1 + &e2], &id, &[]);
        assert_eq!(out.len(), 2);
        assert!((&out[0] - &e1).amax() < 1e-15 && (&out[1] - &e2).amax() < 1e-15);

        let again = gram_schmidt(&out, &id, &[]);
        assert_eq!(again.len(), 2);
        assert!((&again[0] - &out[0]).amax() < 1e-15);

        assert!(gram_schmidt(&[&e1 * 3.0], &id, std::slice::from_ref(&e1)).is_empty());

        let g = random_spd(12, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vs: Vec<_> = (0..10).map(|_| DVector::from_fn(12, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let basis = gram_schmidt(&vs, &g, &[]);
        assert_eq!(basis.len(), 10);
        assert!((gram_matrix(&g, &basis) - DMatrix::identity(10, 10)).amax() < 1e-10);
    }

    #[test]
    fn single_and_duplicated_vectors() {
        let g = random_spd(6, 1);
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let norm = g_norm(&g, &v);
        let res = hapod(std::slice::from_ref(&v), &g, HapodConfig::default()).unwrap();
        assert_eq!(res.modes.len(), 1);
        assert!((res.singular_values[0] - norm).abs() < 1e-12 * norm);
        let mode = &res.modes[0];
        let aligned = if mode.dot(&v) < 0.0 { -mode.clone() } else { mode.clone() };
        assert!((aligned - &v / norm).amax() < 1e-12);

        let res = hapod(&[v.clone(), v.clone()], &g, HapodConfig::default()).unwrap();
        assert_eq!(res.modes.len(), 1);
    }

    #[test]
    fn streaming_peak_is_bounded() {
        let g = CsrMatrix::identity(30);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // rank-4 data
        let gen: Vec<_> = (0..4).map(|_| DVector::from_fn(30, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let vs: Vec<_> = (0..200)
            .map(|_| gen.iter().fold(DVector::zeros(30), |acc, b| acc + b * rng.gen_range(-1.0..1.0)))
            .collect();
        let cfg = HapodConfig { eps_pod: 1e-8, chunk_size: 10, omega: 0.75 };
        let res = hapod(&vs, &g, cfg).unwrap();
        assert_eq!(res.modes.len(), 4);
        assert!(res.peak_stored <= cfg.chunk_size + 4);
    }
}
