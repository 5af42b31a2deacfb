use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{BandedLu, CsrMatrix};

/// Solves `G r = f`; `sqrt(f . r)` is the dual norm of `f`.
pub fn riesz_representative(gram: &CsrMatrix, functional: &DVector<f64>) -> Result<DVector<f64>> {
    if functional.len() != gram.nrows() {
        return Err(Error::DimensionMismatch { expected: gram.nrows(), got: functional.len() });
    }
    let lu = BandedLu::factor(gram)?;
    Ok(lu.solve(functional.as_slice()))
}

/// `sqrt(f^T G^{-1} f)` using a factorized Gram matrix, negative radicands clamped to zero.
pub fn dual_norm(solver: &BandedLu, functional: &DVector<f64>) -> f64 {
    let r = solver.solve(functional.as_slice());
    functional.dot(&r).max(0.0).sqrt()
}

/// Incrementally built orthonormal basis (in the energy product) of the span of the Riesz
/// representatives of a growing family of functionals.
///
/// Each functional is stored by its coordinates in this basis, so the dual norm of any linear
/// combination of functionals is the Euclidean norm of the combined coordinates.
#[derive(Clone, Debug, Default)]
pub struct RieszImage {
    basis: Vec<DVector<f64>>,
    gram_basis: Vec<DVector<f64>>,
}

/// Relative size below which a new direction is treated as already contained in the span.
const DEPENDENCE_TOL: f64 = 1e-13;

impl RieszImage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Adds the Riesz representative of `functional` and returns its coordinates.
    pub fn insert(&mut self, gram: &CsrMatrix, solver: &BandedLu, functional: &DVector<f64>) -> Vec<f64> {
        let mut r = solver.solve(functional.as_slice());
        let total = functional.dot(&r).max(0.0).sqrt();
        let mut coords: Vec<f64> = self.basis.iter().map(|q| q.dot(functional)).collect();
        for (c, q) in coords.iter().zip(&self.basis) {
            r.axpy(-c, q, 1.0);
        }
        let mut norm = gram_norm(gram, &r);
        // reorthogonalize until the norm stops collapsing
        for _ in 0..3 {
            if self.basis.is_empty() || norm <= DEPENDENCE_TOL * total {
                break;
            }
            let before = norm;
            for (c, (q, gq)) in coords.iter_mut().zip(self.basis.iter().zip(&self.gram_basis)) {
                let d = gq.dot(&r);
                *c += d;
                r.axpy(-d, q, 1.0);
            }
            norm = gram_norm(gram, &r);
            if norm > 0.7 * before {
                break;
            }
        }
        if total > 0.0 && norm > DEPENDENCE_TOL * total {
            r /= norm;
            self.gram_basis.push(gram.mul_vec(r.as_slice()));
            self.basis.push(r);
            coords.push(norm);
        }
        coords
    }
}

fn gram_norm(gram: &CsrMatrix, v: &DVector<f64>) -> f64 {
    crate::linalg::bilinear(gram, v.as_slice(), v.as_slice()).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * n as f64
    }

    #[test]
    fn identity_and_zero() {
        let g = CsrMatrix::identity(4);
        let f = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        assert_eq!(riesz_representative(&g, &f).unwrap(), f);
        let z = DVector::zeros(4);
        let lu = BandedLu::factor(&g).unwrap();
        assert_eq!(riesz_representative(&g, &z).unwrap(), z);
        assert_eq!(dual_norm(&lu, &z), 0.0);
    }

    #[test]
    fn dual_norm_matches_dense_inverse() {
        let gd = random_spd(5, 11);
        let g = CsrMatrix::from_dense(&gd);
        let f = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.1, -0.7]);
        let oracle = f.dot(&(gd.clone().try_inverse().unwrap() * &f)).sqrt();
        let lu = BandedLu::factor(&g).unwrap();
        assert!((dual_norm(&lu, &f) - oracle).abs() < 1e-10 * oracle);
    }

    #[test]
    fn image_coordinates_reproduce_dual_norms() {
        let gd = random_spd(8, 5);
        let g = CsrMatrix::from_dense(&gd);
        let lu = BandedLu::factor(&g).unwrap();
        let ginv = gd.try_inverse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fs: Vec<DVector<f64>> = (0..5).map(|_| DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let mut image = RieszImage::new();
        let mut coords = Vec::new();
        for f in &fs {
            coords.push(image.insert(&g, &lu, f));
        }
        // a dependent functional adds no direction
        let dep = &fs[0] * 2.0 - &fs[3];
        let c_dep = image.insert(&g, &lu, &dep);
        assert_eq!(image.len(), 5);
        let w = [0.5, -1.5, 2.0, 0.25, -0.75];
        let mut combined = DVector::zeros(8);
        let mut cc = vec![0.0; image.len()];
        for (wi, (f, c)) in w.iter().zip(fs.iter().zip(&coords)) {
            combined.axpy(*wi, f, 1.0);
            for (k, v) in c.iter().enumerate() {
                cc[k] += wi * v;
            }
        }
        let oracle = combined.dot(&(&ginv * &combined)).sqrt();
        let norm = cc.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - oracle).abs() < 1e-12 * oracle);
        let dep_norm = c_dep.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((dep_norm - dep.dot(&(&ginv * &dep)).sqrt()).abs() < 1e-12 * dep_norm);
    }
}
