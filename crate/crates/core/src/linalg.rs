//! Sparse storage and the banded direct solver used by the full-order model.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, _, _) in triplets {
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) out of bounds");
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for i in 0..nrows {
            scratch.clear();
            scratch.extend((counts[i]..counts[i + 1]).map(|p| (cols[p], vals[p])));
            scratch.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for &(j, v) in &scratch {
                if last == Some(j) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)] != 0.0 {
                    t.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), &t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j, x))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> DVector<f64> {
        let mut y = DVector::zeros(self.nrows);
        self.mul_vec_into(x, y.as_mut_slice());
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            let (c, v) = self.row(i);
            *yi = c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum();
        }
    }

    /// `A X` for a dense block of columns.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, x.ncols());
        for c in 0..x.ncols() {
            let col = x.column(c);
            let src = col.as_slice();
            let mut dst = out.column_mut(c);
            for i in 0..self.nrows {
                let (cols, vals) = self.row(i);
                dst[i] = cols.iter().zip(vals).map(|(&j, &a)| a * src[j]).sum();
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= a);
        out
    }

    /// `sum_q c_q A_q` over matrices of equal shape.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> Result<Self> {
        let Some((_, first)) = terms.first() else {
            return Err(Error::InvalidArgument("empty linear combination".into()));
        };
        let mut t = Vec::with_capacity(terms.iter().map(|(_, m)| m.nnz()).sum());
        for (c, m) in terms {
            if m.nrows != first.nrows || m.ncols != first.ncols {
                return Err(Error::DimensionMismatch { expected: first.nrows, got: m.nrows });
            }
            t.extend(m.triplets().map(|(i, j, v)| (i, j, c * v)));
        }
        Ok(Self::from_triplets(first.nrows, first.ncols, &t))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] += v;
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `max |A - A^T|`.
    pub fn asymmetry(&self) -> f64 {
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    /// Zeroes constrained rows and columns and puts a unit diagonal on them.
    pub fn constrained(&self, constrained: &[bool]) -> Self {
        assert_eq!(constrained.len(), self.nrows);
        let mut t: Vec<_> = self
            .triplets()
            .filter(|&(i, j, _)| !constrained[i] && !constrained[j])
            .collect();
        t.extend(constrained.iter().enumerate().filter(|(_, c)| **c).map(|(i, _)| (i, i, 1.0)));
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    /// Largest `|i - j|` over stored entries after applying the permutation `inv` (old -> new).
    fn bandwidths(&self, inv: &[usize]) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for (i, j, _) in self.triplets() {
            let (pi, pj) = (inv[i], inv[j]);
            if pi > pj {
                kl = kl.max(pi - pj);
            } else {
                ku = ku.max(pj - pi);
            }
        }
        (kl, ku)
    }
}

/// Reverse Cuthill-McKee ordering of the symmetrized sparsity pattern.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j, _) in a.triplets() {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

    let bfs_levels = |start: usize, seen: &mut Vec<bool>| -> Vec<usize> {
        let mut order = vec![start];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !seen[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                seen[w] = true;
                order.push(w);
                queue.push_back(w);
            }
        }
        order
    };

    let mut visited = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start: the last node of a BFS from the seed
        let mut probe = visited.clone();
        let start = *bfs_levels(seed, &mut probe).last().unwrap();
        let order = bfs_levels(start, &mut visited);
        perm.extend(order);
    }
    perm.reverse();
    perm
}

/// LU factorization without pivoting in band storage.
///
/// Valid for matrices whose symmetric part is positive definite, which covers
/// every system matrix assembled by this crate.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    perm: Vec<usize>,
    inv: Vec<usize>,
    band: Vec<f64>,
}

impl BandedLu {
    /// Factorizes with the cheaper of the natural and reverse Cuthill-McKee orderings.
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        let natural: Vec<usize> = (0..n).collect();
        let rcm = reverse_cuthill_mckee(a);
        let inv_rcm = invert(&rcm);
        let (kl0, ku0) = a.bandwidths(&natural);
        let (kl1, ku1) = a.bandwidths(&inv_rcm);
        if kl1 + ku1 < kl0 + ku0 {
            Self::factor_with_ordering(a, rcm)
        } else {
            Self::factor_with_ordering(a, natural)
        }
    }

    pub fn factor_with_ordering(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
        }
        let inv = invert(&perm);
        let (kl, ku) = a.bandwidths(&inv);
        let width = kl + ku + 1;
        let mut band = vec![0.0; n * width];
        let mut scale = 0.0_f64;
        for (i, j, v) in a.triplets() {
            let (pi, pj) = (inv[i], inv[j]);
            band[pi * width + (pj + kl - pi)] += v;
            scale = scale.max(v.abs());
        }
        let tiny = scale * 1e-14;
        for k in 0..n {
            let pivot = band[k * width + kl];
            if !(pivot.abs() > tiny) || !pivot.is_finite() {
                return Err(Error::SingularMatrix);
            }
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + ku).min(n - 1);
            for i in (k + 1)..=last_row {
                let lik_pos = i * width + (k + kl - i);
                let l = band[lik_pos] / pivot;
                band[lik_pos] = l;
                if l == 0.0 {
                    continue;
                }
                for j in (k + 1)..=last_col {
                    band[i * width + (j + kl - i)] -= l * band[k * width + (j + kl - k)];
                }
            }
        }
        Ok(Self { n, kl, ku, perm, inv, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    /// True when every pivot is positive; for a symmetric input this certifies definiteness.
    pub fn pivots_positive(&self) -> bool {
        let width = self.kl + self.ku + 1;
        (0..self.n).all(|k| self.band[k * width + self.kl] > 0.0)
    }

    pub fn solve(&self, b: &[f64]) -> DVector<f64> {
        let mut y = vec![0.0; self.n];
        for (old, &v) in b.iter().enumerate() {
            y[self.inv[old]] = v;
        }
        self.solve_permuted_in_place(&mut y);
        DVector::from_iterator(self.n, (0..self.n).map(|old| y[self.inv[old]]))
    }

    /// Solves in place; `x` holds the right-hand side on entry.
    pub fn solve_in_place(&self, x: &mut [f64], work: &mut Vec<f64>) {
        work.resize(self.n, 0.0);
        for (old, &v) in x.iter().enumerate() {
            work[self.inv[old]] = v;
        }
        self.solve_permuted_in_place(work);
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = work[new];
        }
    }

    fn solve_permuted_in_place(&self, y: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let width = kl + ku + 1;
        for i in 0..n {
            let first = i.saturating_sub(kl);
            let row = &self.band[i * width..(i + 1) * width];
            let mut s = y[i];
            for j in first..i {
                s -= row[j + kl - i] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let last = (i + ku).min(n - 1);
            let row = &self.band[i * width..(i + 1) * width];
            let mut s = y[i];
            for j in (i + 1)..=last {
                s -= row[j + kl - i] * y[j];
            }
            y[i] = s / row[kl];
        }
    }
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

/// `x^T A y` for a sparse `A`.
pub fn bilinear(a: &CsrMatrix, x: &[f64], y: &[f64]) -> f64 {
    (0..a.nrows())
        .map(|i| {
            let (c, v) = a.row(i);
            x[i] * c.iter().zip(v).map(|(&j, &aij)| aij * y[j]).sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplacian_2d(nx: usize, ny: usize) -> CsrMatrix {
        let idx = |i: usize, j: usize| j * nx + i;
        let mut t = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let p = idx(i, j);
                t.push((p, p, 4.5));
                if i > 0 {
                    t.push((p, idx(i - 1, j), -1.2));
                }
                if i + 1 < nx {
                    t.push((p, idx(i + 1, j), -0.8));
                }
                if j > 0 {
                    t.push((p, idx(i, j - 1), -1.0));
                }
                if j + 1 < ny {
                    t.push((p, idx(i, j + 1), -1.0));
                }
            }
        }
        CsrMatrix::from_triplets(nx * ny, nx * ny, &t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, -1.0), (0, 0, 4.0)]);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.to_dense(), DMatrix::from_row_slice(2, 2, &[4.0, 3.0, -1.0, 0.0]));
        assert_eq!(a.transpose().get(1, 0), 3.0);
    }

    #[test]
    fn banded_lu_matches_dense_solve() {
        let a = laplacian_2d(30, 7);
        let lu = BandedLu::factor(&a).unwrap();
        assert!(lu.bandwidth().0 <= 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b: Vec<f64> = (0..a.nrows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = lu.solve(&b);
        let oracle = a.to_dense().lu().solve(&DVector::from_vec(b.clone())).unwrap();
        assert!((x - &oracle).amax() < 1e-12);

        let mut inplace = b.clone();
        let mut work = Vec::new();
        lu.solve_in_place(&mut inplace, &mut work);
        assert!((DVector::from_vec(inplace) - oracle).amax() < 1e-12);
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = laplacian_2d(9, 4);
        let mut p = reverse_cuthill_mckee(&a);
        p.sort_unstable();
        assert_eq!(p, (0..36).collect::<Vec<_>>());
    }

    #[test]
    fn singular_detected() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 0.0)]);
        assert!(matches!(BandedLu::factor(&a), Err(Error::SingularMatrix)));
    }

    #[test]
    fn constrained_rows() {
        let a = laplacian_2d(3, 3);
        let mut mask = vec![false; 9];
        mask[0] = true;
        let c = a.constrained(&mask);
        assert_eq!(c.get(0, 0), 1.0);
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.get(1, 0), 0.0);
        assert_eq!(c.get(1, 1), a.get(1, 1));
    }

    #[test]
    fn linear_combination_and_bilinear() {
        let a = laplacian_2d(4, 4);
        let i = CsrMatrix::identity(16);
        let c = CsrMatrix::linear_combination(&[(2.0, &a), (-1.0, &i)]).unwrap();
        let dense = a.to_dense() * 2.0 - DMatrix::identity(16, 16);
        assert!((c.to_dense() - &dense).amax() < 1e-15);
        let x: Vec<f64> = (0..16).map(|k| k as f64).collect();
        let y: Vec<f64> = (0..16).map(|k| (k as f64).cos()).collect();
        let oracle = DVector::from_vec(x.clone()).dot(&(&dense * DVector::from_vec(y.clone())));
        assert!((bilinear(&c, &x, &y) - oracle).abs() < 1e-10);
    }
}
