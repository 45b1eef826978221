//! Sparse symmetric linear algebra.
//!
//! Compressed-row storage, a banded LDLᵀ factorization that is computed once and
//! reused for many right-hand sides, a Sherman–Morrison–Woodbury solver for
//! low-rank corrections of a factored matrix, and a Jacobi-preconditioned CG
//! fallback.

use std::borrow::Borrow;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Compressed-row sparse matrix with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl CsrMatrix {
    /// Builds a matrix from (row, col, value) triplets; duplicates are summed in
    /// input order so the result is deterministic.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { nrows, ncols, row_ptr, col_idx, values, symmetric: false }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: diag.to_vec(),
            symmetric: true,
        }
    }

    /// Marks the matrix as symmetric after checking values to `rel_tol`.
    pub fn into_symmetric(mut self, rel_tol: f64) -> Result<Self> {
        if !self.is_symmetric(rel_tol) {
            return Err(Error::InvalidParameter("matrix is not symmetric".into()));
        }
        self.symmetric = true;
        Ok(self)
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

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        (0..self.nrows).all(|r| self.row(r).all(|(c, v)| (v - self.get(c, r)).abs() <= rel_tol * scale))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            *yr = self.col_idx[span.clone()]
                .iter()
                .zip(&self.values[span])
                .map(|(&c, &v)| v * x[c])
                .sum();
        }
    }

    /// Computes `Aᵀ x`.
    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
        y
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|r| self.get(r, r)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    /// Sum of scaled matrices of equal shape. Symmetry is kept if every term is symmetric.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> Self {
        let (nrows, ncols) = (terms[0].1.nrows, terms[0].1.ncols);
        let mut trip = Vec::new();
        for (s, m) in terms {
            assert_eq!((m.nrows, m.ncols), (nrows, ncols));
            for r in 0..m.nrows {
                trip.extend(m.row(r).map(|(c, v)| (r, c, s * v)));
            }
        }
        let mut out = Self::from_triplets(nrows, ncols, trip);
        out.symmetric = terms.iter().all(|(_, m)| m.symmetric);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                d[(r, c)] = v;
            }
        }
        d
    }

    /// Lower half-bandwidth: `max_r (r - min column in row r)`.
    pub fn lower_bandwidth(&self) -> usize {
        (0..self.nrows)
            .filter_map(|r| self.row(r).next().map(|(c, _)| r.saturating_sub(c)))
            .max()
            .unwrap_or(0)
    }
}

/// Dot product with four independent accumulators (fixed summation order).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Banded LDLᵀ factorization in natural ordering.
///
/// Row `i` of the unit lower factor keeps the `bandwidth` entries left of the
/// diagonal, stored contiguously so both triangular sweeps are plain dot
/// products and axpys.
#[derive(Debug, Clone)]
pub struct Factorization {
    n: usize,
    bandwidth: usize,
    lower: Vec<f64>,
    pivots: Vec<f64>,
}

/// Factors a symmetric matrix. With `spd` set every pivot must be positive;
/// otherwise only nonzero pivots are required.
pub fn factorize(a: &CsrMatrix, spd: bool) -> Result<Factorization> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
    }
    let n = a.nrows();
    let bw = a.lower_bandwidth();
    let mut lower = vec![0.0; n * bw];
    let mut pivots = vec![0.0; n];
    // row of L_ik * D_k for the row being factored
    let mut scaled = vec![0.0; bw];
    let scale = a.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));

    for i in 0..n {
        let lo = i.saturating_sub(bw);
        let mut diag = 0.0;
        for (c, v) in a.row(i) {
            match c.cmp(&i) {
                std::cmp::Ordering::Less => lower[band_index(bw, i, c)] = v,
                std::cmp::Ordering::Equal => diag = v,
                std::cmp::Ordering::Greater => break,
            }
        }
        for j in lo..i {
            let kstart = lo.max(j.saturating_sub(bw));
            let row_j = &lower[band_index(bw, j, kstart)..band_index(bw, j, j)];
            let s = lower[band_index(bw, i, j)] - dot(&scaled[kstart - lo..j - lo], row_j);
            scaled[j - lo] = s;
            lower[band_index(bw, i, j)] = s / pivots[j];
        }
        let row_i = &lower[band_index(bw, i, lo)..band_index(bw, i, i)];
        let d = diag - dot(&scaled[..i - lo], row_i);
        let tiny = 1e-14 * scale.max(f64::MIN_POSITIVE);
        if !d.is_finite() || (spd && d <= tiny) || (!spd && d.abs() <= tiny) {
            return Err(Error::Breakdown { row: i, pivot: d });
        }
        pivots[i] = d;
    }
    Ok(Factorization { n, bandwidth: bw, lower, pivots })
}

/// Position of `L_ij` (`i - bw <= j <= i`) in the row-major band storage.
#[inline]
fn band_index(bw: usize, i: usize, j: usize) -> usize {
    i * bw + bw + j - i
}

impl Factorization {
    fn row(&self, i: usize, lo: usize) -> &[f64] {
        let bw = self.bandwidth;
        &self.lower[band_index(bw, i, lo)..band_index(bw, i, i)]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        let bw = self.bandwidth;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            x[i] -= dot(self.row(i, lo), &x[lo..i]);
        }
        for (xi, d) in x.iter_mut().zip(&self.pivots) {
            *xi /= d;
        }
        for i in (0..self.n).rev() {
            let lo = i.saturating_sub(bw);
            let xi = x[i];
            for (xj, l) in x[lo..i].iter_mut().zip(self.row(i, lo)) {
                *xj -= l * xi;
            }
        }
    }
}

/// Represents `S = Base + sign · U W Uᵀ` with a dense `n × r` block `U` and a
/// symmetric `r × r` core `W`.
#[derive(Debug, Clone)]
pub struct LowRankCorrection {
    pub u: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub sign: f64,
}

impl LowRankCorrection {
    pub const MAX_RANK: usize = 128;

    pub fn new(u: DMatrix<f64>, w: DMatrix<f64>, sign: f64) -> Result<Self> {
        let r = u.ncols();
        if w.shape() != (r, r) {
            return Err(Error::DimensionMismatch { expected: r, got: w.nrows() });
        }
        if r > Self::MAX_RANK {
            return Err(Error::InvalidParameter(format!("rank {r} exceeds {}", Self::MAX_RANK)));
        }
        if sign.abs() != 1.0 {
            return Err(Error::InvalidParameter("sign must be +1 or -1".into()));
        }
        Ok(Self { u, w, sign })
    }

    pub fn zero(n: usize) -> Self {
        Self { u: DMatrix::zeros(n, 0), w: DMatrix::zeros(0, 0), sign: 1.0 }
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    /// `sign · U W Uᵀ x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if self.rank() == 0 {
            return vec![0.0; x.len()];
        }
        let ut_x = self.u.tr_mul(&DVector::from_column_slice(x));
        let y = &self.u * (&self.w * ut_x) * self.sign;
        y.as_slice().to_vec()
    }

    pub fn diag(&self) -> Vec<f64> {
        let uw = &self.u * &self.w;
        (0..self.u.nrows())
            .map(|i| self.sign * uw.row(i).dot(&self.u.row(i)))
            .collect()
    }
}

/// Woodbury solver with `Base⁻¹ U` and the core LU precomputed.
#[derive(Debug, Clone)]
pub struct SmwSolver<B = Factorization> {
    base: B,
    corr: LowRankCorrection,
    base_inv_u: DMatrix<f64>,
    core: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<B: Borrow<Factorization>> SmwSolver<B> {
    pub fn new(base: B, corr: LowRankCorrection) -> Result<Self> {
        let n = base.borrow().dim();
        if corr.u.nrows() != n && corr.rank() > 0 {
            return Err(Error::DimensionMismatch { expected: n, got: corr.u.nrows() });
        }
        let r = corr.rank();
        let mut base_inv_u = DMatrix::zeros(n, r);
        for j in 0..r {
            let mut col: Vec<f64> = corr.u.column(j).iter().copied().collect();
            base.borrow().solve_in_place(&mut col);
            base_inv_u.column_mut(j).copy_from_slice(&col);
        }
        let core_mat = DMatrix::identity(r, r) + &corr.w * corr.u.tr_mul(&base_inv_u) * corr.sign;
        let core = core_mat.lu();
        if r > 0 && !core.is_invertible() {
            return Err(Error::SingularCore);
        }
        Ok(Self { base, corr, base_inv_u, core })
    }

    pub fn rank(&self) -> usize {
        self.corr.rank()
    }

    pub fn base(&self) -> &Factorization {
        self.base.borrow()
    }

    pub fn correction(&self) -> &LowRankCorrection {
        &self.corr
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        self.base.borrow().solve_in_place(x);
        if self.rank() == 0 {
            return Ok(());
        }
        let ut_x = self.corr.u.tr_mul(&DVector::from_column_slice(x));
        let rhs = &self.corr.w * ut_x * self.corr.sign;
        let c = self.core.solve(&rhs).ok_or(Error::SingularCore)?;
        let zc = &self.base_inv_u * c;
        for (xi, d) in x.iter_mut().zip(zc.iter()) {
            *xi -= d;
        }
        Ok(())
    }
}

/// One-shot `(Base + sign·U W Uᵀ)⁻¹ b`.
pub fn smw_solve(base: &Factorization, corr: &LowRankCorrection, b: &[f64]) -> Result<Vec<f64>> {
    SmwSolver::new(base, corr.clone())?.solve(b)
}

#[derive(Debug, Clone)]
pub struct PcgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

/// Jacobi-preconditioned conjugate gradients for an SPD operator, started from zero.
/// Stops when `‖r‖ ≤ tol · ‖b‖`.
pub fn pcg_solve<F>(mut apply: F, precond_diag: &[f64], b: &[f64], tol: f64, maxit: usize) -> Result<PcgOutcome>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("pcg tolerance must be positive".into()));
    }
    let n = b.len();
    if precond_diag.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: precond_diag.len() });
    }
    let b_norm = norm2(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(PcgOutcome { x, iterations: 0, residuals: vec![0.0] });
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(precond_diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut residuals = vec![1.0];
    for it in 1..=maxit {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Breakdown { row: it, pivot: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = norm2(&r) / b_norm;
        residuals.push(rel);
        if rel <= tol {
            return Ok(PcgOutcome { x, iterations: it, residuals });
        }
        for i in 0..n {
            z[i] = r[i] / precond_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence { iterations: maxit, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, d: f64, off: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, d));
            if i + 1 < n {
                t.push((i, i + 1, off));
                t.push((i + 1, i, off));
            }
        }
        CsrMatrix::from_triplets(n, n, t).into_symmetric(1e-13).unwrap()
    }

    #[test]
    fn triplets_are_summed_and_sorted() {
        let m = CsrMatrix::from_triplets(2, 3, vec![(1, 2, 1.0), (0, 1, 2.0), (1, 0, 3.0), (0, 1, 0.5)]);
        assert_eq!(m.row_ptr(), &[0, 1, 3]);
        assert_eq!(m.col_idx(), &[1, 0, 2]);
        assert_eq!(m.values(), &[2.5, 3.0, 1.0]);
        assert_eq!(m.transpose_mul_vec(&[1.0, 2.0]), vec![6.0, 2.5, 2.0]);
    }

    #[test]
    fn diagonal_two_solves_to_ones() {
        let a = CsrMatrix::diagonal(&[2.0; 7]);
        let f = factorize(&a, true).unwrap();
        assert_eq!(f.bandwidth(), 0);
        assert_eq!(f.solve(&[2.0; 7]), vec![1.0; 7]);
    }

    #[test]
    fn banded_factorization_matches_dense() {
        let a = tridiag(30, 4.0, -1.0);
        let f = factorize(&a, true).unwrap();
        let b: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let x = f.solve(&b);
        let dense = a.to_dense().cholesky().unwrap().solve(&DVector::from_column_slice(&b));
        for (u, v) in x.iter().zip(dense.iter()) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn indefinite_pivot_is_reported() {
        let a = tridiag(5, 1.0, 2.0);
        match factorize(&a, true) {
            Err(Error::Breakdown { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected breakdown, got {other:?}"),
        }
        // same matrix is acceptable as a symmetric indefinite system
        let f = factorize(&a, false).unwrap();
        let x = f.solve(&a.mul_vec(&[1.0; 5]));
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_rank_smw_is_base_solve() {
        let a = tridiag(10, 3.0, -1.0);
        let f = factorize(&a, true).unwrap();
        let b = vec![1.0; 10];
        let x = smw_solve(&f, &LowRankCorrection::zero(10), &b).unwrap();
        assert_eq!(x, f.solve(&b));
    }

    #[test]
    fn pcg_reports_nonconvergence() {
        let a = tridiag(50, 2.0, -1.0);
        let b = vec![1.0; 50];
        let res = pcg_solve(|x, y| a.mul_vec_into(x, y), &a.diag(), &b, 1e-30, 2);
        match res {
            Err(Error::NonConvergence { iterations, residuals }) => {
                assert_eq!(iterations, 2);
                assert_eq!(residuals.len(), 3);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn pcg_solves_tridiagonal() {
        let a = tridiag(50, 2.5, -1.0);
        let b = a.mul_vec(&[1.0; 50]);
        let out = pcg_solve(|x, y| a.mul_vec_into(x, y), &a.diag(), &b, 1e-12, 200).unwrap();
        assert!(out.x.iter().all(|v| (v - 1.0).abs() < 1e-10));
    }
}
