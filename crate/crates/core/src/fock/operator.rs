use std::sync::Arc;

use num_complex::Complex;

use super::FockSpace;
use crate::error::{Error, Result};
use crate::scalar::{as_reals, as_reals_mut, czero, hermitian_tolerance, Real, C};

/// Complex square matrix on a [`FockSpace`], stored row-compressed.
///
/// `hermitian` is a tag computed at construction: it is set only when
/// `max |A - A^dagger| <= tol * max |A|`.
#[derive(Debug, Clone)]
pub struct OperatorMatrix<T> {
    space: Arc<FockSpace>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C<T>>,
    hermitian: bool,
}

impl<T: Real> OperatorMatrix<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(space: Arc<FockSpace>, mut triplets: Vec<(usize, usize, C<T>)>) -> Self {
        let dim = space.dim();
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<C<T>> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            assert!(r < dim && c < dim, "triplet ({r}, {c}) outside a {dim}-dimensional space");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() = *vals.last().unwrap() + v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
                last = Some((r, c));
            }
        }
        let mut kept_cols = Vec::with_capacity(cols.len());
        let mut kept_vals = Vec::with_capacity(vals.len());
        for ((r, c), v) in rows.into_iter().zip(cols).zip(vals) {
            if v != czero() {
                row_ptr[r + 1] += 1;
                kept_cols.push(c);
                kept_vals.push(v);
            }
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self::from_csr(space, row_ptr, kept_cols, kept_vals)
    }

    fn from_csr(space: Arc<FockSpace>, row_ptr: Vec<usize>, cols: Vec<usize>, vals: Vec<C<T>>) -> Self {
        let mut op = Self {
            space,
            row_ptr,
            cols,
            vals,
            hermitian: false,
        };
        let scale = op.max_abs();
        op.hermitian = op.hermiticity_residue() <= hermitian_tolerance::<T>() * scale;
        op
    }

    pub fn zeros(space: Arc<FockSpace>) -> Self {
        let dim = space.dim();
        Self::from_csr(space, vec![0; dim + 1], Vec::new(), Vec::new())
    }

    pub fn identity(space: Arc<FockSpace>) -> Self {
        let dim = space.dim();
        let one = Complex::new(T::one(), T::zero());
        Self::from_csr(space, (0..=dim).collect(), (0..dim).collect(), vec![one; dim])
    }

    /// Builds from a dense row-major matrix, dropping exact zeros.
    pub fn from_dense(space: Arc<FockSpace>, dense: &[C<T>]) -> Result<Self> {
        let dim = space.dim();
        if dense.len() != dim * dim {
            return Err(Error::LengthMismatch {
                what: "dense operator entries",
                expected: dim * dim,
                found: dense.len(),
            });
        }
        let triplets = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != czero())
            .map(|(k, v)| (k / dim, k % dim, *v))
            .collect();
        Ok(Self::from_triplets(space, triplets))
    }

    pub fn space(&self) -> &Arc<FockSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    /// Column indices and values stored in row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[C<T>]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> C<T> {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => czero(),
        }
    }

    pub fn to_dense(&self) -> Vec<C<T>> {
        let dim = self.dim();
        let mut out = vec![czero(); dim * dim];
        for i in 0..dim {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out[i * dim + j] = v;
            }
        }
        out
    }

    pub fn max_abs(&self) -> T {
        self.vals.iter().fold(T::zero(), |m, v| m.max(v.norm()))
    }

    /// `max |A_ij - conj(A_ji)|`
    pub fn hermiticity_residue(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.dim() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    /// Upper bound on the induced 1-norm (max absolute row sum; equal to the
    /// column sum bound for Hermitian matrices).
    pub fn row_sum_norm(&self) -> T {
        (0..self.dim())
            .map(|i| self.row(i).1.iter().map(|v| v.norm()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    pub fn adjoint(&self) -> Self {
        let triplets = self.triplets().map(|(i, j, v)| (j, i, v.conj())).collect();
        Self::from_triplets(self.space.clone(), triplets)
    }

    fn triplets(&self) -> impl Iterator<Item = (usize, usize, C<T>)> + '_ {
        (0..self.dim()).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    /// `sum_k c_k A_k` over operators on a common space.
    pub fn lincomb(space: Arc<FockSpace>, terms: &[(C<T>, &OperatorMatrix<T>)]) -> Result<Self> {
        for (_, op) in terms {
            if **op.space() != *space {
                return Err(Error::SpaceMismatch);
            }
        }
        let dim = space.dim();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut scratch: Vec<(usize, C<T>)> = Vec::new();
        for i in 0..dim {
            scratch.clear();
            for (c, op) in terms {
                if *c == czero() {
                    continue;
                }
                let (rc, rv) = op.row(i);
                scratch.extend(rc.iter().zip(rv).map(|(&j, &v)| (j, *c * v)));
            }
            scratch.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < scratch.len() {
                let j = scratch[k].0;
                let mut acc = czero();
                while k < scratch.len() && scratch[k].0 == j {
                    acc = acc + scratch[k].1;
                    k += 1;
                }
                if acc != czero() {
                    cols.push(j);
                    vals.push(acc);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self::from_csr(space, row_ptr, cols, vals))
    }

    pub fn scaled(&self, c: C<T>) -> Self {
        let vals = self.vals.iter().map(|v| *v * c).collect();
        Self::from_csr(self.space.clone(), self.row_ptr.clone(), self.cols.clone(), vals)
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.space != other.space && *self.space != *other.space {
            return Err(Error::SpaceMismatch);
        }
        let mut triplets = Vec::new();
        let mut acc = vec![czero::<T>(); self.dim()];
        let mut touched = Vec::new();
        for i in 0..self.dim() {
            let (ac, av) = self.row(i);
            for (&k, &a) in ac.iter().zip(av) {
                let (bc, bv) = other.row(k);
                for (&j, &b) in bc.iter().zip(bv) {
                    if acc[j] == czero() {
                        touched.push(j);
                    }
                    acc[j] = acc[j] + a * b;
                }
            }
            for &j in &touched {
                triplets.push((i, j, acc[j]));
                acc[j] = czero();
            }
            touched.clear();
        }
        Ok(Self::from_triplets(self.space.clone(), triplets))
    }

    /// `[self, other]`
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        let ab = self.matmul(other)?;
        let ba = other.matmul(self)?;
        let one = Complex::new(T::one(), T::zero());
        Self::lincomb(self.space.clone(), &[(one, &ab), (-one, &ba)])
    }

    /// `y = A x`
    pub fn apply(&self, x: &[C<T>], y: &mut [C<T>]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).fold(czero(), |acc, (&j, &v)| acc + v * x[j]);
        }
    }

    pub fn apply_vec(&self, x: &[C<T>]) -> Vec<C<T>> {
        let mut y = vec![czero(); self.dim()];
        self.apply(x, &mut y);
        y
    }

    /// `<x|A|y>`
    pub fn bracket(&self, x: &[C<T>], y: &[C<T>]) -> C<T> {
        let mut acc = czero();
        for (i, xi) in x.iter().enumerate() {
            let (cols, vals) = self.row(i);
            let row = cols.iter().zip(vals).fold(czero(), |a, (&j, &v)| a + v * y[j]);
            acc = acc + xi.conj() * row;
        }
        acc
    }

    /// `out = A * M` for a dense row-major `M`.
    pub fn mul_dense(&self, m: &[C<T>], out: &mut [C<T>]) {
        let dim = self.dim();
        for i in 0..dim {
            let orow = &mut out[i * dim..(i + 1) * dim];
            orow.iter_mut().for_each(|z| *z = czero());
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                let mrow = &m[k * dim..(k + 1) * dim];
                if a.im == T::zero() {
                    // real coefficient: a plain axpy over interleaved reals
                    let ar = a.re;
                    for (o, x) in as_reals_mut(orow).iter_mut().zip(as_reals(mrow)) {
                        *o = *o + ar * *x;
                    }
                } else {
                    for (o, x) in orow.iter_mut().zip(mrow) {
                        *o = *o + a * *x;
                    }
                }
            }
        }
    }

    /// `out = M * A^dagger` for a dense row-major `M`.
    pub fn dense_mul_adjoint(&self, m: &[C<T>], out: &mut [C<T>]) {
        let dim = self.dim();
        for i in 0..dim {
            let mrow = &m[i * dim..(i + 1) * dim];
            let orow = &mut out[i * dim..(i + 1) * dim];
            for (j, o) in orow.iter_mut().enumerate() {
                let (cols, vals) = self.row(j);
                *o = cols
                    .iter()
                    .zip(vals)
                    .fold(czero(), |acc, (&k, &a)| acc + mrow[k] * a.conj());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::make_space;
    use crate::scalar::creal;

    fn random_dense(dim: usize, seed: u64) -> Vec<C<f64>> {
        let mut s = seed;
        (0..dim * dim)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let a = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let b = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
                if (s >> 60) < 6 { Complex::new(a, b) } else { czero() }
            })
            .collect()
    }

    fn dense_mul(n: usize, a: &[C<f64>], b: &[C<f64>]) -> Vec<C<f64>> {
        let mut out = vec![czero(); n * n];
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    out[i * n + j] += a[i * n + k] * b[k * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn sparse_products_match_dense() {
        let space = make_space(2, 3).unwrap();
        let n = space.dim();
        let a = random_dense(n, 1);
        let b = random_dense(n, 2);
        let sa = OperatorMatrix::from_dense(space.clone(), &a).unwrap();
        let sb = OperatorMatrix::from_dense(space.clone(), &b).unwrap();
        let ab = sa.matmul(&sb).unwrap().to_dense();
        for (x, y) in ab.iter().zip(dense_mul(n, &a, &b)) {
            assert!((x - y).norm() < 1e-14);
        }
        let mut out = vec![czero(); n * n];
        sa.mul_dense(&b, &mut out);
        for (x, y) in out.iter().zip(dense_mul(n, &a, &b)) {
            assert!((x - y).norm() < 1e-14);
        }
        let bdag: Vec<_> = (0..n * n).map(|k| b[(k % n) * n + k / n].conj()).collect();
        sb.dense_mul_adjoint(&a, &mut out);
        for (x, y) in out.iter().zip(dense_mul(n, &a, &bdag)) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn hermitian_tag() {
        let space = make_space(1, 3).unwrap();
        let a = random_dense(3, 7);
        let op = OperatorMatrix::from_dense(space.clone(), &a).unwrap();
        let h = OperatorMatrix::lincomb(space.clone(), &[(creal(1.0), &op), (creal(1.0), &op.adjoint())]).unwrap();
        assert!(h.is_hermitian());
        assert!(!OperatorMatrix::from_triplets(space.clone(), vec![(0, 1, creal(1.0))]).is_hermitian());
        assert!(OperatorMatrix::<f64>::zeros(space.clone()).is_hermitian());
        assert!(OperatorMatrix::<f64>::identity(space).is_hermitian());
    }

    #[test]
    fn lincomb_cancels_to_empty() {
        let space = make_space(1, 4).unwrap();
        let id = OperatorMatrix::<f64>::identity(space.clone());
        let z = OperatorMatrix::lincomb(space, &[(creal(2.0), &id), (creal(-2.0), &id)]).unwrap();
        assert_eq!(z.nnz(), 0);
    }

    #[test]
    fn lincomb_rejects_foreign_space() {
        let a = OperatorMatrix::<f64>::identity(make_space(1, 4).unwrap());
        assert!(matches!(
            OperatorMatrix::lincomb(make_space(1, 3).unwrap(), &[(creal(1.0), &a)]),
            Err(Error::SpaceMismatch)
        ));
    }
}
