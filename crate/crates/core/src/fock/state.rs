use std::sync::Arc;

use num_complex::Complex;

use super::{FockSpace, OperatorMatrix};
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::{czero, inner, norm, Real, C};

/// Pure state on a [`FockSpace`].
#[derive(Debug, Clone)]
pub struct StateVector<T> {
    space: Arc<FockSpace>,
    amps: Vec<C<T>>,
}

impl<T: Real> StateVector<T> {
    pub fn new(space: Arc<FockSpace>, amps: Vec<C<T>>) -> Result<Self> {
        if amps.len() != space.dim() {
            return Err(Error::LengthMismatch {
                what: "state amplitudes",
                expected: space.dim(),
                found: amps.len(),
            });
        }
        Ok(Self { space, amps })
    }

    /// Basis state `|index>`.
    pub fn basis(space: Arc<FockSpace>, index: usize) -> Self {
        let mut amps = vec![czero(); space.dim()];
        amps[index] = Complex::new(T::one(), T::zero());
        Self { space, amps }
    }

    pub fn zeros(space: Arc<FockSpace>) -> Self {
        let amps = vec![czero(); space.dim()];
        Self { space, amps }
    }

    pub fn space(&self) -> &Arc<FockSpace> {
        &self.space
    }

    pub fn amplitudes(&self) -> &[C<T>] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C<T>] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C<T>> {
        self.amps
    }

    pub fn norm(&self) -> T {
        norm(&self.amps)
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > T::zero() {
            self.amps.iter_mut().for_each(|z| *z = *z / n);
        }
        self
    }

    pub fn scaled(&self, c: C<T>) -> Self {
        Self {
            space: self.space.clone(),
            amps: self.amps.iter().map(|z| *z * c).collect(),
        }
    }

    /// `<self|other>`
    pub fn inner(&self, other: &Self) -> C<T> {
        inner(&self.amps, &other.amps)
    }

    pub fn populations(&self) -> Vec<T> {
        self.amps.iter().map(|z| z.norm_sqr()).collect()
    }

    /// `<n_j>` for every mode.
    pub fn mean_occupations(&self) -> Vec<T> {
        mean_occupations(&self.space, &self.populations())
    }

    pub fn expectation(&self, op: &OperatorMatrix<T>) -> C<T> {
        op.bracket(&self.amps, &self.amps)
    }

    pub fn projector(&self) -> DensityMatrix<T> {
        let dim = self.amps.len();
        let mut data = Vec::with_capacity(dim * dim);
        for a in &self.amps {
            data.extend(self.amps.iter().map(|b| *a * b.conj()));
        }
        DensityMatrix {
            space: self.space.clone(),
            data,
        }
    }

    /// Re-expresses the state on another space with the same mode count,
    /// matching basis states by occupation; components the target space
    /// cannot represent are dropped (no renormalization).
    pub fn transfer_to(&self, target: &Arc<FockSpace>) -> Result<Self> {
        let map = basis_map(&self.space, target)?;
        let mut amps = vec![czero(); target.dim()];
        for (i, m) in map.into_iter().enumerate() {
            if let Some(j) = m {
                amps[j] = self.amps[i];
            }
        }
        Ok(Self {
            space: target.clone(),
            amps,
        })
    }
}

fn basis_map(from: &FockSpace, to: &FockSpace) -> Result<Vec<Option<usize>>> {
    if from.n_modes() != to.n_modes() {
        return Err(Error::SpaceMismatch);
    }
    Ok((0..from.dim())
        .map(|i| to.index_of(&from.occupations(i)))
        .collect())
}

pub(crate) fn mean_occupations<T: Real>(space: &FockSpace, populations: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); space.n_modes()];
    for (i, p) in populations.iter().enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            *o = *o + *p * crate::scalar::from_usize(space.occupation(i, j));
        }
    }
    out
}

/// Mixed state on a [`FockSpace`], dense row-major.
#[derive(Debug, Clone)]
pub struct DensityMatrix<T> {
    space: Arc<FockSpace>,
    data: Vec<C<T>>,
}

impl<T: Real> DensityMatrix<T> {
    /// Wraps raw entries after checking the shape, Hermiticity (1e-10) and
    /// unit trace (1e-8).
    pub fn new(space: Arc<FockSpace>, data: Vec<C<T>>) -> Result<Self> {
        let rho = Self::from_raw(space, data)?;
        let tol_h = crate::scalar::lit::<T>(1e-10).max(T::epsilon() * crate::scalar::lit(1e3));
        let tol_t = crate::scalar::lit::<T>(1e-8).max(T::epsilon() * crate::scalar::lit(1e4));
        let residue = rho.hermiticity_residue();
        if residue > tol_h {
            return Err(Error::InvariantViolation {
                what: "density-matrix Hermiticity residue",
                t: f64::NAN,
                value: residue.to_f64().unwrap_or(f64::NAN),
                tolerance: tol_h.to_f64().unwrap_or(f64::NAN),
            });
        }
        let drift = (rho.trace().re - T::one()).abs();
        if drift > tol_t {
            return Err(Error::InvariantViolation {
                what: "density-matrix trace drift",
                t: f64::NAN,
                value: drift.to_f64().unwrap_or(f64::NAN),
                tolerance: tol_t.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(rho)
    }

    /// Wraps raw entries, checking only the shape.
    pub fn from_raw(space: Arc<FockSpace>, data: Vec<C<T>>) -> Result<Self> {
        let dim = space.dim();
        if data.len() != dim * dim {
            return Err(Error::LengthMismatch {
                what: "density-matrix entries",
                expected: dim * dim,
                found: data.len(),
            });
        }
        Ok(Self { space, data })
    }

    pub fn pure(psi: &StateVector<T>) -> Self {
        psi.projector()
    }

    pub fn maximally_mixed(space: Arc<FockSpace>) -> Self {
        let dim = space.dim();
        let mut data = vec![czero(); dim * dim];
        let w = T::one() / crate::scalar::from_usize(dim);
        for i in 0..dim {
            data[i * dim + i] = Complex::new(w, T::zero());
        }
        Self { space, data }
    }

    pub fn space(&self) -> &Arc<FockSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn data(&self) -> &[C<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C<T>] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C<T> {
        self.data[i * self.dim() + j]
    }

    pub fn trace(&self) -> C<T> {
        let dim = self.dim();
        (0..dim).fold(czero(), |acc, i| acc + self.data[i * dim + i])
    }

    pub fn populations(&self) -> Vec<T> {
        let dim = self.dim();
        (0..dim).map(|i| self.data[i * dim + i].re).collect()
    }

    pub fn mean_occupations(&self) -> Vec<T> {
        mean_occupations(&self.space, &self.populations())
    }

    /// `max |rho_ij - conj(rho_ji)|`
    pub fn hermiticity_residue(&self) -> T {
        let dim = self.dim();
        let mut worst = T::zero();
        for i in 0..dim {
            for j in i..dim {
                worst = worst.max((self.data[i * dim + j] - self.data[j * dim + i].conj()).norm());
            }
        }
        worst
    }

    /// `tr(rho^2)`
    pub fn purity(&self) -> T {
        // tr(rho rho) = sum_ij rho_ij rho_ji = sum_ij |rho_ij|^2 for Hermitian rho
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `tr(rho A)`
    pub fn expectation(&self, op: &OperatorMatrix<T>) -> C<T> {
        let dim = self.dim();
        let mut acc = czero();
        for i in 0..dim {
            let (cols, vals) = op.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                acc = acc + a * self.data[j * dim + i];
            }
        }
        acc
    }

    /// `<psi|rho|psi>`
    pub fn overlap_with(&self, psi: &StateVector<T>) -> Result<T> {
        if **psi.space() != *self.space {
            return Err(Error::SpaceMismatch);
        }
        let dim = self.dim();
        let a = psi.amplitudes();
        let mut acc = czero::<T>();
        for i in 0..dim {
            let row = &self.data[i * dim..(i + 1) * dim];
            acc = acc + a[i].conj() * inner_conj_free(row, a);
        }
        Ok(acc.re)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<T>> {
        Ok(linalg::hermitian_eigen(self.dim(), &self.data)?.0)
    }

    pub fn min_eigenvalue(&self) -> Result<T> {
        Ok(self.eigenvalues()?.first().copied().unwrap_or_else(T::zero))
    }

    /// Re-expresses on another space with the same mode count; entries the
    /// target cannot represent are dropped.
    pub fn transfer_to(&self, target: &Arc<FockSpace>) -> Result<Self> {
        let map = basis_map(&self.space, target)?;
        let (d0, d1) = (self.dim(), target.dim());
        let mut data = vec![czero(); d1 * d1];
        for (i, mi) in map.iter().enumerate() {
            let Some(a) = mi else { continue };
            for (j, mj) in map.iter().enumerate() {
                if let Some(b) = mj {
                    data[a * d1 + b] = self.data[i * d0 + j];
                }
            }
        }
        Ok(Self {
            space: target.clone(),
            data,
        })
    }
}

#[inline]
fn inner_conj_free<T: Real>(row: &[C<T>], v: &[C<T>]) -> C<T> {
    row.iter().zip(v).fold(czero(), |acc, (r, x)| acc + *r * *x)
}

/// Reduced density matrix of one mode (`keep_mode` is 0-based), as a
/// state on a single-mode space with the same cutoff.
pub fn partial_trace<T: Real>(rho: &DensityMatrix<T>, keep_mode: usize) -> Result<DensityMatrix<T>> {
    let space = rho.space();
    space.check_mode(keep_mode)?;
    let c = space.cutoff();
    let dim = space.dim();
    // group basis states by the occupations of the traced-out modes
    let mut groups: std::collections::HashMap<Vec<usize>, Vec<(usize, usize)>> = Default::default();
    for i in 0..dim {
        let mut occ = space.occupations(i);
        let n = occ.remove(keep_mode);
        groups.entry(occ).or_default().push((n, i));
    }
    let mut out = vec![czero::<T>(); c * c];
    for members in groups.values() {
        for &(n, i) in members {
            for &(m, j) in members {
                out[n * c + m] = out[n * c + m] + rho.get(i, j);
            }
        }
    }
    DensityMatrix::from_raw(FockSpace::new(1, c)?, out)
}
