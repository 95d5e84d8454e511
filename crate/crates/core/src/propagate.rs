//! Closed-system propagation under piecewise-constant controls.
//!
//! Control values live on the intervals `[t_k, t_{k+1})` of a uniform grid;
//! step `k` applies `exp(-i H_k dt)` with `H_k = H_0 + sum_l eps_l[k] H_l`.

use crate::error::{Error, Result};
use crate::fock::{OperatorMatrix, StateVector};
use crate::model::{assemble, ControlLayout};
use crate::scalar::{czero, from_usize, lit, mul_neg_i, norm, Real, C};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    t_final: T,
    n_steps: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(t_final: T, n_steps: usize) -> Result<Self> {
        if !(t_final > T::zero()) || !t_final.is_finite() {
            return Err(Error::InvalidArgument(format!("final time must be positive, got {t_final}")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidArgument("time grid needs at least one step".into()));
        }
        Ok(Self { t_final, n_steps })
    }

    pub fn t_final(&self) -> T {
        self.t_final
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> T {
        self.t_final / from_usize(self.n_steps)
    }

    /// `t_k = k dt`
    pub fn time(&self, k: usize) -> T {
        from_usize::<T>(k) * self.dt()
    }

    /// Grid index of `t` if it lies on the grid (relative slack `1e-9`).
    pub fn index_of_time(&self, t: T) -> Option<usize> {
        let x = t / self.dt();
        let k = x.round();
        if k < T::zero() || k > from_usize(self.n_steps) || (x - k).abs() > lit::<T>(1e-9) * from_usize::<T>(self.n_steps.max(1)) {
            return None;
        }
        k.to_usize()
    }
}

/// Per-control piecewise-constant field values on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet<T> {
    grid: TimeGrid<T>,
    labels: Vec<String>,
    // values[l][k]
    values: Vec<Vec<T>>,
}

impl<T: Real> ControlSet<T> {
    pub fn new(grid: TimeGrid<T>, labels: Vec<String>, values: Vec<Vec<T>>) -> Result<Self> {
        if values.len() != labels.len() {
            return Err(Error::LengthMismatch {
                what: "control rows vs labels",
                expected: labels.len(),
                found: values.len(),
            });
        }
        for row in &values {
            if row.len() != grid.n_steps() {
                return Err(Error::LengthMismatch {
                    what: "control values per row",
                    expected: grid.n_steps(),
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("control values"));
            }
        }
        Ok(Self { grid, labels, values })
    }

    pub fn zeros(grid: TimeGrid<T>, labels: Vec<String>) -> Self {
        let values = vec![vec![T::zero(); grid.n_steps()]; labels.len()];
        Self { grid, labels, values }
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_controls(&self) -> usize {
        self.values.len()
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    #[inline]
    pub fn value(&self, l: usize, k: usize) -> T {
        self.values[l][k]
    }

    pub fn set(&mut self, l: usize, k: usize, v: T) {
        self.values[l][k] = v;
    }

    pub fn row(&self, l: usize) -> &[T] {
        &self.values[l]
    }

    pub fn row_mut(&mut self, l: usize) -> &mut [T] {
        &mut self.values[l]
    }

    /// Control values on interval `k`.
    pub fn interval(&self, k: usize) -> Vec<T> {
        self.values.iter().map(|row| row[k]).collect()
    }

    pub fn max_abs(&self) -> T {
        self.values
            .iter()
            .flatten()
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub(crate) fn check_layout(&self, layout: &ControlLayout<T>) -> Result<()> {
        if self.n_controls() != layout.n_controls() {
            return Err(Error::LengthMismatch {
                what: "controls vs layout",
                expected: layout.n_controls(),
                found: self.n_controls(),
            });
        }
        Ok(())
    }
}

/// States at the grid points `t_0 .. t_nt`.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub grid: TimeGrid<T>,
    pub states: Vec<StateVector<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn final_state(&self) -> &StateVector<T> {
        self.states.last().expect("trajectory holds nt + 1 states")
    }

    /// `max_k | |psi_k| - |psi_0| |`
    pub fn norm_drift(&self) -> T {
        let n0 = self.states[0].norm();
        self.states
            .iter()
            .fold(T::zero(), |m, s| m.max((s.norm() - n0).abs()))
    }
}

/// Writes `exp(-i H dt) x` into `out` by a scaled Taylor series summed to
/// machine precision. `scratch` must hold two vectors of the same length.
pub(crate) fn expm_apply<T: Real>(
    h: &OperatorMatrix<T>,
    dt: T,
    x: &[C<T>],
    out: &mut [C<T>],
    scratch: &mut [Vec<C<T>>; 2],
) {
    expm_apply_with(|a, b| h.apply(a, b), h.row_sum_norm(), dt, x, out, scratch)
}

/// As [`expm_apply`] for any linear map `apply` with norm at most `bound`.
pub(crate) fn expm_apply_with<T: Real>(
    mut apply: impl FnMut(&[C<T>], &mut [C<T>]),
    bound: T,
    dt: T,
    x: &[C<T>],
    out: &mut [C<T>],
    scratch: &mut [Vec<C<T>>; 2],
) {
    let substeps = (bound * dt.abs()).ceil().to_usize().unwrap_or(1).max(1);
    let tau = dt / from_usize(substeps);
    out.copy_from_slice(x);
    let [term, next] = scratch;
    for _ in 0..substeps {
        term.copy_from_slice(out);
        let base = norm(out);
        for k in 1..200 {
            apply(term, next);
            let f = tau / from_usize(k);
            for (t, n) in term.iter_mut().zip(next.iter()) {
                *t = mul_neg_i(*n) * f;
            }
            for (o, t) in out.iter_mut().zip(term.iter()) {
                *o = *o + *t;
            }
            if norm(term) <= T::epsilon() * base {
                break;
            }
        }
    }
}

/// `exp(-i H dt) psi`; negative `dt` propagates backwards.
pub fn step<T: Real>(h: &OperatorMatrix<T>, dt: T, psi: &StateVector<T>) -> Result<StateVector<T>> {
    if !h.is_hermitian() {
        return Err(Error::NonHermitian {
            residue: h.hermiticity_residue().to_f64().unwrap_or(f64::NAN),
        });
    }
    if **h.space() != **psi.space() {
        return Err(Error::SpaceMismatch);
    }
    let dim = psi.space().dim();
    let mut out = vec![czero(); dim];
    let mut scratch = [vec![czero(); dim], vec![czero(); dim]];
    expm_apply(h, dt, psi.amplitudes(), &mut out, &mut scratch);
    StateVector::new(psi.space().clone(), out)
}

/// Hamiltonian on interval `k`.
pub fn hamiltonian_at<T: Real>(
    h0: &OperatorMatrix<T>,
    layout: &ControlLayout<T>,
    controls: &ControlSet<T>,
    k: usize,
) -> Result<OperatorMatrix<T>> {
    assemble(h0, layout, &controls.interval(k))
}

pub fn forward<T: Real>(
    h0: &OperatorMatrix<T>,
    layout: &ControlLayout<T>,
    controls: &ControlSet<T>,
    psi0: &StateVector<T>,
) -> Result<Trajectory<T>> {
    controls.check_layout(layout)?;
    let grid = *controls.grid();
    let mut states = Vec::with_capacity(grid.n_steps() + 1);
    states.push(psi0.clone());
    for k in 0..grid.n_steps() {
        let h = hamiltonian_at(h0, layout, controls, k)?;
        let next = step(&h, grid.dt(), &states[k])?;
        states.push(next);
    }
    Ok(Trajectory { grid, states })
}

/// Final state only, without storing the trajectory.
pub fn forward_final<T: Real>(
    h0: &OperatorMatrix<T>,
    layout: &ControlLayout<T>,
    controls: &ControlSet<T>,
    psi0: &StateVector<T>,
) -> Result<StateVector<T>> {
    controls.check_layout(layout)?;
    let grid = *controls.grid();
    let mut psi = psi0.clone();
    for k in 0..grid.n_steps() {
        let h = hamiltonian_at(h0, layout, controls, k)?;
        psi = step(&h, grid.dt(), &psi)?;
    }
    Ok(psi)
}

/// Back-propagates `chi_T` from `t = T` to `t = 0` under the same
/// piecewise-constant Hamiltonians. `chi_T` need not be normalized.
pub fn backward<T: Real>(
    h0: &OperatorMatrix<T>,
    layout: &ControlLayout<T>,
    controls: &ControlSet<T>,
    chi_t: &StateVector<T>,
) -> Result<Trajectory<T>> {
    controls.check_layout(layout)?;
    let grid = *controls.grid();
    let nt = grid.n_steps();
    let mut states = vec![chi_t.clone(); nt + 1];
    for k in (0..nt).rev() {
        let h = hamiltonian_at(h0, layout, controls, k)?;
        states[k] = step(&h, -grid.dt(), &states[k + 1])?;
    }
    Ok(Trajectory { grid, states })
}
