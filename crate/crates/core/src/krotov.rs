//! First-order Krotov optimization of a state-to-state transfer.
//!
//! The objective is the final-time infidelity `J_T = 1 - |<phi_f|phi(T)>|^2`.
//! Each iteration back-propagates the costate under the previous controls and
//! then sweeps forward, updating every interval with the freshly propagated
//! state before stepping over it.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{OperatorMatrix, StateVector};
use crate::model::ControlLayout;
use crate::propagate::{backward, expm_apply_with, forward_final, hamiltonian_at, step, ControlSet, TimeGrid, Trajectory};
use crate::scalar::{czero, lit, Real, C};

/// Envelope multiplying the update of one control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UpdateShape<T> {
    /// `sin^2` switch-on over `ramp_fraction * T`, flat top, mirrored switch-off.
    FlatTop { ramp_fraction: T },
    /// Control never changes.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec<T> {
    pub ramp_fraction: T,
    /// `(control index, shape)` pairs replacing the default flat top.
    #[serde(default = "Vec::new")]
    pub overrides: Vec<(usize, UpdateShape<T>)>,
}

impl<T: Real> ShapeSpec<T> {
    pub fn new(ramp_fraction: T) -> Result<Self> {
        let spec = Self { ramp_fraction, overrides: Vec::new() };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_override(mut self, control: usize, shape: UpdateShape<T>) -> Self {
        self.overrides.retain(|(l, _)| *l != control);
        self.overrides.push((control, shape));
        self
    }

    pub fn validate(&self) -> Result<()> {
        let check = |r: T| {
            if !(r >= T::zero() && r <= lit(0.5)) {
                return Err(Error::InvalidArgument(format!("ramp_fraction must lie in [0, 0.5], got {r}")));
            }
            Ok(())
        };
        check(self.ramp_fraction)?;
        for (_, shape) in &self.overrides {
            if let UpdateShape::FlatTop { ramp_fraction } = shape {
                check(*ramp_fraction)?;
            }
        }
        Ok(())
    }

    pub fn shape_for(&self, control: usize) -> UpdateShape<T> {
        self.overrides
            .iter()
            .rev()
            .find(|(l, _)| *l == control)
            .map(|(_, s)| *s)
            .unwrap_or(UpdateShape::FlatTop { ramp_fraction: self.ramp_fraction })
    }

    pub fn value(&self, control: usize, t: T, t_final: T) -> T {
        match self.shape_for(control) {
            UpdateShape::FlatTop { ramp_fraction } => flat_top(ramp_fraction, t, t_final),
            UpdateShape::Zero => T::zero(),
        }
    }

    /// Weight applied on interval `k`: the smaller of the two endpoint values,
    /// so the first and last intervals are frozen whenever the ramp is nonzero.
    pub fn interval_value(&self, control: usize, k: usize, grid: &TimeGrid<T>) -> T {
        let t = grid.t_final();
        self.value(control, grid.time(k), t)
            .min(self.value(control, grid.time(k + 1), t))
    }
}

fn flat_top<T: Real>(ramp_fraction: T, t: T, t_final: T) -> T {
    if t < T::zero() || t > t_final {
        return T::zero();
    }
    if ramp_fraction == T::zero() {
        return T::one();
    }
    let ramp = ramp_fraction * t_final;
    let edge = t.min(t_final - t);
    if edge >= ramp {
        T::one()
    } else {
        (T::FRAC_PI_2() * edge / ramp).sin().powi(2)
    }
}

/// Default flat-top envelope of `spec` at time `t`.
pub fn shape_function<T: Real>(spec: &ShapeSpec<T>, t: T, t_final: T) -> T {
    flat_top(spec.ramp_fraction, t, t_final)
}

/// Analytic description of an initial control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlGuess<T> {
    Constant { value: T },
    /// `amplitude * sin(frequency * t)`, `frequency` angular.
    Sinusoid { amplitude: T, frequency: T },
}

impl<T: Real> ControlGuess<T> {
    pub fn value(&self, t: T) -> T {
        match *self {
            ControlGuess::Constant { value } => value,
            ControlGuess::Sinusoid { amplitude, frequency } => amplitude * (frequency * t).sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrotovConfig<T> {
    /// Inverse step size per control.
    pub lambda_a: Vec<T>,
    pub shape: ShapeSpec<T>,
    pub goal: T,
    pub max_iters: usize,
    pub guess: Vec<ControlGuess<T>>,
}

impl<T: Real> KrotovConfig<T> {
    /// Defaults for an `n_sites` chain over `[0, t_final]`: `lambda_a = 5`,
    /// 5% ramps, goal `1e-7`, 200 iterations, and a half-period sine of
    /// amplitude 0.1 on the couplings with the frequencies left at zero.
    pub fn defaults(n_sites: usize, t_final: T) -> Self {
        let n_controls = 2 * n_sites - 1;
        let guess = (0..n_controls)
            .map(|l| {
                if l < n_sites {
                    ControlGuess::Constant { value: T::zero() }
                } else {
                    ControlGuess::Sinusoid { amplitude: lit(0.1), frequency: T::PI() / t_final }
                }
            })
            .collect();
        Self {
            lambda_a: vec![lit(5.0); n_controls],
            shape: ShapeSpec { ramp_fraction: lit(0.05), overrides: Vec::new() },
            goal: lit(1e-7),
            max_iters: 200,
            guess,
        }
    }

    pub fn validate(&self, n_controls: usize) -> Result<()> {
        if self.lambda_a.len() != n_controls {
            return Err(Error::LengthMismatch { what: "lambda_a", expected: n_controls, found: self.lambda_a.len() });
        }
        if self.guess.len() != n_controls {
            return Err(Error::LengthMismatch { what: "initial guess", expected: n_controls, found: self.guess.len() });
        }
        if let Some(bad) = self.lambda_a.iter().find(|v| !(**v > T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda_a must be positive, got {bad}")));
        }
        if !(self.goal > T::zero() && self.goal <= T::one()) {
            return Err(Error::InvalidArgument(format!("goal must lie in (0, 1], got {}", self.goal)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if let Some((l, _)) = self.shape.overrides.iter().find(|(l, _)| *l >= n_controls) {
            return Err(Error::InvalidArgument(format!("shape override for unknown control {l}")));
        }
        self.shape.validate()
    }

    /// Samples the guess at the left endpoint of every interval.
    pub fn initial_guess(&self, grid: TimeGrid<T>, labels: Vec<String>) -> Result<ControlSet<T>> {
        if labels.len() != self.guess.len() {
            return Err(Error::LengthMismatch { what: "initial guess", expected: labels.len(), found: self.guess.len() });
        }
        let values = self
            .guess
            .iter()
            .map(|g| (0..grid.n_steps()).map(|k| g.value(grid.time(k))).collect())
            .collect();
        ControlSet::new(grid, labels, values)
    }
}

#[derive(Debug, Clone)]
pub struct IterationRecord<T> {
    /// 0 for the guess.
    pub iteration: usize,
    pub j_t: T,
    /// `sum_l sum_k (lambda_l / S_l) (delta eps_l)^2 dt`, zero for the guess.
    pub running_cost: T,
    pub controls: Arc<ControlSet<T>>,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult<T> {
    pub controls: ControlSet<T>,
    pub history: Vec<IterationRecord<T>>,
    pub converged: bool,
}

impl<T: Real> OptimizationResult<T> {
    pub fn final_jt(&self) -> T {
        self.history.last().map(|r| r.j_t).unwrap_or_else(T::one)
    }

    /// Iterations performed after the guess.
    pub fn iterations(&self) -> usize {
        self.history.last().map(|r| r.iteration).unwrap_or(0)
    }
}

/// `1 - |<phi_f|phi_T>|^2`, clamped to `[0, 1]`.
pub fn eval_jt<T: Real>(phi_t: &StateVector<T>, phi_f: &StateVector<T>) -> T {
    let o = phi_f.inner(phi_t).norm_sqr();
    (T::one() - o).max(T::zero()).min(T::one())
}

/// `<phi_f|phi_T> |phi_f>`
pub fn boundary_costate<T: Real>(phi_t: &StateVector<T>, phi_f: &StateVector<T>) -> StateVector<T> {
    phi_f.scaled(phi_f.inner(phi_t))
}

fn checked_costate<T: Real>(phi_t: &StateVector<T>, phi_f: &StateVector<T>) -> Result<StateVector<T>> {
    let chi = boundary_costate(phi_t, phi_f);
    let n = chi.norm();
    if !(n >= lit(1e-14)) {
        return Err(Error::DegenerateStart { overlap: n.to_f64().unwrap_or(f64::NAN) });
    }
    Ok(chi)
}

/// One Krotov iteration from `prev`; returns the updated controls, the
/// forward trajectory under them, and its record (iteration index 1).
pub fn krotov_iterate<T: Real>(
    h0: &OperatorMatrix<T>,
    layout: &ControlLayout<T>,
    prev: &ControlSet<T>,
    psi0: &StateVector<T>,
    phi_f: &StateVector<T>,
    config: &KrotovConfig<T>,
) -> Result<(ControlSet<T>, Trajectory<T>, IterationRecord<T>)> {
    config.validate(layout.n_controls())?;
    let phi_t = forward_final(h0, layout, prev, psi0)?;
    iterate_from(h0, layout, prev, &phi_t, psi0, phi_f, config, 1)
}

#[allow(clippy::too_many_arguments)]
fn iterate_from<T: Real>(
    h0: &OperatorMatrix<T>,
    layout: &ControlLayout<T>,
    prev: &ControlSet<T>,
    prev_final: &StateVector<T>,
    psi0: &StateVector<T>,
    phi_f: &StateVector<T>,
    config: &KrotovConfig<T>,
    iteration: usize,
) -> Result<(ControlSet<T>, Trajectory<T>, IterationRecord<T>)> {
    let grid = *prev.grid();
    let nt = grid.n_steps();
    let dt = grid.dt();
    let chi = backward(h0, layout, prev, &checked_costate(prev_final, phi_f)?)?;

    let n_controls = layout.n_controls();
    let shapes: Vec<Vec<T>> = (0..n_controls)
        .map(|l| (0..nt).map(|k| config.shape.interval_value(l, k, &grid)).collect())
        .collect();

    let mut next = prev.clone();
    let mut states = Vec::with_capacity(nt + 1);
    states.push(psi0.clone());
    let mut running_cost = T::zero();
    for k in 0..nt {
        let phi = &states[k];
        for l in 0..n_controls {
            let s = shapes[l][k];
            if s == T::zero() {
                continue;
            }
            let b = layout.operator(l).bracket(chi.states[k].amplitudes(), phi.amplitudes());
            let delta = s / config.lambda_a[l] * b.im;
            if !delta.is_finite() {
                return Err(Error::NonFinite("control update"));
            }
            next.set(l, k, prev.value(l, k) + delta);
            running_cost = running_cost + config.lambda_a[l] / s * delta * delta * dt;
        }
        let h = hamiltonian_at(h0, layout, &next, k)?;
        let advanced = step(&h, dt, phi)?;
        states.push(advanced);
    }
    let traj = Trajectory { grid, states };
    let record = IterationRecord {
        iteration,
        j_t: eval_jt(traj.final_state(), phi_f),
        running_cost,
        controls: Arc::new(next.clone()),
    };
    Ok((next, traj, record))
}

/// Iterates from `guess` until `J_T <= goal` or `max_iters` is exhausted.
/// Non-convergence is reported through [`OptimizationResult::converged`].
pub fn optimize<T: Real>(
    h0: &OperatorMatrix<T>,
    layout: &ControlLayout<T>,
    guess: &ControlSet<T>,
    psi0: &StateVector<T>,
    phi_f: &StateVector<T>,
    config: &KrotovConfig<T>,
) -> Result<OptimizationResult<T>> {
    optimize_with(h0, layout, guess, psi0, phi_f, config, |_| {})
}

/// [`optimize`] with a callback invoked on every record, the guess included.
pub fn optimize_with<T: Real>(
    h0: &OperatorMatrix<T>,
    layout: &ControlLayout<T>,
    guess: &ControlSet<T>,
    psi0: &StateVector<T>,
    phi_f: &StateVector<T>,
    config: &KrotovConfig<T>,
    mut on_record: impl FnMut(&IterationRecord<T>),
) -> Result<OptimizationResult<T>> {
    config.validate(layout.n_controls())?;
    guess.check_layout(layout)?;
    let mut phi_t = forward_final(h0, layout, guess, psi0)?;
    let first = IterationRecord {
        iteration: 0,
        j_t: eval_jt(&phi_t, phi_f),
        running_cost: T::zero(),
        controls: Arc::new(guess.clone()),
    };
    on_record(&first);
    let mut converged = first.j_t <= config.goal;
    let mut history = vec![first];
    let mut controls = guess.clone();
    let mut i = 0;
    while !converged && i < config.max_iters {
        i += 1;
        let (next, traj, record) = iterate_from(h0, layout, &controls, &phi_t, psi0, phi_f, config, i)?;
        log::debug!("krotov iteration {i}: J_T = {:e}, g = {:e}", record.j_t, record.running_cost);
        on_record(&record);
        converged = record.j_t <= config.goal;
        phi_t = traj.final_state().clone();
        controls = next;
        history.push(record);
    }
    if !converged {
        log::warn!("krotov stopped after {i} iterations at J_T = {:e}", history.last().map(|r| r.j_t).unwrap_or_else(T::one));
    }
    Ok(OptimizationResult { controls, history, converged })
}

/// Where the costate bracket is sampled inside a control interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BracketPoint {
    /// `t_k`, as used by the update rule.
    Left,
    /// `t_k + dt/2`; consistent with the piecewise-constant gradient to `O(dt^2)`.
    Midpoint,
}

/// Gradient of `J_T` with respect to single interval values of a fixed
/// control set, from one forward and one backward pass.
pub struct GradientProbe<'a, T: Real> {
    h0: &'a OperatorMatrix<T>,
    layout: &'a ControlLayout<T>,
    controls: &'a ControlSet<T>,
    phi: Trajectory<T>,
    chi: Trajectory<T>,
}

impl<'a, T: Real> GradientProbe<'a, T> {
    pub fn new(
        h0: &'a OperatorMatrix<T>,
        layout: &'a ControlLayout<T>,
        controls: &'a ControlSet<T>,
        psi0: &StateVector<T>,
        phi_f: &StateVector<T>,
    ) -> Result<Self> {
        let phi = crate::propagate::forward(h0, layout, controls, psi0)?;
        let chi = backward(h0, layout, controls, &boundary_costate(phi.final_state(), phi_f))?;
        Ok(Self { h0, layout, controls, phi, chi })
    }

    pub fn forward(&self) -> &Trajectory<T> {
        &self.phi
    }

    pub fn costate(&self) -> &Trajectory<T> {
        &self.chi
    }

    /// `-2 dt Im<chi(t)|H_l|phi(t)>` at the chosen point of interval `k`.
    pub fn bracket(&self, l: usize, k: usize, at: BracketPoint) -> Result<T> {
        let dt = self.controls.grid().dt();
        let hl = self.layout.operator(l);
        let b = match at {
            BracketPoint::Left => hl.bracket(self.chi.states[k].amplitudes(), self.phi.states[k].amplitudes()),
            BracketPoint::Midpoint => {
                let h = hamiltonian_at(self.h0, self.layout, self.controls, k)?;
                let half = dt / lit(2.0);
                let phi = step(&h, half, &self.phi.states[k])?;
                let chi = step(&h, -half, &self.chi.states[k + 1])?;
                hl.bracket(chi.amplitudes(), phi.amplitudes())
            }
        };
        Ok(-lit::<T>(2.0) * dt * b.im)
    }

    /// Exact `dJ_T / d eps_l[k]` for piecewise-constant controls, from the
    /// Frechet derivative of the interval propagator.
    pub fn exact(&self, l: usize, k: usize) -> Result<T> {
        let dt = self.controls.grid().dt();
        let h = hamiltonian_at(self.h0, self.layout, self.controls, k)?;
        let hl = self.layout.operator(l);
        let n = h.dim();
        // exp(-i dt [[H, H_l], [0, H]]) (0, phi)^T has the derivative on top.
        let mut x = vec![czero(); 2 * n];
        x[n..].copy_from_slice(self.phi.states[k].amplitudes());
        let mut out = vec![czero(); 2 * n];
        let mut scratch = [vec![czero(); 2 * n], vec![czero(); 2 * n]];
        let mut tmp = vec![czero(); n];
        let apply = |v: &[C<T>], y: &mut [C<T>]| {
            let (top, bottom) = y.split_at_mut(n);
            h.apply(&v[..n], top);
            hl.apply(&v[n..], &mut tmp);
            for (t, s) in top.iter_mut().zip(&tmp) {
                *t = *t + *s;
            }
            h.apply(&v[n..], bottom);
        };
        expm_apply_with(apply, h.row_sum_norm() + hl.row_sum_norm(), dt, &x, &mut out, &mut scratch);
        let d = &out[..n];
        let overlap = crate::scalar::inner(self.chi.states[k + 1].amplitudes(), d);
        Ok(-lit::<T>(2.0) * overlap.re)
    }
}
