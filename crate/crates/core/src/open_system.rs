//! Density-matrix propagation under the leading-order non-Markovian master
//! equation for an Ornstein-Uhlenbeck bath,
//!
//! ```text
//! d rho/dt = -i[H, rho] + [L, rho Obar^dag] - [L^dag, Obar rho],
//! d Obar/dt = (gamma/2) L - gamma Obar + [-i H - L^dag Obar, Obar],
//! ```
//!
//! with `Obar(0) = 0`, plus the Lindblad equation as the white-noise limit.
//!
//! `H` is quadratic and excitation conserving and `L` is linear in the
//! ladder operators, so `Obar` stays linear in them for all times. It is
//! carried as the `2N` coefficients of a [`LinearModeOperator`] and only
//! expanded to a matrix when acting on `rho`.
//!
//! `rho` lives on the excitation-capped space (total excitation at most
//! `cutoff - 1`), which holds every state with single-mode populations below
//! the cutoff and keeps the dense matrix small.

use std::sync::Arc;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{annihilation, creation, DensityMatrix, FockSpace, OperatorMatrix, StateVector};
use crate::model::{build_controls, build_static, ChainModel, ControlLayout, HoppingMatrix};
use crate::propagate::{hamiltonian_at, ControlSet, TimeGrid};
use crate::scalar::{creal, czero, from_usize, lit, Real, C};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathSpec<T> {
    /// System-bath coupling strength.
    pub lambda: T,
    /// Inverse correlation time.
    pub gamma: T,
}

impl<T: Real> BathSpec<T> {
    pub fn new(lambda: T, gamma: T) -> Result<Self> {
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {lambda}")));
        }
        if !(gamma > T::zero()) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self { lambda, gamma })
    }
}

/// `alpha(t, s) = (gamma / 2) exp(-gamma |t - s|)`
pub fn ou_correlation<T: Real>(bath: &BathSpec<T>, t: T, s: T) -> T {
    bath.gamma / lit(2.0) * (-bath.gamma * (t - s).abs()).exp()
}

/// `sum_j lower_j a_j + raise_j a_j^dag`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModeOperator<T> {
    pub lower: Vec<C<T>>,
    pub raise: Vec<C<T>>,
}

impl<T: Real> LinearModeOperator<T> {
    pub fn zeros(n_modes: usize) -> Self {
        Self { lower: vec![czero(); n_modes], raise: vec![czero(); n_modes] }
    }

    pub fn new(lower: Vec<C<T>>, raise: Vec<C<T>>) -> Result<Self> {
        if lower.len() != raise.len() {
            return Err(Error::LengthMismatch { what: "raising coefficients", expected: lower.len(), found: raise.len() });
        }
        Ok(Self { lower, raise })
    }

    /// `lambda sum_j (a_j + a_j^dag) / sqrt(2 w_j)`
    pub fn coupling(omega0: &[T], lambda: T) -> Self {
        let c: Vec<C<T>> = omega0.iter().map(|w| creal(lambda / (lit::<T>(2.0) * *w).sqrt())).collect();
        Self { lower: c.clone(), raise: c }
    }

    pub fn n_modes(&self) -> usize {
        self.lower.len()
    }

    pub fn adjoint(&self) -> Self {
        Self {
            lower: self.raise.iter().map(|z| z.conj()).collect(),
            raise: self.lower.iter().map(|z| z.conj()).collect(),
        }
    }

    /// `[self, other]`, a multiple of the identity.
    pub fn commutator(&self, other: &Self) -> C<T> {
        (0..self.n_modes()).fold(czero(), |acc, j| {
            acc + self.lower[j] * other.raise[j] - self.raise[j] * other.lower[j]
        })
    }

    /// `[-i H, self]` for `H = sum_ij h_ij a_i^dag a_j`.
    pub fn heisenberg(&self, h: &HoppingMatrix<T>) -> Self {
        let n = self.n_modes();
        let i = Complex::new(T::zero(), T::one());
        let lower = (0..n)
            .map(|j| (0..n).fold(czero::<T>(), |acc, k| acc + self.lower[k] * h.get(k, j)) * i)
            .collect();
        let raise = (0..n)
            .map(|j| (0..n).fold(czero::<T>(), |acc, k| acc + self.raise[k] * h.get(j, k)) * (-i))
            .collect();
        Self { lower, raise }
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: C<T>, other: &Self) {
        for (a, b) in self.lower.iter_mut().zip(&other.lower) {
            *a = *a + c * *b;
        }
        for (a, b) in self.raise.iter_mut().zip(&other.raise) {
            *a = *a + c * *b;
        }
    }

    pub fn scaled(&self, c: C<T>) -> Self {
        Self {
            lower: self.lower.iter().map(|z| *z * c).collect(),
            raise: self.raise.iter().map(|z| *z * c).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.lower.iter().chain(&self.raise).fold(T::zero(), |m, z| m.max(z.norm()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.lower
            .iter()
            .zip(&other.lower)
            .chain(self.raise.iter().zip(&other.raise))
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.lower.iter().chain(&self.raise).all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Matrix of the operator on a truncated space.
    pub fn to_operator(&self, space: &Arc<FockSpace>) -> Result<OperatorMatrix<T>> {
        Ladders::new(space, self.n_modes())?.expand(self)
    }
}

#[derive(Debug, Clone)]
struct Ladders<T> {
    space: Arc<FockSpace>,
    lower: Vec<OperatorMatrix<T>>,
    raise: Vec<OperatorMatrix<T>>,
}

impl<T: Real> Ladders<T> {
    fn new(space: &Arc<FockSpace>, n_modes: usize) -> Result<Self> {
        if space.n_modes() != n_modes {
            return Err(Error::LengthMismatch { what: "operator modes", expected: space.n_modes(), found: n_modes });
        }
        Ok(Self {
            space: space.clone(),
            lower: (0..n_modes).map(|j| annihilation(space, j)).collect::<Result<_>>()?,
            raise: (0..n_modes).map(|j| creation(space, j)).collect::<Result<_>>()?,
        })
    }

    fn expand(&self, op: &LinearModeOperator<T>) -> Result<OperatorMatrix<T>> {
        if op.n_modes() != self.lower.len() {
            return Err(Error::LengthMismatch { what: "operator modes", expected: self.lower.len(), found: op.n_modes() });
        }
        let terms: Vec<(C<T>, &OperatorMatrix<T>)> = op
            .lower
            .iter()
            .zip(&self.lower)
            .chain(op.raise.iter().zip(&self.raise))
            .map(|(c, m)| (*c, m))
            .collect();
        OperatorMatrix::lincomb(self.space.clone(), &terms)
    }
}

/// Coupling operator `L` of `chain` on its own space.
pub fn build_l<T: Real>(chain: &ChainModel<T>, lambda: T) -> Result<OperatorMatrix<T>> {
    if !(lambda >= T::zero()) {
        return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {lambda}")));
    }
    LinearModeOperator::coupling(chain.omega0(), lambda).to_operator(chain.space())
}

/// Right-hand side of the closed `Obar` equation.
pub fn obar_rhs<T: Real>(
    h: &HoppingMatrix<T>,
    obar: &LinearModeOperator<T>,
    l: &LinearModeOperator<T>,
    bath: &BathSpec<T>,
) -> LinearModeOperator<T> {
    // [-L^dag Obar, Obar] = -[L^dag, Obar] Obar since [Obar, Obar] = 0
    let c = l.adjoint().commutator(obar);
    let mut out = obar.heisenberg(h);
    out.axpy(creal(bath.gamma / lit(2.0)), l);
    out.axpy(creal(-bath.gamma) - c, obar);
    out
}

/// One classical RK4 step of the `Obar` equation under a constant `h`.
pub fn evolve_obar_step<T: Real>(
    h: &HoppingMatrix<T>,
    obar: &LinearModeOperator<T>,
    l: &LinearModeOperator<T>,
    bath: &BathSpec<T>,
    dt: T,
    guard: T,
) -> Result<LinearModeOperator<T>> {
    let half = creal(dt / lit(2.0));
    let k1 = obar_rhs(h, obar, l, bath);
    let mut y = obar.clone();
    y.axpy(half, &k1);
    let k2 = obar_rhs(h, &y, l, bath);
    let mut y = obar.clone();
    y.axpy(half, &k2);
    let k3 = obar_rhs(h, &y, l, bath);
    let mut y = obar.clone();
    y.axpy(creal(dt), &k3);
    let k4 = obar_rhs(h, &y, l, bath);
    let mut next = obar.clone();
    let sixth = dt / lit(6.0);
    next.axpy(creal(sixth), &k1);
    next.axpy(creal(sixth * lit(2.0)), &k2);
    next.axpy(creal(sixth * lit(2.0)), &k3);
    next.axpy(creal(sixth), &k4);
    let magnitude = next.max_abs();
    if !next.is_finite() || magnitude > guard {
        return Err(Error::Divergence {
            what: "Obar",
            t: f64::NAN,
            magnitude: magnitude.to_f64().unwrap_or(f64::INFINITY),
            guard: guard.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(next)
}

/// Number of RK4 steps used to cross a span `h` of the `Obar` equation.
fn obar_substeps<T: Real>(bath: &BathSpec<T>, h: T, resolution: T) -> usize {
    (bath.gamma * h / resolution).ceil().to_usize().unwrap_or(1).max(1)
}

fn advance_obar<T: Real>(
    h: &HoppingMatrix<T>,
    obar: &LinearModeOperator<T>,
    l: &LinearModeOperator<T>,
    bath: &BathSpec<T>,
    span: T,
    opts: &OpenSolverOptions<T>,
    t: T,
) -> Result<LinearModeOperator<T>> {
    let n = obar_substeps(bath, span, opts.obar_resolution);
    let dt = span / from_usize(n);
    let mut o = obar.clone();
    for _ in 0..n {
        o = evolve_obar_step(h, &o, l, bath, dt, opts.obar_guard).map_err(|e| with_time(e, t))?;
    }
    Ok(o)
}

fn with_time(e: Error, t: impl Real) -> Error {
    match e {
        Error::Divergence { what, magnitude, guard, .. } => {
            Error::Divergence { what, t: t.to_f64().unwrap_or(f64::NAN), magnitude, guard }
        }
        other => other,
    }
}

/// `Obar(t_k)` on every grid point from the closed equation.
pub fn obar_history<T: Real>(
    chain: &ChainModel<T>,
    controls: &ControlSet<T>,
    l: &LinearModeOperator<T>,
    bath: &BathSpec<T>,
    opts: &OpenSolverOptions<T>,
) -> Result<Vec<LinearModeOperator<T>>> {
    let grid = controls.grid();
    let span = grid.dt() / from_usize(2 * opts.substeps);
    let mut out = Vec::with_capacity(grid.n_steps() + 1);
    let mut o = LinearModeOperator::zeros(chain.n_sites());
    out.push(o.clone());
    for k in 0..grid.n_steps() {
        let h = chain.hopping_matrix(&controls.interval(k))?;
        for _ in 0..2 * opts.substeps {
            o = advance_obar(&h, &o, l, bath, span, opts, grid.time(k))?;
        }
        out.push(o.clone());
    }
    Ok(out)
}

/// `Obar` at the grid points `t_0 ..= t_end` by direct quadrature
/// `Obar(t) = int_0^t alpha(t, s) O(t, s) ds`, with `O(s, s) = L` and
/// `d_t O(t, s) = [-i H(t) - L^dag Obar(t), O(t, s)]`.
///
/// `O(t, s)` is propagated from every node of a grid `nodes_per_interval`
/// times finer than the control grid, the integral is a trapezoid sum over
/// those nodes, and the dependence of the generator on `Obar` is resolved by
/// fixed-point iteration starting from `Obar = 0`. The cost is quadratic in
/// the node count; intended for validation.
pub fn obar_quadrature_history<T: Real>(
    chain: &ChainModel<T>,
    controls: &ControlSet<T>,
    l: &LinearModeOperator<T>,
    bath: &BathSpec<T>,
    t_end: T,
    nodes_per_interval: usize,
) -> Result<Vec<LinearModeOperator<T>>> {
    let grid = controls.grid();
    let n_end = grid
        .index_of_time(t_end)
        .ok_or_else(|| Error::InvalidArgument(format!("t = {t_end} is not on the control grid")))?;
    let q = nodes_per_interval.max(1);
    let m_nodes = n_end * q;
    let hq = grid.dt() / from_usize(q);
    let node_time = |n: usize| from_usize::<T>(n) * hq;
    let hops: Vec<HoppingMatrix<T>> = (0..n_end)
        .map(|k| chain.hopping_matrix(&controls.interval(k)))
        .collect::<Result<_>>()?;
    let l_adj = l.adjoint();
    let zero = LinearModeOperator::zeros(l.n_modes());

    let generator = |h: &HoppingMatrix<T>, obar: &LinearModeOperator<T>, o: &LinearModeOperator<T>| {
        let mut d = o.heisenberg(h);
        d.axpy(-l_adj.commutator(obar), o);
        d
    };

    let mut prev = vec![zero.clone(); m_nodes + 1];
    for _ in 0..100 {
        let mut next = vec![zero.clone(); m_nodes + 1];
        for m in 0..m_nodes {
            let mut o = l.clone();
            for n in m..m_nodes {
                let h = &hops[n / q];
                let mut mid = prev[n].clone();
                mid.axpy(cone_like(), &prev[n + 1]);
                let mid = mid.scaled(creal(lit(0.5)));
                let k1 = generator(h, &prev[n], &o);
                let mut y = o.clone();
                y.axpy(creal(hq / lit(2.0)), &k1);
                let k2 = generator(h, &mid, &y);
                let mut y = o.clone();
                y.axpy(creal(hq / lit(2.0)), &k2);
                let k3 = generator(h, &mid, &y);
                let mut y = o.clone();
                y.axpy(creal(hq), &k3);
                let k4 = generator(h, &prev[n + 1], &y);
                let sixth = hq / lit(6.0);
                o.axpy(creal(sixth), &k1);
                o.axpy(creal(sixth * lit(2.0)), &k2);
                o.axpy(creal(sixth * lit(2.0)), &k3);
                o.axpy(creal(sixth), &k4);
                // node n + 1 receives the contribution of source m
                let end = n + 1;
                let w = if m == 0 { hq / lit(2.0) } else { hq };
                next[end].axpy(creal(w * ou_correlation(bath, node_time(end), node_time(m))), &o);
            }
        }
        // the s = t end of each trapezoid
        for (n, item) in next.iter_mut().enumerate().skip(1) {
            item.axpy(creal(hq / lit(2.0) * ou_correlation(bath, node_time(n), node_time(n))), l);
        }
        let change = next
            .iter()
            .zip(&prev)
            .fold(T::zero(), |m, (a, b)| m.max(a.max_abs_diff(b)));
        prev = next;
        if change <= lit::<T>(1e-14).max(T::epsilon() * lit(16.0)) {
            break;
        }
    }
    Ok((0..=n_end).map(|k| prev[k * q].clone()).collect())
}

fn cone_like<T: Real>() -> C<T> {
    creal(T::one())
}

/// Quadrature value of `Obar(t)` at a single grid time.
pub fn obar_quadrature_oracle<T: Real>(
    chain: &ChainModel<T>,
    controls: &ControlSet<T>,
    l: &LinearModeOperator<T>,
    bath: &BathSpec<T>,
    t: T,
    nodes_per_interval: usize,
) -> Result<LinearModeOperator<T>> {
    let hist = obar_quadrature_history(chain, controls, l, bath, t, nodes_per_interval)?;
    Ok(hist.last().cloned().expect("history includes t = 0"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenSolverOptions<T> {
    /// RK4 steps per control interval for `rho`.
    pub substeps: usize,
    /// Upper bound on `gamma * h` for the `Obar` steps.
    pub obar_resolution: T,
    pub trace_tolerance: T,
    pub hermiticity_tolerance: T,
    /// Final smallest eigenvalue below this is logged.
    pub min_eigenvalue_warning: T,
    /// Largest admissible `Obar` coefficient magnitude.
    pub obar_guard: T,
    /// Keep `rho` every `snapshot_stride` grid points; 0 keeps only the ends.
    pub snapshot_stride: usize,
    pub final_eigenvalue_check: bool,
}

impl<T: Real> Default for OpenSolverOptions<T> {
    fn default() -> Self {
        Self {
            substeps: 4,
            obar_resolution: lit(0.05),
            trace_tolerance: lit(1e-8),
            hermiticity_tolerance: lit(1e-10),
            min_eigenvalue_warning: lit(-1e-3),
            obar_guard: lit(1e2),
            snapshot_stride: 0,
            final_eigenvalue_check: true,
        }
    }
}

impl<T: Real> OpenSolverOptions<T> {
    fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be at least 1".into()));
        }
        if !(self.obar_resolution > T::zero()) {
            return Err(Error::InvalidArgument("obar_resolution must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OpenDiagnostics<T> {
    pub max_trace_drift: T,
    pub max_hermiticity_residue: T,
    pub final_min_eigenvalue: Option<T>,
}

#[derive(Debug, Clone)]
pub struct OpenTrajectory<T> {
    pub grid: TimeGrid<T>,
    /// `(grid index, rho)`, always including both ends.
    pub snapshots: Vec<(usize, DensityMatrix<T>)>,
    /// `Obar(t_k)` for every grid point; empty for the Lindblad reference.
    pub obar_history: Vec<LinearModeOperator<T>>,
    pub diagnostics: OpenDiagnostics<T>,
}

impl<T: Real> OpenTrajectory<T> {
    pub fn final_rho(&self) -> &DensityMatrix<T> {
        &self.snapshots.last().expect("trajectory keeps the final state").1
    }

    pub fn initial_rho(&self) -> &DensityMatrix<T> {
        &self.snapshots[0].1
    }
}

/// Chain operators rebuilt on the excitation-capped space used for `rho`.
#[derive(Debug, Clone)]
pub struct OpenSystem<T> {
    chain: ChainModel<T>,
    h0: OperatorMatrix<T>,
    layout: ControlLayout<T>,
    ladders: Ladders<T>,
}

impl<T: Real> OpenSystem<T> {
    /// Caps the total excitation at `cutoff - 1`.
    pub fn new(chain: &ChainModel<T>) -> Result<Self> {
        Self::with_cap(chain, Some(chain.space().cutoff() - 1))
    }

    /// `None` keeps the full product space.
    pub fn with_cap(chain: &ChainModel<T>, cap: Option<usize>) -> Result<Self> {
        let base = chain.space();
        let space = match cap {
            Some(c) => FockSpace::excitation_capped(base.n_modes(), base.cutoff(), c)?,
            None => FockSpace::new(base.n_modes(), base.cutoff())?,
        };
        let chain = chain.on_space(space.clone())?;
        Ok(Self {
            h0: build_static(&chain)?,
            layout: build_controls(&chain)?,
            ladders: Ladders::new(&space, chain.n_sites())?,
            chain,
        })
    }

    pub fn chain(&self) -> &ChainModel<T> {
        &self.chain
    }

    pub fn space(&self) -> &Arc<FockSpace> {
        self.chain.space()
    }

    pub fn h0(&self) -> &OperatorMatrix<T> {
        &self.h0
    }

    pub fn layout(&self) -> &ControlLayout<T> {
        &self.layout
    }

    pub fn coupling(&self, lambda: T) -> LinearModeOperator<T> {
        LinearModeOperator::coupling(self.chain.omega0(), lambda)
    }

    pub fn expand(&self, op: &LinearModeOperator<T>) -> Result<OperatorMatrix<T>> {
        self.ladders.expand(op)
    }

    /// Moves a state of the full product space onto the capped space.
    pub fn restrict(&self, psi: &StateVector<T>) -> Result<StateVector<T>> {
        psi.transfer_to(self.space())
    }

    pub fn pure(&self, psi: &StateVector<T>) -> Result<DensityMatrix<T>> {
        Ok(self.restrict(psi)?.projector())
    }
}

const TILE: usize = 32;

// Visits every (i, j) tile by tile so both `[i * dim + j]` and `[j * dim + i]`
// stay in cache.
#[inline]
fn for_each_tiled(dim: usize, mut f: impl FnMut(usize, usize)) {
    for bi in (0..dim).step_by(TILE) {
        for bj in (0..dim).step_by(TILE) {
            for i in bi..(bi + TILE).min(dim) {
                for j in bj..(bj + TILE).min(dim) {
                    f(i, j);
                }
            }
        }
    }
}

fn adjoint_into<T: Real>(dim: usize, a: &[C<T>], out: &mut [C<T>]) {
    for_each_tiled(dim, |i, j| out[j * dim + i] = a[i * dim + j].conj());
}

// out += A + A^dag
fn add_hermitian_part<T: Real>(dim: usize, a: &[C<T>], out: &mut [C<T>]) {
    for_each_tiled(dim, |i, j| {
        out[i * dim + j] = out[i * dim + j] + a[i * dim + j] + a[j * dim + i].conj();
    });
}

// out = -i (W - W^dag) with W = H rho
fn unitary_part<T: Real>(h: &OperatorMatrix<T>, rho: &[C<T>], w: &mut [C<T>], out: &mut [C<T>]) {
    let dim = h.dim();
    h.mul_dense(rho, w);
    for_each_tiled(dim, |i, j| {
        let d = w[i * dim + j] - w[j * dim + i].conj();
        out[i * dim + j] = Complex::new(d.im, -d.re);
    });
}

struct Scratch<T> {
    a: Vec<C<T>>,
    b: Vec<C<T>>,
    c: Vec<C<T>>,
}

impl<T: Real> Scratch<T> {
    fn new(dim: usize) -> Self {
        let z = vec![czero(); dim * dim];
        Self { a: z.clone(), b: z.clone(), c: z }
    }
}

/// Dissipative part of a generator, given the operators valid at one RK stage.
trait Dissipator<T: Real> {
    /// Prepares stage operators for a substep `[t, t + h]` of interval `k`.
    fn prepare(&mut self, h: &HoppingMatrix<T>, span: T, t: T) -> Result<()>;
    /// `out += D(rho)` at stage 0 (start), 1 (middle) or 2 (end).
    fn add(&self, stage: usize, rho: &[C<T>], out: &mut [C<T>], s: &mut Scratch<T>);
    fn record(&mut self) {}
}

struct NonMarkovian<'a, T: Real> {
    system: &'a OpenSystem<T>,
    l: LinearModeOperator<T>,
    l_op: OperatorMatrix<T>,
    l_adj_op: OperatorMatrix<T>,
    bath: BathSpec<T>,
    opts: OpenSolverOptions<T>,
    obar: LinearModeOperator<T>,
    stages: [OperatorMatrix<T>; 3],
    history: Vec<LinearModeOperator<T>>,
    active: bool,
    l_hermitian: bool,
}

impl<'a, T: Real> Dissipator<T> for NonMarkovian<'a, T> {
    fn prepare(&mut self, h: &HoppingMatrix<T>, span: T, t: T) -> Result<()> {
        if !self.active {
            return Ok(());
        }
        let half = span / lit(2.0);
        let mid = advance_obar(h, &self.obar, &self.l, &self.bath, half, &self.opts, t)?;
        let end = advance_obar(h, &mid, &self.l, &self.bath, half, &self.opts, t)?;
        self.stages = [
            self.system.expand(&self.obar)?,
            self.system.expand(&mid)?,
            self.system.expand(&end)?,
        ];
        self.obar = end;
        Ok(())
    }

    fn add(&self, stage: usize, rho: &[C<T>], out: &mut [C<T>], s: &mut Scratch<T>) {
        if !self.active {
            return;
        }
        let dim = self.l_op.dim();
        // With rho Hermitian and Y = Obar rho, the dissipator is
        // [L, Y^dag] - [L^dag, Y] = Z1 + Z1^dag - Z2 - Z2^dag
        // for Z1 = L Y^dag and Z2 = L^dag Y.
        self.stages[stage].mul_dense(rho, &mut s.a);
        adjoint_into(dim, &s.a, &mut s.b);
        if self.l_hermitian {
            // Z1 - Z2 = L (Y^dag - Y)
            for (b, a) in s.b.iter_mut().zip(&s.a) {
                *b = *b - *a;
            }
            self.l_op.mul_dense(&s.b, &mut s.c);
        } else {
            self.l_op.mul_dense(&s.b, &mut s.c);
            self.l_adj_op.mul_dense(&s.a, &mut s.b);
            for (c, b) in s.c.iter_mut().zip(&s.b) {
                *c = *c - *b;
            }
        }
        add_hermitian_part(dim, &s.c, out);
    }

    fn record(&mut self) {
        self.history.push(self.obar.clone());
    }
}

struct Lindblad<T: Real> {
    l: OperatorMatrix<T>,
    l_dag_l: OperatorMatrix<T>,
}

impl<T: Real> Dissipator<T> for Lindblad<T> {
    fn prepare(&mut self, _: &HoppingMatrix<T>, _: T, _: T) -> Result<()> {
        Ok(())
    }

    fn add(&self, _: usize, rho: &[C<T>], out: &mut [C<T>], s: &mut Scratch<T>) {
        let dim = self.l.dim();
        // L rho L^dag = L (L rho)^dag for Hermitian rho
        self.l.mul_dense(rho, &mut s.a);
        adjoint_into(dim, &s.a, &mut s.b);
        self.l.mul_dense(&s.b, &mut s.a);
        // -1/2 {L^dag L, rho} = -1/2 (B + B^dag) with B = L^dag L rho
        self.l_dag_l.mul_dense(rho, &mut s.c);
        let half = lit::<T>(0.5);
        for_each_tiled(dim, |i, j| {
            let jump = (s.a[i * dim + j] + s.a[j * dim + i].conj()) * half;
            let anti = (s.c[i * dim + j] + s.c[j * dim + i].conj()) * half;
            out[i * dim + j] = out[i * dim + j] + jump - anti;
        });
    }
}

fn check_invariants<T: Real>(
    rho: &DensityMatrix<T>,
    trace0: T,
    t: T,
    opts: &OpenSolverOptions<T>,
    diag: &mut OpenDiagnostics<T>,
) -> Result<()> {
    if rho.data().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("density matrix"));
    }
    let drift = (rho.trace().re - trace0).abs();
    let herm = rho.hermiticity_residue();
    diag.max_trace_drift = diag.max_trace_drift.max(drift);
    diag.max_hermiticity_residue = diag.max_hermiticity_residue.max(herm);
    let tf = t.to_f64().unwrap_or(f64::NAN);
    if drift > opts.trace_tolerance {
        return Err(Error::InvariantViolation {
            what: "trace drift",
            t: tf,
            value: drift.to_f64().unwrap_or(f64::NAN),
            tolerance: opts.trace_tolerance.to_f64().unwrap_or(f64::NAN),
        });
    }
    if herm > opts.hermiticity_tolerance {
        return Err(Error::InvariantViolation {
            what: "Hermiticity residue",
            t: tf,
            value: herm.to_f64().unwrap_or(f64::NAN),
            tolerance: opts.hermiticity_tolerance.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

fn integrate<T: Real, D: Dissipator<T>>(
    system: &OpenSystem<T>,
    controls: &ControlSet<T>,
    rho0: &DensityMatrix<T>,
    dissipator: &mut D,
    opts: &OpenSolverOptions<T>,
    observer: &mut dyn FnMut(usize, &DensityMatrix<T>),
) -> Result<(Vec<(usize, DensityMatrix<T>)>, OpenDiagnostics<T>)> {
    opts.validate()?;
    controls.check_layout(system.layout())?;
    if **rho0.space() != **system.space() {
        return Err(Error::SpaceMismatch);
    }
    let grid = *controls.grid();
    let dim = rho0.dim();
    let h_sub = grid.dt() / from_usize(opts.substeps);
    let mut diag = OpenDiagnostics {
        max_trace_drift: T::zero(),
        max_hermiticity_residue: T::zero(),
        final_min_eigenvalue: None,
    };
    let trace0 = rho0.trace().re;
    let mut rho = rho0.clone();
    check_invariants(&rho, trace0, T::zero(), opts, &mut diag)?;
    observer(0, &rho);
    dissipator.record();
    let mut snapshots = vec![(0, rho.clone())];

    let mut s = Scratch::new(dim);
    let mut w = vec![czero(); dim * dim];
    let mut ks: [Vec<C<T>>; 4] = std::array::from_fn(|_| vec![czero(); dim * dim]);
    let mut y = vec![czero(); dim * dim];

    for k in 0..grid.n_steps() {
        let h = hamiltonian_at(system.h0(), system.layout(), controls, k)?;
        let hop = system.chain().hopping_matrix(&controls.interval(k))?;
        for sub in 0..opts.substeps {
            let t = grid.time(k) + from_usize::<T>(sub) * h_sub;
            dissipator.prepare(&hop, h_sub, t)?;
            let coeffs = [T::zero(), h_sub / lit(2.0), h_sub / lit(2.0), h_sub];
            let stage_of = [0usize, 1, 1, 2];
            for i in 0..4 {
                let src: &[C<T>] = if i == 0 {
                    rho.data()
                } else {
                    let prev = &ks[i - 1];
                    for ((yv, r), p) in y.iter_mut().zip(rho.data()).zip(prev) {
                        *yv = *r + *p * coeffs[i];
                    }
                    &y
                };
                let (before, rest) = ks.split_at_mut(i);
                let _ = before;
                let out = &mut rest[0];
                unitary_part(&h, src, &mut w, out);
                dissipator.add(stage_of[i], src, out, &mut s);
            }
            let sixth = h_sub / lit(6.0);
            let two = lit::<T>(2.0);
            for (idx, r) in rho.data_mut().iter_mut().enumerate() {
                *r = *r + (ks[0][idx] + (ks[1][idx] + ks[2][idx]) * two + ks[3][idx]) * sixth;
            }
        }
        dissipator.record();
        let t = grid.time(k + 1);
        check_invariants(&rho, trace0, t, opts, &mut diag)?;
        observer(k + 1, &rho);
        let last = k + 1 == grid.n_steps();
        if last || (opts.snapshot_stride > 0 && (k + 1) % opts.snapshot_stride == 0) {
            snapshots.push((k + 1, rho.clone()));
        }
    }
    if opts.final_eigenvalue_check {
        let min = snapshots.last().expect("final snapshot").1.min_eigenvalue()?;
        if min < opts.min_eigenvalue_warning {
            log::warn!("final density matrix has eigenvalue {min:e} below {:e}", opts.min_eigenvalue_warning);
        }
        diag.final_min_eigenvalue = Some(min);
    }
    Ok((snapshots, diag))
}

/// Propagates `rho0` under the non-Markovian master equation with the
/// coupling `L = lambda sum_j q_j` of `bath`.
pub fn propagate_open<T: Real>(
    system: &OpenSystem<T>,
    controls: &ControlSet<T>,
    rho0: &DensityMatrix<T>,
    bath: &BathSpec<T>,
    opts: &OpenSolverOptions<T>,
) -> Result<OpenTrajectory<T>> {
    propagate_open_with(system, controls, rho0, bath, opts, |_, _| {})
}

/// [`propagate_open`] calling `observer(k, rho(t_k))` on every grid point.
pub fn propagate_open_with<T: Real>(
    system: &OpenSystem<T>,
    controls: &ControlSet<T>,
    rho0: &DensityMatrix<T>,
    bath: &BathSpec<T>,
    opts: &OpenSolverOptions<T>,
    mut observer: impl FnMut(usize, &DensityMatrix<T>),
) -> Result<OpenTrajectory<T>> {
    let l = system.coupling(bath.lambda);
    let l_op = system.expand(&l)?;
    let zero_op = OperatorMatrix::zeros(system.space().clone());
    let mut d = NonMarkovian {
        system,
        l_adj_op: l_op.adjoint(),
        l_hermitian: l == l.adjoint(),
        l_op,
        l: l.clone(),
        bath: *bath,
        opts: *opts,
        obar: LinearModeOperator::zeros(l.n_modes()),
        stages: [zero_op.clone(), zero_op.clone(), zero_op],
        history: Vec::with_capacity(controls.n_steps() + 1),
        active: bath.lambda > T::zero(),
    };
    let (snapshots, diagnostics) = integrate(system, controls, rho0, &mut d, opts, &mut observer)?;
    Ok(OpenTrajectory { grid: *controls.grid(), snapshots, obar_history: d.history, diagnostics })
}

/// Markovian reference `d rho/dt = -i[H, rho] + L rho L^dag - {L^dag L, rho}/2`
/// for an arbitrary operator `L` on the system space.
pub fn lindblad_reference<T: Real>(
    system: &OpenSystem<T>,
    controls: &ControlSet<T>,
    rho0: &DensityMatrix<T>,
    l: &OperatorMatrix<T>,
    opts: &OpenSolverOptions<T>,
) -> Result<OpenTrajectory<T>> {
    if **l.space() != **system.space() {
        return Err(Error::SpaceMismatch);
    }
    let mut d = Lindblad { l_dag_l: l.adjoint().matmul(l)?, l: l.clone() };
    let (snapshots, diagnostics) = integrate(system, controls, rho0, &mut d, opts, &mut |_, _| {})?;
    Ok(OpenTrajectory { grid: *controls.grid(), snapshots, obar_history: Vec::new(), diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{make_space, number};
    use crate::model::{control_labels, scenario_states};
    use crate::propagate::forward;

    fn chain3(cutoff: usize) -> ChainModel<f64> {
        ChainModel::uniform(3, 1.0, 0.3, cutoff).unwrap()
    }

    fn test_controls(n_steps: usize, t_final: f64) -> ControlSet<f64> {
        let grid = TimeGrid::new(t_final, n_steps).unwrap();
        let mut c = ControlSet::zeros(grid, control_labels(3));
        for k in 0..n_steps {
            let t = grid.time(k);
            c.set(0, k, 0.2 * (1.3 * t).sin());
            c.set(2, k, -0.1 * t / t_final);
            c.set(3, k, 0.15 * (0.7 * t).cos());
            c.set(4, k, 0.1 * (2.1 * t).sin());
        }
        c
    }

    #[test]
    fn correlation_examples() {
        let b = BathSpec::<f64>::new(0.1, 1.8).unwrap();
        assert!((ou_correlation(&b, 2.0, 2.0) - 0.9).abs() < 1e-15);
        assert_eq!(ou_correlation(&b, 1.0, 3.0), ou_correlation(&b, 3.0, 1.0));
        let wide = BathSpec::new(0.1, 200.0).unwrap();
        assert!(ou_correlation(&wide, 0.0, 1.0) < 1e-80);
        // int_0^inf alpha(t, t - tau) d tau = 1/2, by a fine trapezoid
        for g in [0.5, 1.8, 7.0] {
            let b = BathSpec::new(0.0, g).unwrap();
            let h = 1e-4;
            let n = (40.0 / g / h) as usize;
            let s: f64 = (0..=n)
                .map(|i| {
                    let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                    w * ou_correlation(&b, 0.0, i as f64 * h)
                })
                .sum::<f64>()
                * h;
            assert!((s - 0.5).abs() < 1e-7, "{s}");
        }
        assert!(BathSpec::new(-0.1, 1.0).is_err());
        assert!(BathSpec::new(0.1, 0.0).is_err());
    }

    #[test]
    fn coupling_operator_elements() {
        let chain = chain3(4);
        let l = build_l(&chain, 0.1).unwrap();
        assert!(l.is_hermitian());
        let s = chain.space();
        for j in 0..3 {
            let mut occ = [0; 3];
            occ[j] = 1;
            let e = l.get(0, s.index_of(&occ).unwrap());
            assert!((e.re - 0.1 / 2f64.sqrt()).abs() < 1e-15 && e.im == 0.0);
        }
        assert_eq!(build_l(&chain, 0.0).unwrap().nnz(), 0);
    }

    // Coefficient algebra against truncated matrices on states far from the cutoff.
    #[test]
    fn linear_operator_algebra_matches_matrices() {
        let chain = chain3(6);
        let space = chain.space().clone();
        let c = |re: f64, im: f64| Complex::new(re, im);
        let a = LinearModeOperator::new(vec![c(0.3, -0.1), c(0.0, 0.2), c(-0.4, 0.05)], vec![c(0.1, 0.1), c(0.25, 0.0), c(0.0, -0.3)]).unwrap();
        let b = LinearModeOperator::new(vec![c(-0.2, 0.3), c(0.1, 0.0), c(0.05, 0.05)], vec![c(0.0, 0.4), c(-0.1, 0.2), c(0.3, 0.0)]).unwrap();
        let eps = [0.1, -0.2, 0.05, 0.4, -0.1];
        let h = chain.hopping_matrix(&eps).unwrap();
        let hm = crate::model::assemble(&build_static(&chain).unwrap(), &build_controls(&chain).unwrap(), &eps).unwrap();
        let am = a.to_operator(&space).unwrap();
        let bm = b.to_operator(&space).unwrap();
        let low: Vec<usize> = (0..space.dim()).filter(|&i| space.total_excitation(i) <= 2).collect();
        let close = |x: &OperatorMatrix<f64>, y: &OperatorMatrix<f64>| {
            for &i in &low {
                for &j in &low {
                    assert!((x.get(i, j) - y.get(i, j)).norm() < 1e-13, "({i},{j})");
                }
            }
        };
        // [A, B] = c 1
        let comm = am.commutator(&bm).unwrap();
        let id = OperatorMatrix::identity(space.clone()).scaled(a.commutator(&b));
        close(&comm, &id);
        // [-iH, A]
        let mi = Complex::new(0.0, -1.0);
        let heis = hm.scaled(mi).commutator(&am).unwrap();
        close(&heis, &a.heisenberg(&h).to_operator(&space).unwrap());
        // adjoint
        close(&am.adjoint(), &a.adjoint().to_operator(&space).unwrap());
        // nonlinear term [-L^dag O, O] = -[L^dag, O] O
        let l = LinearModeOperator::coupling(chain.omega0(), 0.3);
        let lm = l.adjoint().to_operator(&space).unwrap();
        let lo = lm.matmul(&am).unwrap().scaled(Complex::new(-1.0, 0.0));
        let lhs = lo.commutator(&am).unwrap();
        let rhs = am.scaled(-l.adjoint().commutator(&a));
        close(&lhs, &rhs);
    }

    #[test]
    fn obar_trivial_cases() {
        let chain = chain3(4);
        let controls = test_controls(20, 1.0);
        let bath = BathSpec::new(0.0, 1.8).unwrap();
        let l = LinearModeOperator::coupling(chain.omega0(), 0.0);
        let hist = obar_history(&chain, &controls, &l, &bath, &OpenSolverOptions::default()).unwrap();
        assert!(hist.iter().all(|o| o.max_abs() == 0.0));
        let q = obar_quadrature_oracle(&chain, &controls, &l, &bath, 1.0, 2).unwrap();
        assert_eq!(q.max_abs(), 0.0);
        let l = LinearModeOperator::coupling(chain.omega0(), 0.1);
        let q0 = obar_quadrature_oracle(&chain, &controls, &l, &bath, 0.0, 2).unwrap();
        assert_eq!(q0.max_abs(), 0.0);
    }

    #[test]
    fn obar_without_hamiltonian_relaxes_to_half_l() {
        // With H = 0, Obar stays parallel to the Hermitian L, the quadratic
        // term vanishes and Obar(t) = (L/2)(1 - exp(-gamma t)) exactly.
        let h = ChainModel::uniform(1, 1.0, 0.0, 3).unwrap().hopping_matrix(&[-1.0]).unwrap();
        let bath = BathSpec::new(0.3, 1.8).unwrap();
        let l = LinearModeOperator::coupling(&[1.0], 0.3);
        let mut o = LinearModeOperator::zeros(1);
        let dt = 0.01;
        for step in 1..=500 {
            o = evolve_obar_step(&h, &o, &l, &bath, dt, 1e2).unwrap();
            let t = step as f64 * dt;
            let want = l.scaled(creal(0.5 * (1.0 - (-1.8 * t).exp())));
            assert!(o.max_abs_diff(&want) < 1e-10);
        }
    }

    #[test]
    fn obar_guard_trips() {
        let h = ChainModel::uniform(1, 1.0, 0.0, 3).unwrap().hopping_matrix(&[0.0]).unwrap();
        let bath = BathSpec::new(1.0, 1.8).unwrap();
        let l = LinearModeOperator::coupling(&[1.0], 1.0);
        let r = evolve_obar_step(&h, &LinearModeOperator::zeros(1), &l, &bath, 1.0, 1e-3);
        assert!(matches!(r, Err(Error::Divergence { .. })));
    }

    #[test]
    fn closed_equation_matches_quadrature() {
        let chain = chain3(4);
        let controls = test_controls(40, 2.0);
        let bath = BathSpec::new(0.3, 1.8).unwrap();
        let l = LinearModeOperator::coupling(chain.omega0(), 0.3);
        let ode = obar_history(&chain, &controls, &l, &bath, &OpenSolverOptions::default()).unwrap();
        let quad = obar_quadrature_history(&chain, &controls, &l, &bath, 2.0, 32).unwrap();
        for k in [10, 20, 40] {
            let d = ode[k].max_abs_diff(&quad[k]);
            assert!(d < 1e-6, "k = {k}: {d:e}");
        }
        // the quadratic term is visible at this coupling
        assert!(ode[40].max_abs() > 0.01);
    }

    #[test]
    fn decoupled_bath_reproduces_closed_evolution() {
        let chain = chain3(5);
        let system = OpenSystem::new(&chain).unwrap();
        let controls = test_controls(50, 1.0);
        let (psi0, _) = scenario_states(&chain, Complex::new(1.0, 0.0), std::f64::consts::FRAC_PI_2).unwrap();
        let rho0 = system.pure(&psi0).unwrap();
        let bath = BathSpec::new(0.0, 1.8).unwrap();
        let traj = propagate_open(&system, &controls, &rho0, &bath, &OpenSolverOptions::default()).unwrap();
        let closed = forward(&build_static(&chain).unwrap(), &build_controls(&chain).unwrap(), &controls, &psi0).unwrap();
        let psi_t = system.restrict(closed.final_state()).unwrap();
        let f = traj.final_rho().overlap_with(&psi_t).unwrap();
        assert!(f >= 1.0 - 1e-8, "{f}");
        assert_eq!(traj.obar_history.len(), 51);
        assert!(traj.obar_history.iter().all(|o| o.max_abs() == 0.0));
    }

    #[test]
    fn coupled_bath_keeps_trace_and_hermiticity() {
        let chain = chain3(5);
        let system = OpenSystem::new(&chain).unwrap();
        let controls = test_controls(50, 1.0);
        let (psi0, _) = scenario_states(&chain, Complex::new(1.0, 0.0), std::f64::consts::FRAC_PI_2).unwrap();
        let rho0 = system.pure(&psi0).unwrap();
        let bath = BathSpec::new(0.3, 1.8).unwrap();
        let opts = OpenSolverOptions { snapshot_stride: 10, ..Default::default() };
        let mut seen = 0;
        let traj = propagate_open_with(&system, &controls, &rho0, &bath, &opts, |_, _| seen += 1).unwrap();
        assert_eq!(seen, 51);
        assert_eq!(traj.snapshots.len(), 6);
        assert!(traj.diagnostics.max_trace_drift < 1e-12);
        assert!(traj.diagnostics.max_hermiticity_residue < 1e-14);
        assert!(traj.final_rho().purity() < 1.0 - 1e-4);
        assert!(traj.diagnostics.final_min_eigenvalue.unwrap() > -1e-3);
        // Obar from the coupled run equals the standalone closed equation
        let l = system.coupling(0.3);
        let hist = obar_history(&chain, &controls, &l, &bath, &opts).unwrap();
        assert!(hist[50].max_abs_diff(&traj.obar_history[50]) < 1e-15);
    }

    #[test]
    fn lindblad_damped_oscillator() {
        // single mode, H = w n, L = sqrt(kappa) a: <n>(t) = n0 exp(-kappa t)
        let space = make_space(1, 8).unwrap();
        let chain = ChainModel::new(vec![1.0], vec![], space.clone()).unwrap();
        let system = OpenSystem::with_cap(&chain, None).unwrap();
        let kappa: f64 = 0.4;
        let l = annihilation::<f64>(&space, 0).unwrap().scaled(creal(kappa.sqrt()));
        let grid = TimeGrid::new(3.0, 300).unwrap();
        let controls = ControlSet::zeros(grid, control_labels(1));
        let rho0 = StateVector::basis(space.clone(), 3).projector();
        let traj = lindblad_reference(&system, &controls, &rho0, &l, &OpenSolverOptions::default()).unwrap();
        let n = number::<f64>(&space, 0).unwrap();
        let got = traj.final_rho().expectation(&n).re;
        assert!((got - 3.0 * (-kappa * 3.0).exp()).abs() < 1e-9, "{got}");
        assert!(traj.obar_history.is_empty());
    }

    #[test]
    fn lindblad_without_coupling_is_unitary() {
        let chain = chain3(4);
        let system = OpenSystem::new(&chain).unwrap();
        let controls = test_controls(30, 1.0);
        let (psi0, _) = scenario_states(&chain, Complex::new(1.0, 0.0), 0.0).unwrap();
        let rho0 = system.pure(&psi0).unwrap();
        let zero = OperatorMatrix::zeros(system.space().clone());
        let traj = lindblad_reference(&system, &controls, &rho0, &zero, &OpenSolverOptions::default()).unwrap();
        let closed = forward(&build_static(&chain).unwrap(), &build_controls(&chain).unwrap(), &controls, &psi0).unwrap();
        let f = traj.final_rho().overlap_with(&system.restrict(closed.final_state()).unwrap()).unwrap();
        assert!(f >= 1.0 - 1e-10);
    }

    #[test]
    fn rejects_foreign_state_space() {
        let chain = chain3(4);
        let system = OpenSystem::new(&chain).unwrap();
        let controls = test_controls(10, 1.0);
        let rho0 = StateVector::basis(chain.space().clone(), 0).projector();
        let bath = BathSpec::new(0.1, 1.8).unwrap();
        let r = propagate_open(&system, &controls, &rho0, &bath, &OpenSolverOptions::default());
        assert!(matches!(r, Err(Error::SpaceMismatch)));
    }

    #[test]
    fn hermitian_coupling_shortcut_matches_general_dissipator() {
        let chain = chain3(4);
        let system = OpenSystem::new(&chain).unwrap();
        let (psi, _) = scenario_states(&chain, Complex::new(0.8, 0.3), 0.4).unwrap();
        let rho = system.pure(&psi).unwrap();
        let l = system.coupling(0.1);
        let l_op = system.expand(&l).unwrap();
        let obar = LinearModeOperator::new(
            vec![Complex::new(0.03, -0.01), Complex::new(0.02, 0.04), Complex::new(-0.01, 0.02)],
            vec![Complex::new(0.01, 0.02), Complex::new(-0.03, 0.01), Complex::new(0.02, -0.02)],
        )
        .unwrap();
        let stage = system.expand(&obar).unwrap();
        let dissipator = |l_hermitian: bool| {
            let d = NonMarkovian {
                system: &system,
                l: l.clone(),
                l_adj_op: l_op.adjoint(),
                l_op: l_op.clone(),
                bath: BathSpec::new(0.1, 1.8).unwrap(),
                opts: OpenSolverOptions::default(),
                obar: obar.clone(),
                stages: [stage.clone(), stage.clone(), stage.clone()],
                history: Vec::new(),
                active: true,
                l_hermitian,
            };
            let dim = rho.dim();
            let mut out = vec![czero(); dim * dim];
            d.add(1, rho.data(), &mut out, &mut Scratch::new(dim));
            out
        };
        let (fast, general) = (dissipator(true), dissipator(false));
        let scale = general.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(scale > 1e-4);
        let diff = fast.iter().zip(&general).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-14 * scale.max(1.0), "{diff}");
    }
}
