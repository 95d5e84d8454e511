//! The controlled oscillator chain
//! `H(t) = sum_j w_j(t) a_j^dag a_j + sum_j k_j(t) (a_j^dag a_{j+1} + h.c.)`
//! written as `H_0 + sum_l eps_l(t) H_l`, plus the cat-transfer scenario
//! states.
//!
//! Controls are deviations from the static values: `w_j(t) = w_{j,0} +
//! eps_j(t)` for the first `N` controls and `k_j(t) = k_{j,0} +
//! eps_{N+j}(t)` for the remaining `N - 1`.

use std::sync::Arc;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::fock::{
    cat_amplitudes, hop, number, product_state, vacuum_amplitudes, FockSpace, OperatorMatrix,
    StateVector,
};
use crate::scalar::{creal, Real, C};

#[derive(Debug, Clone)]
pub struct ChainModel<T> {
    omega0: Vec<T>,
    k0: Vec<T>,
    space: Arc<FockSpace>,
}

impl<T: Real> ChainModel<T> {
    pub fn new(omega0: Vec<T>, k0: Vec<T>, space: Arc<FockSpace>) -> Result<Self> {
        let n = omega0.len();
        if n == 0 {
            return Err(Error::InvalidArgument("chain needs at least one site".into()));
        }
        if space.n_modes() != n {
            return Err(Error::LengthMismatch {
                what: "chain sites vs Fock-space modes",
                expected: space.n_modes(),
                found: n,
            });
        }
        if k0.len() != n - 1 {
            return Err(Error::LengthMismatch {
                what: "static couplings",
                expected: n - 1,
                found: k0.len(),
            });
        }
        if let Some(w) = omega0.iter().find(|w| !(**w > T::zero()) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!("static frequencies must be positive, got {w}")));
        }
        if k0.iter().any(|k| !k.is_finite()) {
            return Err(Error::NonFinite("static couplings"));
        }
        Ok(Self { omega0, k0, space })
    }

    /// Chain of `n_sites` identical oscillators with identical couplings.
    pub fn uniform(n_sites: usize, omega0: T, k0: T, cutoff: usize) -> Result<Self> {
        let space = FockSpace::new(n_sites, cutoff)?;
        Self::new(vec![omega0; n_sites], vec![k0; n_sites.saturating_sub(1)], space)
    }

    pub fn n_sites(&self) -> usize {
        self.omega0.len()
    }

    pub fn n_controls(&self) -> usize {
        2 * self.n_sites() - 1
    }

    pub fn omega0(&self) -> &[T] {
        &self.omega0
    }

    pub fn k0(&self) -> &[T] {
        &self.k0
    }

    pub fn space(&self) -> &Arc<FockSpace> {
        &self.space
    }

    /// Same chain on a different truncation of the same modes.
    pub fn on_space(&self, space: Arc<FockSpace>) -> Result<Self> {
        Self::new(self.omega0.clone(), self.k0.clone(), space)
    }

    /// Single-excitation Hamiltonian `h` with `H = sum_ij h_ij a_i^dag a_j`
    /// at control values `eps`.
    pub fn hopping_matrix(&self, eps: &[T]) -> Result<HoppingMatrix<T>> {
        let n = self.n_sites();
        if eps.len() != self.n_controls() {
            return Err(Error::LengthMismatch {
                what: "control values",
                expected: self.n_controls(),
                found: eps.len(),
            });
        }
        let mut h = vec![T::zero(); n * n];
        for j in 0..n {
            h[j * n + j] = self.omega0[j] + eps[j];
        }
        for j in 0..n - 1 {
            let k = self.k0[j] + eps[n + j];
            h[j * n + j + 1] = k;
            h[(j + 1) * n + j] = k;
        }
        Ok(HoppingMatrix { n, h })
    }
}

/// Real symmetric single-excitation Hamiltonian of a quadratic,
/// excitation-conserving chain.
#[derive(Debug, Clone, PartialEq)]
pub struct HoppingMatrix<T> {
    n: usize,
    h: Vec<T>,
}

impl<T: Real> HoppingMatrix<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.h[i * self.n + j]
    }

    /// `h v` for a complex vector.
    pub fn apply(&self, v: &[C<T>]) -> Vec<C<T>> {
        (0..self.n)
            .map(|i| {
                (0..self.n).fold(Complex::new(T::zero(), T::zero()), |acc, j| acc + v[j] * self.get(i, j))
            })
            .collect()
    }
}

/// The control operators `H_l` with their labels, in control order
/// `omega_1 .. omega_N, k_1 .. k_{N-1}`.
#[derive(Debug, Clone)]
pub struct ControlLayout<T> {
    labels: Vec<String>,
    operators: Vec<OperatorMatrix<T>>,
}

impl<T: Real> ControlLayout<T> {
    pub fn n_controls(&self) -> usize {
        self.operators.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn operators(&self) -> &[OperatorMatrix<T>] {
        &self.operators
    }

    pub fn operator(&self, l: usize) -> &OperatorMatrix<T> {
        &self.operators[l]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Column labels for an `n_sites` chain: `omega_1 .. omega_N, k_1 .. k_{N-1}`.
pub fn control_labels(n_sites: usize) -> Vec<String> {
    (1..=n_sites)
        .map(|j| format!("omega_{j}"))
        .chain((1..n_sites).map(|j| format!("k_{j}")))
        .collect()
}

/// `H_0 = sum_j w_{j,0} n_j + sum_j k_{j,0} (a_j^dag a_{j+1} + h.c.)`
pub fn build_static<T: Real>(chain: &ChainModel<T>) -> Result<OperatorMatrix<T>> {
    let space = chain.space();
    let mut ops = Vec::new();
    for (j, w) in chain.omega0().iter().enumerate() {
        ops.push((creal(*w), number::<T>(space, j)?));
    }
    for (j, k) in chain.k0().iter().enumerate() {
        ops.push((creal(*k), hop::<T>(space, j, j + 1)?));
    }
    let terms: Vec<_> = ops.iter().map(|(c, op)| (*c, op)).collect();
    OperatorMatrix::lincomb(space.clone(), &terms)
}

pub fn build_controls<T: Real>(chain: &ChainModel<T>) -> Result<ControlLayout<T>> {
    let space = chain.space();
    let n = chain.n_sites();
    let mut operators = Vec::with_capacity(chain.n_controls());
    for j in 0..n {
        operators.push(number::<T>(space, j)?);
    }
    for j in 0..n - 1 {
        operators.push(hop::<T>(space, j, j + 1)?);
    }
    Ok(ControlLayout {
        labels: control_labels(n),
        operators,
    })
}

/// `H_0 + sum_l eps_l H_l`
pub fn assemble<T: Real>(
    h0: &OperatorMatrix<T>,
    layout: &ControlLayout<T>,
    eps: &[T],
) -> Result<OperatorMatrix<T>> {
    if eps.len() != layout.n_controls() {
        return Err(Error::LengthMismatch {
            what: "control values",
            expected: layout.n_controls(),
            found: eps.len(),
        });
    }
    let mut terms = Vec::with_capacity(eps.len() + 1);
    terms.push((creal(T::one()), h0));
    terms.extend(eps.iter().zip(layout.operators()).map(|(e, op)| (creal(*e), op)));
    OperatorMatrix::lincomb(h0.space().clone(), &terms)
}

/// Initial state `cat(alpha)` on site 1 with the rest in vacuum, and target
/// `cat(alpha e^{i theta})` on site N with the rest in vacuum.
pub fn scenario_states<T: Real>(
    chain: &ChainModel<T>,
    alpha: C<T>,
    theta_target: T,
) -> Result<(StateVector<T>, StateVector<T>)> {
    let space = chain.space();
    let c = space.cutoff();
    let n = chain.n_sites();
    let vac = vacuum_amplitudes::<T>(c);
    let mut initial = vec![vac.clone(); n];
    initial[0] = cat_amplitudes(alpha, c).amplitudes;
    let mut target = vec![vac; n];
    let rotated = alpha * Complex::from_polar(T::one(), theta_target);
    target[n - 1] = cat_amplitudes(rotated, c).amplitudes;
    Ok((product_state(space, &initial)?, product_state(space, &target)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{annihilation, make_space};
    use std::f64::consts::PI;

    fn reference_chain() -> ChainModel<f64> {
        ChainModel::uniform(3, 1.0, 0.3, 10).unwrap()
    }

    #[test]
    fn single_site_number_operator() {
        let chain = ChainModel::<f64>::uniform(1, 1.0, 0.0, 4).unwrap();
        let h0 = build_static(&chain).unwrap();
        assert!((h0.get(1, 1).re - 1.0).abs() < 1e-15);
        assert_eq!(chain.n_controls(), 1);
    }

    #[test]
    fn static_coupling_element() {
        let chain = reference_chain();
        let s = chain.space();
        let h0 = build_static(&chain).unwrap();
        assert!(h0.is_hermitian());
        let i = s.index_of(&[1, 0, 0]).unwrap();
        let j = s.index_of(&[0, 1, 0]).unwrap();
        assert!((h0.get(i, j).re - 0.3).abs() < 1e-15);
        assert!((h0.get(j, i).re - 0.3).abs() < 1e-15);
    }

    #[test]
    fn decoupled_chain_single_excitation_block_is_diagonal() {
        let chain = ChainModel::uniform(3, 1.0, 0.0, 4).unwrap();
        let s = chain.space().clone();
        let h0 = build_static(&chain).unwrap();
        let singles: Vec<usize> = (0..3)
            .map(|j| {
                let mut occ = [0; 3];
                occ[j] = 1;
                s.index_of(&occ).unwrap()
            })
            .collect();
        for &a in &singles {
            for &b in &singles {
                let want: f64 = if a == b { 1.0 } else { 0.0 };
                assert!((h0.get(a, b).re - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn five_controls_for_three_sites() {
        let chain = reference_chain();
        let layout = build_controls(&chain).unwrap();
        assert_eq!(layout.n_controls(), 5);
        assert_eq!(layout.labels(), ["omega_1", "omega_2", "omega_3", "k_1", "k_2"]);
        assert!(layout.operators().iter().all(|op| op.is_hermitian()));
        let s = chain.space().clone();
        let e010 = StateVector::<f64>::basis(s.clone(), s.index_of(&[0, 1, 0]).unwrap());
        let out = layout.operator(1).apply_vec(e010.amplitudes());
        assert!((out[s.index_of(&[0, 1, 0]).unwrap()].re - 1.0).abs() < 1e-15);
        let e100 = StateVector::<f64>::basis(s.clone(), s.index_of(&[1, 0, 0]).unwrap());
        let out = layout.operator(3).apply_vec(e100.amplitudes());
        assert!((out[s.index_of(&[0, 1, 0]).unwrap()].re - 1.0).abs() < 1e-15);
        assert!((crate::scalar::norm(&out) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn assemble_zero_and_single_control() {
        let chain = ChainModel::uniform(3, 1.0, 0.3, 4).unwrap();
        let h0 = build_static(&chain).unwrap();
        let layout = build_controls(&chain).unwrap();
        let h = assemble(&h0, &layout, &[0.0; 5]).unwrap();
        assert_eq!(h.to_dense(), h0.to_dense());
        let h = assemble(&h0, &layout, &[0.0, 0.0, 0.0, 0.7, 0.0]).unwrap();
        let want = OperatorMatrix::lincomb(
            chain.space().clone(),
            &[(creal(1.0), &h0), (creal(0.7), layout.operator(3))],
        )
        .unwrap();
        for (a, b) in h.to_dense().iter().zip(want.to_dense()) {
            assert!((a - b).norm() < 1e-15);
        }
        assert!(assemble(&h0, &layout, &[0.0; 4]).is_err());
    }

    #[test]
    fn hopping_matrix_matches_operator() {
        let chain = ChainModel::uniform(3, 1.0, 0.3, 3).unwrap();
        let eps = [0.1, -0.2, 0.05, 0.4, -0.1];
        let h = chain.hopping_matrix(&eps).unwrap();
        let op = assemble(&build_static(&chain).unwrap(), &build_controls(&chain).unwrap(), &eps).unwrap();
        let s = chain.space();
        let a: Vec<_> = (0..3).map(|j| annihilation::<f64>(s, j).unwrap()).collect();
        for i in 0..3 {
            for j in 0..3 {
                let prod = a[i].adjoint().matmul(&a[j]).unwrap();
                let vac = StateVector::<f64>::basis(s.clone(), 0);
                // <1_i| H |1_j> equals h_ij
                let ei = a[i].adjoint().apply_vec(vac.amplitudes());
                let ej = a[j].adjoint().apply_vec(vac.amplitudes());
                assert!((op.bracket(&ei, &ej).re - h.get(i, j)).abs() < 1e-15);
                assert!(prod.nnz() > 0);
            }
        }
    }

    #[test]
    fn scenario_states_are_unit_and_nearly_orthogonal() {
        let chain = reference_chain();
        for theta in [PI / 2.0, PI / 4.0] {
            let (psi0, target) = scenario_states(&chain, Complex::new(1.0, 0.0), theta).unwrap();
            assert!((psi0.norm() - 1.0).abs() < 1e-12);
            assert!((target.norm() - 1.0).abs() < 1e-12);
            // oracle: only |000> is shared, overlap = c_0(alpha) * conj(c_0(rotated))
            let c0 = cat_amplitudes(Complex::new(1.0, 0.0), 10).amplitudes[0];
            let c0r = cat_amplitudes(Complex::from_polar(1.0, theta), 10).amplitudes[0];
            let direct = target.inner(&psi0);
            assert!((direct - c0r.conj() * c0).norm() < 1e-12);
            // both cats carry |c_0|^2 = 2 e^-1 / (1 + e^-2) when |alpha| = 1
            let e = (-1.0f64).exp();
            assert!((direct.norm() - 2.0 * e / (1.0 + e * e)).abs() < 1e-6);
        }
    }

    #[test]
    fn half_turn_target_is_plain_transfer() {
        let chain = reference_chain();
        let one = Complex::new(1.0, 0.0);
        let (_, rotated) = scenario_states(&chain, one, PI).unwrap();
        let (_, plain) = scenario_states(&chain, one, 0.0).unwrap();
        assert!((rotated.inner(&plain).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chain_validation() {
        let s = make_space(3, 3).unwrap();
        assert!(ChainModel::new(vec![1.0, 1.0], vec![0.3], s.clone()).is_err());
        assert!(ChainModel::new(vec![1.0, 1.0, 1.0], vec![0.3], s.clone()).is_err());
        assert!(ChainModel::new(vec![1.0, 0.0, 1.0], vec![0.3, 0.3], s.clone()).is_err());
        assert!(ChainModel::new(vec![1.0, 1.0, 1.0], vec![0.3, 0.3], s).is_ok());
    }
}
