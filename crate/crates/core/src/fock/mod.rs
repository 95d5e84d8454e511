//! Truncated bosonic Fock spaces: ladder and quadrature operators, coherent
//! and cat states, product states and reduced states.
//!
//! Mode indices are 0-based throughout the API.

mod operator;
mod space;
mod state;

use std::sync::Arc;

use num_complex::Complex;

pub use operator::OperatorMatrix;
pub use space::{make_space, FockSpace, DEFAULT_DIM_BUDGET};
pub use state::{partial_trace, DensityMatrix, StateVector};

use crate::error::{Error, Result};
use crate::scalar::{cone, creal, czero, from_usize, lit, Real, C};

/// Lowering operator `a_mode`: `<n-1|a|n> = sqrt(n)`, identity on the other
/// modes.
pub fn annihilation<T: Real>(space: &Arc<FockSpace>, mode: usize) -> Result<OperatorMatrix<T>> {
    space.check_mode(mode)?;
    let triplets = (0..space.dim())
        .filter_map(|i| {
            let n = space.occupation(i, mode);
            let j = space.shifted(i, mode, -1)?;
            Some((j, i, creal(from_usize::<T>(n).sqrt())))
        })
        .collect();
    Ok(OperatorMatrix::from_triplets(space.clone(), triplets))
}

/// Raising operator `a_mode^dagger` (the adjoint of [`annihilation`]).
pub fn creation<T: Real>(space: &Arc<FockSpace>, mode: usize) -> Result<OperatorMatrix<T>> {
    Ok(annihilation::<T>(space, mode)?.adjoint())
}

/// Number operator `a_mode^dagger a_mode`.
pub fn number<T: Real>(space: &Arc<FockSpace>, mode: usize) -> Result<OperatorMatrix<T>> {
    space.check_mode(mode)?;
    let triplets = (0..space.dim())
        .map(|i| (i, i, creal(from_usize::<T>(space.occupation(i, mode)))))
        .collect();
    Ok(OperatorMatrix::from_triplets(space.clone(), triplets))
}

/// Excitation hop `a_i^dagger a_j + a_j^dagger a_i`.
pub fn hop<T: Real>(space: &Arc<FockSpace>, i: usize, j: usize) -> Result<OperatorMatrix<T>> {
    space.check_mode(i)?;
    space.check_mode(j)?;
    if i == j {
        return Err(Error::InvalidArgument("a hop needs two distinct modes".into()));
    }
    let mut triplets = Vec::new();
    for s in 0..space.dim() {
        let (ni, nj) = (space.occupation(s, i), space.occupation(s, j));
        // a_i^dagger a_j |.., n_i, .., n_j, ..>
        if let Some(t) = space.shifted(s, j, -1).and_then(|t| space.shifted(t, i, 1)) {
            let amp = (from_usize::<T>(nj) * from_usize::<T>(ni + 1)).sqrt();
            triplets.push((t, s, creal(amp)));
            triplets.push((s, t, creal(amp)));
        }
    }
    Ok(OperatorMatrix::from_triplets(space.clone(), triplets))
}

/// Position quadrature `q = (a + a^dagger) / sqrt(2 omega)`.
pub fn position<T: Real>(space: &Arc<FockSpace>, mode: usize, omega: T) -> Result<OperatorMatrix<T>> {
    if !(omega > T::zero()) {
        return Err(Error::InvalidArgument(format!("oscillator frequency must be positive, got {omega}")));
    }
    let a = annihilation::<T>(space, mode)?;
    let ad = a.adjoint();
    let s = creal(T::one() / (lit::<T>(2.0) * omega).sqrt());
    OperatorMatrix::lincomb(space.clone(), &[(s, &a), (s, &ad)])
}

/// Single-mode amplitudes after truncation and renormalization.
#[derive(Debug, Clone)]
pub struct TruncatedMode<T> {
    /// Unit-norm amplitudes `c_0 .. c_{cutoff-1}`.
    pub amplitudes: Vec<C<T>>,
    /// Weight of the untruncated state that survives the cutoff, i.e. the
    /// squared norm before renormalization.
    pub retained_weight: T,
}

/// `alpha^n / sqrt(n!)` for `n < cutoff`, by upward recurrence.
fn displacement_powers<T: Real>(alpha: C<T>, cutoff: usize) -> Vec<C<T>> {
    let mut out = Vec::with_capacity(cutoff);
    let mut term = cone::<T>();
    for n in 0..cutoff {
        if n > 0 {
            term = term * alpha / from_usize::<T>(n).sqrt();
        }
        out.push(term);
    }
    out
}

fn renormalize<T: Real>(mut amps: Vec<C<T>>) -> TruncatedMode<T> {
    let weight: T = amps.iter().map(|z| z.norm_sqr()).sum();
    let n = weight.sqrt();
    amps.iter_mut().for_each(|z| *z = *z / n);
    TruncatedMode {
        amplitudes: amps,
        retained_weight: weight,
    }
}

/// Coherent state `|alpha>`: `c_n = exp(-|alpha|^2/2) alpha^n / sqrt(n!)`,
/// truncated at `cutoff` and renormalized.
pub fn coherent_amplitudes<T: Real>(alpha: C<T>, cutoff: usize) -> TruncatedMode<T> {
    let pref = (-alpha.norm_sqr() / lit(2.0)).exp();
    renormalize(
        displacement_powers(alpha, cutoff)
            .into_iter()
            .map(|z| z * pref)
            .collect(),
    )
}

/// Even cat state `N_alpha (|alpha> + |-alpha>)` truncated at `cutoff` and
/// renormalized. `retained_weight` is measured against the exact
/// `N_alpha = [2 (1 + exp(-2|alpha|^2))]^(-1/2)`.
pub fn cat_amplitudes<T: Real>(alpha: C<T>, cutoff: usize) -> TruncatedMode<T> {
    let two = lit::<T>(2.0);
    let r2 = alpha.norm_sqr();
    let n_alpha = T::one() / (two * (T::one() + (-two * r2).exp())).sqrt();
    let pref = (-r2 / two).exp() * n_alpha * two;
    let amps = displacement_powers(alpha, cutoff)
        .into_iter()
        .enumerate()
        .map(|(n, z)| if n % 2 == 0 { z * pref } else { czero() })
        .collect();
    renormalize(amps)
}

/// Normalization constant `N_alpha` of the untruncated even cat.
pub fn cat_normalization<T: Real>(alpha: C<T>) -> T {
    let two = lit::<T>(2.0);
    T::one() / (two * (T::one() + (-two * alpha.norm_sqr()).exp())).sqrt()
}

pub fn vacuum_amplitudes<T: Real>(cutoff: usize) -> Vec<C<T>> {
    let mut v = vec![czero(); cutoff];
    v[0] = cone();
    v
}

/// Tensor product of single-mode amplitude lists in the space's basis
/// order. On excitation-capped spaces the dropped components are discarded
/// and the result renormalized.
pub fn product_state<T: Real>(space: &Arc<FockSpace>, per_mode: &[Vec<C<T>>]) -> Result<StateVector<T>> {
    if per_mode.len() != space.n_modes() {
        return Err(Error::LengthMismatch {
            what: "per-mode amplitude lists",
            expected: space.n_modes(),
            found: per_mode.len(),
        });
    }
    for m in per_mode {
        if m.len() != space.cutoff() {
            return Err(Error::LengthMismatch {
                what: "single-mode amplitudes",
                expected: space.cutoff(),
                found: m.len(),
            });
        }
    }
    let amps = (0..space.dim())
        .map(|i| {
            (0..space.n_modes()).fold(Complex::new(T::one(), T::zero()), |acc, j| {
                acc * per_mode[j][space.occupation(i, j)]
            })
        })
        .collect();
    Ok(StateVector::new(space.clone(), amps)?.normalized())
}
