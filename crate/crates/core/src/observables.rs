//! Fidelities, single-mode Wigner functions and truncation leakage.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, FockSpace, StateVector};
use crate::scalar::{lit, Real, C};

/// Eigenvalues below `-CLIP_THRESHOLD * trace` are rejected rather than clipped.
pub const CLIP_THRESHOLD: f64 = 1e-3;

fn to_f64_matrix<T: Real>(n: usize, data: &[C<T>]) -> DMatrix<Complex<f64>> {
    DMatrix::from_fn(n, n, |i, j| {
        // Hermitian part
        let a = data[i * n + j];
        let b = data[j * n + i].conj();
        Complex::new(
            0.5 * (a.re + b.re).to_f64().unwrap_or(f64::NAN),
            0.5 * (a.im + b.im).to_f64().unwrap_or(f64::NAN),
        )
    })
}

/// Clipped, renormalized spectrum: `(eigenvalues, eigenvectors as columns)`.
fn clipped_spectrum(m: DMatrix<Complex<f64>>) -> Result<(DVector<f64>, DMatrix<Complex<f64>>)> {
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("fidelity input"));
    }
    let n = m.nrows();
    let eig = m
        .try_symmetric_eigen(1e-15, 100_000)
        .ok_or_else(|| Error::Eigen(format!("no convergence for a {n}x{n} matrix")))?;
    let trace: f64 = eig.eigenvalues.iter().sum();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -CLIP_THRESHOLD * trace.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NegativeEigenvalue { value: min });
    }
    let mut vals = eig.eigenvalues.map(|v| v.max(0.0));
    let total: f64 = vals.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("density matrix has no positive weight".into()));
    }
    vals /= total;
    Ok((vals, eig.eigenvectors))
}

/// Uhlmann fidelity `(tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`.
///
/// Both arguments are Hermitized, small negative eigenvalues are clipped and
/// the spectra renormalized. With `rho = V D V^dag` and `sigma = W S W^dag`
/// the trace norm equals the sum of singular values of
/// `D^1/2 V^dag W S^1/2`, restricted to both supports.
pub fn fidelity<T: Real>(rho: &DensityMatrix<T>, sigma: &DensityMatrix<T>) -> Result<T> {
    if **rho.space() != **sigma.space() {
        return Err(Error::SpaceMismatch);
    }
    let n = rho.dim();
    let (rv, rvec) = clipped_spectrum(to_f64_matrix(n, rho.data()))?;
    let (sv, svec) = clipped_spectrum(to_f64_matrix(n, sigma.data()))?;
    let support = |v: &DVector<f64>| -> Vec<usize> {
        let max = v.max();
        (0..v.len()).filter(|&k| v[k] > max * 1e-14).collect()
    };
    let (rs, ss) = (support(&rv), support(&sv));
    let v_s = DMatrix::from_fn(n, rs.len(), |i, k| rvec[(i, rs[k])] * rv[rs[k]].sqrt());
    let w_s = DMatrix::from_fn(n, ss.len(), |i, k| svec[(i, ss[k])] * sv[ss[k]].sqrt());
    let b = v_s.adjoint() * w_s;
    let root: f64 = b.singular_values().iter().sum();
    Ok(T::from_f64((root * root).clamp(0.0, 1.0)).expect("f64 fits"))
}

/// `|<psi|phi>|^2`
pub fn fidelity_pure<T: Real>(psi: &StateVector<T>, phi: &StateVector<T>) -> T {
    psi.inner(phi).norm_sqr().min(T::one())
}

/// `<psi|rho|psi>`, the fidelity against a pure state.
pub fn fidelity_to_pure<T: Real>(rho: &DensityMatrix<T>, psi: &StateVector<T>) -> Result<T> {
    Ok(rho.overlap_with(psi)?.max(T::zero()).min(T::one()))
}

/// Anything with Fock-basis populations.
pub trait Populated<T> {
    fn fock_space(&self) -> &FockSpace;
    fn fock_populations(&self) -> Vec<T>;
}

impl<T: Real> Populated<T> for StateVector<T> {
    fn fock_space(&self) -> &FockSpace {
        self.space()
    }

    fn fock_populations(&self) -> Vec<T> {
        self.populations()
    }
}

impl<T: Real> Populated<T> for DensityMatrix<T> {
    fn fock_space(&self) -> &FockSpace {
        self.space()
    }

    fn fock_populations(&self) -> Vec<T> {
        self.populations()
    }
}

/// Population of basis states where some mode sits in one of its
/// `top_levels` highest retained levels.
pub fn leakage<T: Real, S: Populated<T>>(state: &S, top_levels: usize) -> Result<T> {
    let space = state.fock_space();
    let c = space.cutoff();
    if top_levels == 0 || top_levels > c {
        return Err(Error::InvalidArgument(format!("top_levels must lie in 1..={c}, got {top_levels}")));
    }
    let threshold = c - top_levels;
    let pops = state.fock_populations();
    Ok((0..space.dim())
        .filter(|&i| (0..space.n_modes()).any(|m| space.occupation(i, m) >= threshold))
        .map(|i| pops[i])
        .sum())
}

/// `W(x, p)` on a rectangular grid, `values[ix * p_axis.len() + ip]`.
///
/// Convention: `x = (a + a^dag)/sqrt 2`, `p = (a - a^dag)/(i sqrt 2)`,
/// `int W dx dp = 1`, vacuum `W = exp(-x^2 - p^2)/pi`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WignerGrid<T> {
    pub x_axis: Vec<T>,
    pub p_axis: Vec<T>,
    pub values: Vec<T>,
    /// 0-based mode the reduced state belongs to.
    pub mode: usize,
    pub time: Option<T>,
    /// Largest discarded imaginary part.
    pub max_imaginary_residue: T,
}

impl<T: Real> WignerGrid<T> {
    #[inline]
    pub fn value(&self, ix: usize, ip: usize) -> T {
        self.values[ix * self.p_axis.len() + ip]
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Largest `|W|` on the grid edge.
    pub fn boundary_max(&self) -> T {
        let (nx, np) = (self.x_axis.len(), self.p_axis.len());
        let mut m = T::zero();
        for ix in 0..nx {
            for ip in 0..np {
                if ix == 0 || ip == 0 || ix + 1 == nx || ip + 1 == np {
                    m = m.max(self.value(ix, ip).abs());
                }
            }
        }
        m
    }

    /// `int W dp` at every `x` (trapezoid).
    pub fn marginal_x(&self) -> Vec<T> {
        (0..self.x_axis.len())
            .map(|ix| trapezoid(&self.p_axis, |ip| self.value(ix, ip)))
            .collect()
    }

    /// `int int W dx dp` (trapezoid).
    pub fn integral(&self) -> T {
        let marg = self.marginal_x();
        trapezoid(&self.x_axis, |ix| marg[ix])
    }
}

fn trapezoid<T: Real>(axis: &[T], f: impl Fn(usize) -> T) -> T {
    (1..axis.len()).fold(T::zero(), |acc, i| {
        acc + (axis[i] - axis[i - 1]) * (f(i) + f(i - 1)) / lit(2.0)
    })
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linspace<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * crate::scalar::from_usize::<T>(i) / crate::scalar::from_usize(n - 1))
            .collect(),
    }
}

/// `L_k^(a)(x)` for `k = 0..len` by the upward recurrence.
fn laguerre_sequence(a: usize, x: f64, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    if len == 0 {
        return out;
    }
    let a = a as f64;
    out.push(1.0);
    if len > 1 {
        out.push(1.0 + a - x);
    }
    for k in 1..len.saturating_sub(1) {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + a - x) * out[k] - (kf + a) * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
    out
}

/// Wigner function of a single-mode state on arbitrary axes, without the
/// boundary check of [`wigner`].
pub fn wigner_on_axes<T: Real>(rho: &DensityMatrix<T>, x_axis: Vec<T>, p_axis: Vec<T>) -> Result<WignerGrid<T>> {
    if rho.space().n_modes() != 1 {
        return Err(Error::InvalidArgument(format!(
            "Wigner function needs a single-mode state, got {} modes",
            rho.space().n_modes()
        )));
    }
    let c = rho.dim();
    let r: Vec<Complex<f64>> = rho
        .data()
        .iter()
        .map(|z| Complex::new(z.re.to_f64().unwrap_or(f64::NAN), z.im.to_f64().unwrap_or(f64::NAN)))
        .collect();
    // sqrt(k!) table
    let mut sqrt_fact = vec![1.0f64; c];
    for k in 1..c {
        sqrt_fact[k] = sqrt_fact[k - 1] * (k as f64).sqrt();
    }
    let np = p_axis.len();
    let mut values = Vec::with_capacity(x_axis.len() * np);
    let mut max_im = 0.0f64;
    let mut lag: Vec<Vec<f64>> = vec![Vec::new(); c];
    for &x in &x_axis {
        for &p in &p_axis {
            let (xf, pf) = (x.to_f64().unwrap_or(f64::NAN), p.to_f64().unwrap_or(f64::NAN));
            // D(g) with g = 2 beta = sqrt 2 (x + i p)
            let g = Complex::new(xf, pf) * std::f64::consts::SQRT_2;
            let g2 = g.norm_sqr();
            let damp = (-g2 / 2.0).exp();
            for (d, l) in lag.iter_mut().enumerate() {
                *l = laguerre_sequence(d, g2, c - d);
            }
            let mut acc = Complex::new(0.0, 0.0);
            let mut gpow = Complex::new(1.0, 0.0);
            let minus_gc = -g.conj();
            let mut mgpow = Complex::new(1.0, 0.0);
            for d in 0..c {
                for low in 0..c - d {
                    let coeff = sqrt_fact[low] / sqrt_fact[low + d] * lag[d][low] * damp;
                    let high = low + d;
                    // W = (1/pi) sum_{m,n} rho_{nm} (-1)^n <m|D|n>
                    // m = high >= n = low
                    let sign_low = if low % 2 == 0 { 1.0 } else { -1.0 };
                    acc += r[low * c + high] * sign_low * gpow * coeff;
                    if d > 0 {
                        // m = low < n = high
                        let sign_high = if high % 2 == 0 { 1.0 } else { -1.0 };
                        acc += r[high * c + low] * sign_high * mgpow * coeff;
                    }
                }
                gpow *= g;
                mgpow *= minus_gc;
            }
            let w = acc / std::f64::consts::PI;
            max_im = max_im.max(w.im.abs());
            values.push(T::from_f64(w.re).unwrap_or_else(T::nan));
        }
    }
    Ok(WignerGrid {
        x_axis,
        p_axis,
        values,
        mode: 0,
        time: None,
        max_imaginary_residue: T::from_f64(max_im).unwrap_or_else(T::nan),
    })
}

/// Wigner function on the square grid `[lo, hi]^2` with `n_points` per axis.
/// Fails when the edge carries more than `1e-4` of the peak magnitude.
pub fn wigner<T: Real>(rho: &DensityMatrix<T>, range: (T, T), n_points: usize) -> Result<WignerGrid<T>> {
    wigner_rect(rho, range, range, n_points)
}

pub fn wigner_rect<T: Real>(
    rho: &DensityMatrix<T>,
    x_range: (T, T),
    p_range: (T, T),
    n_points: usize,
) -> Result<WignerGrid<T>> {
    if n_points < 2 || !(x_range.1 > x_range.0) || !(p_range.1 > p_range.0) {
        return Err(Error::InvalidArgument("Wigner grid needs increasing ranges and at least 2 points".into()));
    }
    let grid = wigner_on_axes(
        rho,
        linspace(x_range.0, x_range.1, n_points),
        linspace(p_range.0, p_range.1, n_points),
    )?;
    let (edge, peak) = (grid.boundary_max(), grid.max_abs());
    if edge > peak * lit(1e-4) {
        return Err(Error::GridTooSmall {
            boundary: edge.to_f64().unwrap_or(f64::NAN),
            peak: peak.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(grid)
}
