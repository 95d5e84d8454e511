//! Dense Hermitian eigendecomposition, delegated to nalgebra in `f64`.

use nalgebra::DMatrix;
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::{Real, C};

/// Eigenvalues (ascending) and column-major eigenvectors of a Hermitian
/// row-major `n x n` matrix. Only the Hermitian part is used.
pub fn hermitian_eigen<T: Real>(n: usize, data: &[C<T>]) -> Result<(Vec<T>, Vec<C<T>>)> {
    let m = DMatrix::<Complex<f64>>::from_fn(n, n, |i, j| {
        let a = data[i * n + j];
        let b = data[j * n + i].conj();
        Complex::new(
            0.5 * (a.re + b.re).to_f64().unwrap_or(f64::NAN),
            0.5 * (a.im + b.im).to_f64().unwrap_or(f64::NAN),
        )
    });
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("eigendecomposition input"));
    }
    let eig = m
        .try_symmetric_eigen(1e-15, 100_000)
        .ok_or_else(|| Error::Eigen(format!("no convergence for a {n}x{n} matrix")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order
        .iter()
        .map(|&k| T::from_f64(eig.eigenvalues[k]).unwrap())
        .collect();
    let mut vectors = Vec::with_capacity(n * n);
    for &k in &order {
        for i in 0..n {
            let z = eig.eigenvectors[(i, k)];
            vectors.push(Complex::new(T::from_f64(z.re).unwrap(), T::from_f64(z.im).unwrap()));
        }
    }
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconstructs_matrix() {
        let n = 4;
        let mut data = vec![Complex::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                let v = Complex::new((i + 2 * j) as f64 * 0.1, (i as f64 - j as f64) * 0.3);
                data[i * n + j] = v;
            }
        }
        let herm: Vec<_> = (0..n * n)
            .map(|k| (data[k] + data[(k % n) * n + k / n].conj()) * 0.5)
            .collect();
        let (vals, vecs) = hermitian_eigen(n, &herm).unwrap();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        for i in 0..n {
            for j in 0..n {
                let mut acc = Complex::new(0.0, 0.0);
                for k in 0..n {
                    acc += vecs[k * n + i] * vals[k] * vecs[k * n + j].conj();
                }
                assert!((acc - herm[i * n + j]).norm() < 1e-12);
            }
        }
    }
}
