use ndarray::{Array1, ArrayView1, ArrayView2};

use super::rng::{Stream, POWER_ITERATION_STREAM};

pub const POWER_MAX_ITER: usize = 100;
pub const POWER_TOL: f64 = 1e-9;

/// `sqrt(|v|² / len(v))`.
pub fn coordinate_scale(v: ArrayView1<f64>) -> f64 {
    assert!(!v.is_empty(), "coordinate scale of an empty vector");
    (v.dot(&v) / v.len() as f64).sqrt()
}

/// Coordinate scale of every entry of a matrix taken as one vector.
pub fn coordinate_scale_mat(m: ArrayView2<f64>) -> f64 {
    assert!(!m.is_empty(), "coordinate scale of an empty matrix");
    (m.iter().map(|x| x * x).sum::<f64>() / m.len() as f64).sqrt()
}

pub fn frobenius(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest singular value with the default budget.
pub fn spectral_norm(m: ArrayView2<f64>) -> f64 {
    spectral_norm_with(m, POWER_MAX_ITER, POWER_TOL)
}

/// Krylov-accelerated power iteration from a fixed pseudo-random start; stops after `max_iter`
/// products with `M` and `Mᵀ` or when the estimate changes by less than `tol` relative.
pub fn spectral_norm_with(m: ArrayView2<f64>, max_iter: usize, tol: f64) -> f64 {
    power_iterate(m, fixed_start(m.ncols()), max_iter, tol).0
}

/// [`spectral_norm`] started from `start` when it has the right length, otherwise from the fixed
/// start; `start` is replaced by the final right singular vector estimate.
pub fn spectral_norm_warm(m: ArrayView2<f64>, start: &mut Option<Array1<f64>>) -> f64 {
    let v0 = match start.take() {
        Some(v) if v.len() == m.ncols() && v.iter().any(|x| *x != 0.0) => v,
        _ => fixed_start(m.ncols()),
    };
    let (sigma, v) = power_iterate(m, v0, POWER_MAX_ITER, POWER_TOL);
    *start = Some(v);
    sigma
}

fn fixed_start(cols: usize) -> Array1<f64> {
    Array1::from(Stream::new(0, POWER_ITERATION_STREAM).normals(cols))
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Two rounds of classical Gram-Schmidt against an orthonormal basis.
fn reorthogonalize(x: &mut Array1<f64>, basis: &[Array1<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(x);
            x.scaled_add(-c, b);
        }
    }
}

/// Diagonal and off-diagonal of `BᵀB` for the upper bidiagonal `B` with diagonal `alpha` and
/// superdiagonal `beta` (`beta.len() + 1 >= alpha.len()`).
fn gram_tridiagonal(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = alpha.len();
    let diag = (0..k)
        .map(|i| alpha[i] * alpha[i] + if i > 0 { beta[i - 1] * beta[i - 1] } else { 0.0 })
        .collect();
    let off = (0..k.saturating_sub(1)).map(|i| alpha[i] * beta[i]).collect();
    (diag, off)
}

/// Number of eigenvalues below `x` of the symmetric tridiagonal `(diag, off)` (Sturm sequence).
fn count_below(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for i in 0..diag.len() {
        let e2 = if i > 0 { off[i - 1] * off[i - 1] } else { 0.0 };
        d = diag[i] - x - if i > 0 { e2 / d } else { 0.0 };
        if d == 0.0 {
            d = -f64::EPSILON * (x.abs() + f64::MIN_POSITIVE);
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// Largest eigenvalue of a positive semi-definite tridiagonal by bisection.
fn top_eigenvalue(diag: &[f64], off: &[f64]) -> f64 {
    let k = diag.len();
    let mut hi: f64 = (0..k)
        .map(|i| {
            diag[i] + if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < k { off[i].abs() } else { 0.0 }
        })
        .fold(0.0, f64::max);
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(diag, off, mid) == k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Eigenvector of the tridiagonal for eigenvalue `lambda` by shifted inverse iteration. The shift
/// sits just above the top of the spectrum, so `T - μI` is negative definite and the Thomas
/// recurrence needs no pivoting.
fn top_eigenvector(diag: &[f64], off: &[f64], lambda: f64) -> Vec<f64> {
    let k = diag.len();
    let mu = lambda * (1.0 + 1e-10) + f64::MIN_POSITIVE;
    let mut y = vec![1.0; k];
    for _ in 0..3 {
        let mut c = vec![0.0; k];
        let mut z = vec![0.0; k];
        let mut piv = diag[0] - mu;
        z[0] = y[0] / piv;
        for i in 1..k {
            c[i - 1] = off[i - 1] / piv;
            piv = diag[i] - mu - off[i - 1] * c[i - 1];
            z[i] = (y[i] - off[i - 1] * z[i - 1]) / piv;
        }
        for i in (0..k.saturating_sub(1)).rev() {
            z[i] -= c[i] * z[i + 1];
        }
        let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        y = z.into_iter().map(|v| v / n).collect();
    }
    y
}

/// Golub-Kahan bidiagonalization with full reorthogonalization: `max_iter` products with `M` and
/// `Mᵀ`, like power iteration on `MᵀM`, but the estimate is the top singular value of the Krylov
/// projection. It is exact once the Krylov space is invariant.
fn power_iterate(m: ArrayView2<f64>, v0: Array1<f64>, max_iter: usize, tol: f64) -> (f64, Array1<f64>) {
    let scale = frobenius(m);
    if m.is_empty() || scale == 0.0 {
        return (0.0, v0);
    }
    let tiny = 1e-13 * scale;
    let mut vs = vec![&v0 / norm(&v0)];
    let mut us: Vec<Array1<f64>> = Vec::new();
    let (mut alpha, mut beta): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    let mut sigma = 0.0;
    for j in 0..max_iter.max(1) {
        let mut u = m.dot(&vs[j]);
        if j > 0 {
            u.scaled_add(-beta[j - 1], &us[j - 1]);
        }
        reorthogonalize(&mut u, &us);
        let a = norm(&u);
        let exhausted = a <= tiny;
        if exhausted && j == 0 {
            // Start vector in the null space: retry from the fixed start, which is generic.
            let fixed = fixed_start(m.ncols());
            return if v0 == fixed { (0.0, v0) } else { power_iterate(m, fixed, max_iter, tol) };
        }
        alpha.push(if exhausted { 0.0 } else { a });
        let (diag, off) = gram_tridiagonal(&alpha, &beta);
        let next = top_eigenvalue(&diag, &off).sqrt();
        let done = exhausted || (next - sigma).abs() <= tol * next;
        sigma = next;
        if done || j + 1 == max_iter {
            break;
        }
        u /= a;
        let mut w = m.t().dot(&u);
        w.scaled_add(-a, &vs[j]);
        us.push(u);
        reorthogonalize(&mut w, &vs);
        let b = norm(&w);
        if b <= tiny {
            break;
        }
        beta.push(b);
        vs.push(w / b);
    }
    let (diag, off) = gram_tridiagonal(&alpha, &beta);
    let y = top_eigenvector(&diag, &off, sigma * sigma);
    let mut v = Array1::zeros(m.ncols());
    for (yi, vi) in y.iter().zip(&vs) {
        v.scaled_add(*yi, vi);
    }
    let n = norm(&v);
    (sigma, if n > 0.0 { v / n } else { v })
}
