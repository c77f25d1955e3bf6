//! Dense kernels for the small (d ≤ a handful) matrices of the hot loops.
//!
//! Matrices are column-major slices of length `d*d`, the same layout as
//! `nalgebra::DMatrix::as_slice`, so values move between the two without
//! transposition.

#[inline]
pub(crate) fn idx(d: usize, row: usize, col: usize) -> usize {
    row + col * d
}

/// In-place Cholesky factorization `a = L Lᵀ`. On success the lower triangle
/// of `a` holds `L` (the strict upper triangle is zeroed).
pub(crate) fn cholesky_in_place(a: &mut [f64], d: usize) -> bool {
    for j in 0..d {
        let mut diag = a[idx(d, j, j)];
        for k in 0..j {
            let l = a[idx(d, j, k)];
            diag -= l * l;
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return false;
        }
        let ljj = diag.sqrt();
        a[idx(d, j, j)] = ljj;
        for i in (j + 1)..d {
            let mut s = a[idx(d, i, j)];
            for k in 0..j {
                s -= a[idx(d, i, k)] * a[idx(d, j, k)];
            }
            a[idx(d, i, j)] = s / ljj;
        }
        for i in 0..j {
            a[idx(d, i, j)] = 0.0;
        }
    }
    true
}

/// Solves `L Lᵀ x = b` in place given the factor from [`cholesky_in_place`].
pub(crate) fn cholesky_solve(l: &[f64], d: usize, b: &mut [f64]) {
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[idx(d, i, k)] * b[k];
        }
        b[i] = s / l[idx(d, i, i)];
    }
    for i in (0..d).rev() {
        let mut s = b[i];
        for k in (i + 1)..d {
            s -= l[idx(d, k, i)] * b[k];
        }
        b[i] = s / l[idx(d, i, i)];
    }
}

/// Inverse of an SPD matrix from its Cholesky factor.
pub(crate) fn cholesky_inverse(l: &[f64], d: usize, out: &mut [f64]) {
    for j in 0..d {
        let col = &mut out[j * d..(j + 1) * d];
        col.iter_mut().for_each(|v| *v = 0.0);
        col[j] = 1.0;
        cholesky_solve(l, d, col);
    }
}

/// `out = a * b` for d×d matrices.
pub(crate) fn matmul(a: &[f64], b: &[f64], d: usize, out: &mut [f64]) {
    for j in 0..d {
        for i in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += a[idx(d, i, k)] * b[idx(d, k, j)];
            }
            out[idx(d, i, j)] = s;
        }
    }
}

/// `out = a * v`.
pub(crate) fn matvec(a: &[f64], v: &[f64], d: usize, out: &mut [f64]) {
    for i in 0..d {
        let mut s = 0.0;
        for k in 0..d {
            s += a[idx(d, i, k)] * v[k];
        }
        out[i] = s;
    }
}

/// `uᵀ A v`.
pub(crate) fn bilinear(a: &[f64], u: &[f64], v: &[f64], d: usize) -> f64 {
    let mut s = 0.0;
    for j in 0..d {
        let mut col = 0.0;
        for i in 0..d {
            col += u[i] * a[idx(d, i, j)];
        }
        s += col * v[j];
    }
    s
}

pub(crate) fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}
