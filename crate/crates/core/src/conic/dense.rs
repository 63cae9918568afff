//! Dense kernels on column-major nalgebra matrices. The factorizations are
//! blocked so that nearly all flops go through `gemm`.

use nalgebra::DMatrix;

const NB: usize = 64;

/// In-place lower Cholesky. Returns false if a pivot is not positive.
/// The strict upper triangle is zeroed on success.
pub fn cholesky_in_place(a: &mut DMatrix<f64>) -> bool {
    cholesky_floored(a, None).is_some()
}

/// Cholesky in which pivots below `floor.0` are replaced by `floor.1`.
/// Returns the number of replaced pivots, or None on a non-finite pivot
/// (or any non-positive pivot when no floor is given).
pub fn cholesky_floored(a: &mut DMatrix<f64>, floor: Option<(f64, f64)>) -> Option<usize> {
    let n = a.nrows();
    let mut bumped = 0;
    let mut k = 0;
    while k < n {
        let b = NB.min(n - k);
        bumped += chol_unblocked(a, k, b, floor)?;
        if k + b < n {
            let rest = n - k - b;
            // panel: A21 <- A21 * L11^{-T}
            let l11 = a.view((k, k), (b, b)).clone_owned();
            let mut a21 = a.view((k + b, k), (rest, b)).clone_owned();
            solve_right_lower_transpose(&l11, &mut a21);
            a.view_mut((k + b, k), (rest, b)).copy_from(&a21);
            // trailing update: A22 -= A21 A21^T (lower part is all that matters)
            let mut a22 = a.view_mut((k + b, k + b), (rest, rest));
            a22.gemm(-1.0, &a21, &a21.transpose(), 1.0);
        }
        k += b;
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Some(bumped)
}

fn chol_unblocked(a: &mut DMatrix<f64>, k: usize, b: usize, floor: Option<(f64, f64)>) -> Option<usize> {
    let mut bumped = 0;
    for j in k..k + b {
        let mut d = a[(j, j)];
        for p in k..j {
            d -= a[(j, p)] * a[(j, p)];
        }
        if !d.is_finite() {
            return None;
        }
        match floor {
            Some((eps, delta)) if d < eps => {
                d = delta;
                bumped += 1;
            }
            None if d <= 0.0 => return None,
            _ => {}
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in j + 1..k + b {
            let mut s = a[(i, j)];
            for p in k..j {
                s -= a[(i, p)] * a[(j, p)];
            }
            a[(i, j)] = s / d;
        }
    }
    Some(bumped)
}

/// X <- X * L^{-T} for lower-triangular L, column by column.
fn solve_right_lower_transpose(l: &DMatrix<f64>, x: &mut DMatrix<f64>) {
    let b = l.nrows();
    for j in 0..b {
        for p in 0..j {
            let c = l[(j, p)];
            if c != 0.0 {
                for i in 0..x.nrows() {
                    let v = x[(i, p)];
                    x[(i, j)] -= c * v;
                }
            }
        }
        let d = l[(j, j)];
        for i in 0..x.nrows() {
            x[(i, j)] /= d;
        }
    }
}

/// Inverse of a lower-triangular matrix (recursive 2x2 blocking).
pub fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    if n <= NB {
        let mut inv = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            inv[(j, j)] = 1.0 / l[(j, j)];
            for i in j + 1..n {
                let mut s = 0.0;
                for p in j..i {
                    s += l[(i, p)] * inv[(p, j)];
                }
                inv[(i, j)] = -s / l[(i, i)];
            }
        }
        return inv;
    }
    let h = n / 2;
    let l11 = l.view((0, 0), (h, h)).clone_owned();
    let l21 = l.view((h, 0), (n - h, h)).clone_owned();
    let l22 = l.view((h, h), (n - h, n - h)).clone_owned();
    let i11 = lower_inverse(&l11);
    let i22 = lower_inverse(&l22);
    let t = &l21 * &i11;
    let i21 = -(&i22 * t);
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), (h, h)).copy_from(&i11);
    out.view_mut((h, 0), (n - h, h)).copy_from(&i21);
    out.view_mut((h, h), (n - h, n - h)).copy_from(&i22);
    out
}
