//! Small dense square-matrix routines: LU determinant and cofactor matrix.
//!
//! Matrices are row-major `&[f64]` of side `n`.

/// Determinant by LU decomposition with partial pivoting.
///
/// The 0×0 matrix has determinant 1. An exactly singular pivot column yields 0.
pub fn det(a: &[f64], n: usize) -> f64 {
    debug_assert_eq!(a.len(), n * n);
    if n == 0 {
        return 1.0;
    }
    let mut m = a.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let mut pivot = col;
        let mut best = m[col * n + col].abs();
        for row in col + 1..n {
            let v = m[row * n + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for j in 0..n {
                m.swap(col * n + j, pivot * n + j);
            }
            det = -det;
        }
        let p = m[col * n + col];
        det *= p;
        for row in col + 1..n {
            let factor = m[row * n + col] / p;
            if factor == 0.0 {
                continue;
            }
            for j in col + 1..n {
                m[row * n + j] -= factor * m[col * n + j];
            }
        }
    }
    det
}

/// The (n-1)×(n-1) submatrix with row `skip_row` and column `skip_col` removed.
pub fn minor(a: &[f64], n: usize, skip_row: usize, skip_col: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((n - 1) * (n - 1));
    for i in (0..n).filter(|&i| i != skip_row) {
        for j in (0..n).filter(|&j| j != skip_col) {
            out.push(a[i * n + j]);
        }
    }
    out
}

/// Cofactor matrix `C[i][j] = (-1)^(i+j) det(minor(i, j))`, i.e. `adj(A)ᵀ`.
///
/// This is `∂det(A)/∂A` and stays well defined when `A` is singular.
pub fn cofactor_matrix(a: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    if n == 1 {
        out[0] = 1.0;
        return out;
    }
    for i in 0..n {
        for j in 0..n {
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            out[i * n + j] = sign * det(&minor(a, n, i, j), n - 1);
        }
    }
    out
}

/// Adjugate `adj(A) = Cᵀ`.
pub fn adjugate(a: &[f64], n: usize) -> Vec<f64> {
    transpose(&cofactor_matrix(a, n), n)
}

pub fn transpose(a: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = a[i * n + j];
        }
    }
    out
}
