//! Small dense helpers on row-major `&[f64]` matrices.
//!
//! Jacobians in this crate are stored row-major with one row per target
//! component: `a[k * n + j] = ∂f^k/∂x^j`.

use nalgebra::{DMatrix, Matrix2, Matrix3};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn frobenius(a: &[f64]) -> f64 {
    norm(a)
}

pub fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Determinant of an `n×n` row-major matrix.
pub fn det(a: &[f64], n: usize) -> f64 {
    debug_assert_eq!(a.len(), n * n);
    match n {
        0 => 1.0,
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        3 => {
            a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                + a[2] * (a[3] * a[7] - a[4] * a[6])
        }
        _ => {
            // Gaussian elimination with partial pivoting.
            let mut m = a.to_vec();
            let mut d = 1.0;
            for col in 0..n {
                let pivot = (col..n)
                    .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
                    .unwrap();
                if m[pivot * n + col] == 0.0 {
                    return 0.0;
                }
                if pivot != col {
                    for j in 0..n {
                        m.swap(pivot * n + j, col * n + j);
                    }
                    d = -d;
                }
                let p = m[col * n + col];
                d *= p;
                for i in col + 1..n {
                    let factor = m[i * n + col] / p;
                    for j in col..n {
                        m[i * n + j] -= factor * m[col * n + j];
                    }
                }
            }
            d
        }
    }
}

/// Adjugate (transposed cofactor matrix) of an `n×n` row-major matrix, so
/// that `adj(a)·a = det(a)·I`. Well defined for singular matrices too.
pub fn adjugate(a: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * n);
    match n {
        1 => vec![1.0],
        2 => vec![a[3], -a[1], -a[2], a[0]],
        3 => vec![
            a[4] * a[8] - a[5] * a[7],
            a[2] * a[7] - a[1] * a[8],
            a[1] * a[5] - a[2] * a[4],
            a[5] * a[6] - a[3] * a[8],
            a[0] * a[8] - a[2] * a[6],
            a[2] * a[3] - a[0] * a[5],
            a[3] * a[7] - a[4] * a[6],
            a[1] * a[6] - a[0] * a[7],
            a[0] * a[4] - a[1] * a[3],
        ],
        _ => {
            let mut adj = vec![0.0; n * n];
            let mut minor = vec![0.0; (n - 1) * (n - 1)];
            for row in 0..n {
                for col in 0..n {
                    let mut idx = 0;
                    for i in (0..n).filter(|&i| i != row) {
                        for j in (0..n).filter(|&j| j != col) {
                            minor[idx] = a[i * n + j];
                            idx += 1;
                        }
                    }
                    let sign = if (row + col) % 2 == 0 { 1.0 } else { -1.0 };
                    // adj[col][row] = cofactor(row, col)
                    adj[col * n + row] = sign * det(&minor, n - 1);
                }
            }
            adj
        }
    }
}

/// Solves `a·x = b` for square `a`; `None` when `a` is numerically singular.
pub fn solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let d = det(a, n);
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    if !d.is_finite() || d.abs() <= 1e-300_f64.max(scale.powi(n as i32) * 1e-14) {
        return None;
    }
    match n {
        2 | 3 => {
            let adj = adjugate(a, n);
            Some(
                (0..n)
                    .map(|i| (0..n).map(|j| adj[i * n + j] * b[j]).sum::<f64>() / d)
                    .collect(),
            )
        }
        _ => {
            let m = DMatrix::from_row_slice(n, n, a);
            let rhs = nalgebra::DVector::from_column_slice(b);
            m.lu().solve(&rhs).map(|x| x.iter().copied().collect())
        }
    }
}

/// Closest rotation to a square matrix (the orthogonal polar factor with the
/// determinant sign corrected to +1), as a row-major matrix.
pub fn closest_rotation(a: &[f64], n: usize) -> Vec<f64> {
    let m = DMatrix::from_row_slice(n, n, a);
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = &u * &v_t;
    if r.determinant() < 0.0 {
        // Flip the direction belonging to the smallest singular value.
        let smallest = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .map(|(i, _)| i)
            .unwrap();
        let mut u = u.clone();
        for row in 0..n {
            u[(row, smallest)] = -u[(row, smallest)];
        }
        r = &u * &v_t;
    }
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(r[(i, j)]);
        }
    }
    out
}

/// Frobenius distance from a square matrix to SO(n).
pub fn dist_to_rotations(a: &[f64], n: usize) -> f64 {
    match n {
        2 => {
            // Closed form: the closest rotation to [[a b][c d]] is the
            // normalised conformal part.
            let m = Matrix2::new(a[0], a[1], a[2], a[3]);
            let p = (m[(0, 0)] + m[(1, 1)], m[(1, 0)] - m[(0, 1)]);
            let s = (p.0 * p.0 + p.1 * p.1).sqrt();
            let r = if s > 0.0 {
                Matrix2::new(p.0 / s, -p.1 / s, p.1 / s, p.0 / s)
            } else {
                Matrix2::identity()
            };
            (m - r).norm()
        }
        3 => {
            let r = closest_rotation(a, 3);
            let m = Matrix3::from_row_slice(a);
            (m - Matrix3::from_row_slice(&r)).norm()
        }
        _ => {
            let r = closest_rotation(a, n);
            dist(a, &r)
        }
    }
}

/// Singular values of an `m×n` row-major matrix, descending.
pub fn singular_values(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mat = DMatrix::from_row_slice(m, n, a);
    let mut s: Vec<f64> = mat.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}
