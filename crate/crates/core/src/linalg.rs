//! Small dense linear-algebra helpers shared by the kernels.

use nalgebra::DMatrix;

use crate::error::{CalibraError, Result};

/// Determinant of a row-major `k x k` matrix.
///
/// Closed-form cofactor expansion for `k <= 4`, LU with partial pivoting
/// above that.
pub fn det(a: &[f64], k: usize) -> f64 {
    debug_assert_eq!(a.len(), k * k);
    match k {
        0 => 1.0,
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        3 => {
            a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                + a[2] * (a[3] * a[7] - a[4] * a[6])
        }
        4 => {
            // 2x2 minors of the bottom two rows.
            let s0 = a[8] * a[13] - a[9] * a[12];
            let s1 = a[8] * a[14] - a[10] * a[12];
            let s2 = a[8] * a[15] - a[11] * a[12];
            let s3 = a[9] * a[14] - a[10] * a[13];
            let s4 = a[9] * a[15] - a[11] * a[13];
            let s5 = a[10] * a[15] - a[11] * a[14];
            // Laplace expansion along the top two rows.
            let c0 = a[0] * a[5] - a[1] * a[4];
            let c1 = a[0] * a[6] - a[2] * a[4];
            let c2 = a[0] * a[7] - a[3] * a[4];
            let c3 = a[1] * a[6] - a[2] * a[5];
            let c4 = a[1] * a[7] - a[3] * a[5];
            let c5 = a[2] * a[7] - a[3] * a[6];
            c0 * s5 - c1 * s4 + c2 * s3 + c3 * s2 - c4 * s1 + c5 * s0
        }
        _ => det_lu(a.to_vec(), k),
    }
}

fn det_lu(mut a: Vec<f64>, k: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&i, &j| a[i * k + col].abs().total_cmp(&a[j * k + col].abs()))
            .unwrap();
        if a[pivot * k + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for c in 0..k {
                a.swap(pivot * k + c, col * k + c);
            }
            det = -det;
        }
        let p = a[col * k + col];
        det *= p;
        for r in col + 1..k {
            let factor = a[r * k + col] / p;
            if factor != 0.0 {
                for c in col + 1..k {
                    a[r * k + c] -= factor * a[col * k + c];
                }
            }
        }
    }
    det
}

/// Determinant of the submatrix of `a` with the given (0-based) rows and
/// columns.
pub fn minor(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    let k = rows.len();
    debug_assert_eq!(k, cols.len());
    if k <= 4 {
        let mut buf = [0.0; 16];
        for (p, &r) in rows.iter().enumerate() {
            for (q, &c) in cols.iter().enumerate() {
                buf[p * k + q] = a[(r, c)];
            }
        }
        det(&buf[..k * k], k)
    } else {
        let mut buf = Vec::with_capacity(k * k);
        for &r in rows {
            for &c in cols {
                buf.push(a[(r, c)]);
            }
        }
        det(&buf, k)
    }
}

/// Checks symmetry (relative to the largest entry) and positive definiteness.
pub fn check_spd(g: &DMatrix<f64>, what: &str) -> Result<()> {
    if !g.is_square() {
        return Err(CalibraError::InvalidMetric(format!(
            "{what} is {}x{}, not square",
            g.nrows(),
            g.ncols()
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(CalibraError::InvalidMetric(format!(
            "{what} has non-finite entries"
        )));
    }
    let scale = g.amax().max(f64::MIN_POSITIVE);
    let n = g.nrows();
    for i in 0..n {
        for j in i + 1..n {
            if (g[(i, j)] - g[(j, i)]).abs() > 1e-12 * scale {
                return Err(CalibraError::InvalidMetric(format!(
                    "{what} is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    let eig = g.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        return Err(CalibraError::InvalidMetric(format!(
            "{what} is not positive definite (smallest eigenvalue {min:e})"
        )));
    }
    Ok(())
}

/// `S^{power}` for a symmetric positive-definite `S`, via eigendecomposition.
pub fn spd_power(s: &DMatrix<f64>, power: f64) -> DMatrix<f64> {
    let eig = s.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.powf(power)));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Frobenius inner product.
pub fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Pairwise summation, so reductions do not depend on how work was split.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Surface measure of the unit sphere `S^{m-1}` in `R^m`: `2 pi^{m/2} / Gamma(m/2)`.
pub fn sphere_volume(m: usize) -> f64 {
    assert!(m >= 1, "sphere dimension must be at least 0");
    2.0 * std::f64::consts::PI.powf(m as f64 / 2.0) / gamma_half(m)
}

/// `Gamma(m/2)` for a positive integer `m`.
fn gamma_half(m: usize) -> f64 {
    let (mut acc, mut x) = if m.is_multiple_of(2) {
        (1.0, 1.0)
    } else {
        (std::f64::consts::PI.sqrt(), 0.5)
    };
    let target = m as f64 / 2.0;
    while x < target - 0.25 {
        acc *= x;
        x += 1.0;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn leibniz(a: &[f64], k: usize) -> f64 {
        // Sum over all permutations via Heap's algorithm.
        let mut perm: Vec<usize> = (0..k).collect();
        let mut c = vec![0usize; k];
        let mut sign = 1.0;
        let term = |perm: &[usize]| (0..k).map(|r| a[r * k + perm[r]]).product::<f64>();
        let mut total = term(&perm);
        let mut i = 0;
        while i < k {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                sign = -sign;
                total += sign * term(&perm);
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        total
    }

    #[test]
    fn closed_forms_match_leibniz() {
        let mut state = 17u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for k in 0..=6 {
            for _ in 0..20 {
                let a: Vec<f64> = (0..k * k).map(|_| next()).collect();
                assert_relative_eq!(
                    det(&a, k),
                    leibniz(&a, k),
                    epsilon = 1e-12,
                    max_relative = 1e-10
                );
            }
        }
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(7, 3), 35);
        assert_eq!(binomial(8, 4), 70);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(5, 0), 1);
    }

    #[test]
    fn sphere_volumes() {
        assert_relative_eq!(sphere_volume(1), 2.0);
        assert_relative_eq!(sphere_volume(2), 2.0 * std::f64::consts::PI);
        assert_relative_eq!(
            sphere_volume(3),
            4.0 * std::f64::consts::PI,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            sphere_volume(4),
            2.0 * std::f64::consts::PI.powi(2),
            max_relative = 1e-14
        );
    }

    #[test]
    fn spd_check_rejects_bad_metrics() {
        assert!(check_spd(&DMatrix::identity(3, 3), "G").is_ok());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(check_spd(&asym, "G").is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(check_spd(&indef, "G").is_err());
    }
}
