//! Singular-value energy densities of a linear map between inner-product
//! spaces.
//!
//! For `A: (R^m, G) -> (R^n, H)` the spectrum `a_1 >= ... >= a_m` is the set
//! of eigenvalues of `G^{-1/2} A^T H A G^{-1/2}` (the squared singular values
//! in orthonormal frames). Every density here is a function of it.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{CalibraError, Result};
use crate::exterior::Metric;

/// Noise floor below which slightly negative eigenvalues are clamped to 0,
/// relative to `max(1, trace)`.
pub const SPECTRUM_CLAMP: f64 = 1e-12;

/// The differential of a map at a point, with source and target metrics.
#[derive(Clone, Debug)]
pub struct LinearMapData {
    a: DMatrix<f64>,
    src: Metric,
    tgt: Metric,
}

impl LinearMapData {
    /// `a` is `n x m`: it maps the source `R^m` to the target `R^n`.
    pub fn new(a: DMatrix<f64>, src: Metric, tgt: Metric) -> Result<Self> {
        if a.ncols() != src.dim() || a.nrows() != tgt.dim() {
            return Err(CalibraError::mismatch(
                format!("{}x{} matrix", tgt.dim(), src.dim()),
                format!("{}x{}", a.nrows(), a.ncols()),
            ));
        }
        Ok(LinearMapData { a, src, tgt })
    }

    /// Identity metrics on both sides.
    pub fn euclidean(a: DMatrix<f64>) -> Self {
        let (n, m) = a.shape();
        LinearMapData {
            a,
            src: Metric::euclidean(m),
            tgt: Metric::euclidean(n),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn source(&self) -> &Metric {
        &self.src
    }

    pub fn target(&self) -> &Metric {
        &self.tgt
    }

    pub fn source_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.a.nrows()
    }

    /// The matrix in orthonormal frames: `H^{1/2} A G^{-1/2}`.
    pub fn whitened(&self) -> DMatrix<f64> {
        match (self.src.is_euclidean(), self.tgt.is_euclidean()) {
            (true, true) => self.a.clone(),
            _ => self.tgt.sqrt() * &self.a * self.src.inv_sqrt(),
        }
    }

    /// `A^T H A` (the pulled-back metric in source coordinates).
    fn pulled_back_metric(&self) -> DMatrix<f64> {
        if self.tgt.is_euclidean() {
            self.a.transpose() * &self.a
        } else {
            self.a.transpose() * self.tgt.matrix() * &self.a
        }
    }
}

/// Non-increasing, nonnegative spectrum `a_1 >= ... >= a_m`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingularSpectrum {
    values: Vec<f64>,
}

impl SingularSpectrum {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(sum a_i^{p/2})^{1/p}`.
    pub fn schatten(&self, p: f64) -> Result<f64> {
        check_exponent("p", p)?;
        Ok(self.power_sum(p).powf(1.0 / p))
    }

    /// `sum a_i^{p/2}`, i.e. `|A|_p^p`.
    pub fn power_sum(&self, p: f64) -> f64 {
        self.values.iter().map(|a| a.powf(p / 2.0)).sum()
    }

    pub fn product(&self) -> f64 {
        self.values.iter().product()
    }
}

fn check_exponent(name: &str, p: f64) -> Result<()> {
    if p.is_nan() || p <= 0.0 || p.is_infinite() {
        return Err(CalibraError::domain(format!(
            "exponent {name} = {p} must be positive"
        )));
    }
    Ok(())
}

pub fn singular_spectrum(l: &LinearMapData) -> Result<SingularSpectrum> {
    let (n, m) = (l.target_dim(), l.source_dim());
    // When n < m the operator has m - n structural zeros; take the nonzero
    // part from the n x n side so they stay exact.
    let s = if n < m {
        let w = l.whitened();
        &w * w.transpose()
    } else {
        let gram = l.pulled_back_metric();
        if l.src.is_euclidean() {
            gram
        } else {
            l.src.inv_sqrt() * gram * l.src.inv_sqrt()
        }
    };
    let s = (&s + s.transpose()) * 0.5;
    let eig = s.symmetric_eigen();
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.resize(m, 0.0);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CalibraError::Numeric(format!(
            "eigen-solver returned non-finite values for a {}x{} operator",
            l.source_dim(),
            l.source_dim()
        )));
    }
    let floor = SPECTRUM_CLAMP * values.iter().sum::<f64>().abs().max(1.0);
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -floor {
                return Err(CalibraError::Numeric(format!(
                    "negative eigenvalue {v:e} in metric Gram operator (floor {floor:e})"
                )));
            }
            *v = 0.0;
        }
    }
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(SingularSpectrum { values })
}

/// `|A|_p`.
pub fn schatten_p(l: &LinearMapData, p: f64) -> Result<f64> {
    singular_spectrum(l)?.schatten(p)
}

/// `sigma_{p,q} = |A|_p^q`; `sigma_{2,q}` is `|A|^q` for the metric norm.
pub fn sigma_pq(l: &LinearMapData, p: f64, q: f64) -> Result<f64> {
    check_exponent("q", q)?;
    Ok(schatten_p(l, p)?.powf(q))
}

/// Volume distortion `sqrt(det(A^T H A) / det G) / src_volume_scale` of an
/// immersion. The source volume form is `src_volume_scale * vol_G`.
pub fn tau_m(l: &LinearMapData, src_volume_scale: f64) -> Result<f64> {
    check_exponent("srcVolumeScale", src_volume_scale)?;
    let (n, m) = l.a.shape();
    if n < m {
        return Err(CalibraError::domain(format!(
            "tau_m needs target dimension >= source dimension, got {n} < {m}"
        )));
    }
    let det = l.pulled_back_metric().determinant().max(0.0);
    let sqrt_det_g = l.src.sqrt_det();
    Ok(det.sqrt() / sqrt_det_g / src_volume_scale)
}

/// Coarea factor `sqrt(det(A G^{-1} A^T) det H) * tgt_volume_scale` of a
/// submersion. The target volume form is `tgt_volume_scale * vol_H`.
pub fn tau_tilde(l: &LinearMapData, tgt_volume_scale: f64) -> Result<f64> {
    check_exponent("tgtVolumeScale", tgt_volume_scale)?;
    let (n, m) = l.a.shape();
    if m < n {
        return Err(CalibraError::domain(format!(
            "tau_tilde needs source dimension >= target dimension, got {m} < {n}"
        )));
    }
    let inner = if l.src.is_euclidean() {
        &l.a * l.a.transpose()
    } else {
        &l.a * l.src.inverse() * l.a.transpose()
    };
    let det = inner.determinant().max(0.0);
    Ok(det.sqrt() * l.tgt.sqrt_det() * tgt_volume_scale)
}

/// `(|A|_p, m^{1/p - 1/p'} |A|_{p'})`; the first never exceeds the second.
pub fn norm_comparison(l: &LinearMapData, p: f64, p_prime: f64) -> Result<(f64, f64)> {
    check_exponent("p", p)?;
    check_exponent("p'", p_prime)?;
    if p > p_prime {
        return Err(CalibraError::domain(format!(
            "need p <= p', got {p} > {p_prime}"
        )));
    }
    let spectrum = singular_spectrum(l)?;
    let m = l.source_dim() as f64;
    Ok((
        spectrum.schatten(p)?,
        m.powf(1.0 / p - 1.0 / p_prime) * spectrum.schatten(p_prime)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exterior::Orientation;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn diag(values: &[f64]) -> LinearMapData {
        LinearMapData::euclidean(DMatrix::from_diagonal(&DVector::from_row_slice(values)))
    }

    #[test]
    fn spectrum_examples() {
        assert_eq!(
            singular_spectrum(&diag(&[1.0, 1.0, 1.0])).unwrap().values(),
            &[1.0, 1.0, 1.0]
        );
        let s = singular_spectrum(&diag(&[3.0, 4.0])).unwrap();
        assert_relative_eq!(s.values()[0], 16.0, max_relative = 1e-14);
        assert_relative_eq!(s.values()[1], 9.0, max_relative = 1e-14);
        let zero = LinearMapData::euclidean(DMatrix::zeros(2, 3));
        assert_eq!(singular_spectrum(&zero).unwrap().values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn schatten_examples() {
        for p in [0.5, 1.0, 2.0, 3.7] {
            assert_relative_eq!(
                schatten_p(&diag(&[1.0; 4]), p).unwrap(),
                4f64.powf(1.0 / p),
                max_relative = 1e-14
            );
        }
        assert_relative_eq!(
            schatten_p(&diag(&[3.0, 4.0]), 1.0).unwrap(),
            7.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            schatten_p(&diag(&[3.0, 4.0]), 2.0).unwrap(),
            5.0,
            max_relative = 1e-14
        );
        assert_eq!(schatten_p(&diag(&[0.0, 0.0]), 2.0).unwrap(), 0.0);
        assert!(schatten_p(&diag(&[1.0]), 0.0).is_err());
        assert!(schatten_p(&diag(&[1.0]), -1.0).is_err());
    }

    #[test]
    fn sigma_examples() {
        assert_relative_eq!(
            sigma_pq(&diag(&[1.0; 3]), 2.0, 2.0).unwrap(),
            3.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            sigma_pq(&diag(&[3.0, 4.0]), 4.0, 4.0).unwrap(),
            337.0,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            sigma_pq(&diag(&[3.0, 4.0]), 2.0, 2.0).unwrap(),
            25.0,
            max_relative = 1e-13
        );
        assert!(sigma_pq(&diag(&[1.0]), 2.0, 0.0).is_err());
    }

    #[test]
    fn tau_m_examples() {
        let mut inclusion = DMatrix::zeros(4, 2);
        inclusion[(0, 0)] = 1.0;
        inclusion[(1, 1)] = 1.0;
        assert_relative_eq!(
            tau_m(&LinearMapData::euclidean(inclusion.clone()), 1.0).unwrap(),
            1.0
        );
        assert_relative_eq!(
            tau_m(&LinearMapData::euclidean(inclusion * 3.0), 1.0).unwrap(),
            9.0,
            max_relative = 1e-14
        );
        assert!(tau_m(&LinearMapData::euclidean(DMatrix::zeros(1, 2)), 1.0).is_err());
    }

    #[test]
    fn tau_tilde_examples() {
        let proj = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_relative_eq!(
            tau_tilde(&LinearMapData::euclidean(proj), 1.0).unwrap(),
            1.0
        );
        let degenerate = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert_eq!(
            tau_tilde(&LinearMapData::euclidean(degenerate), 1.0).unwrap(),
            0.0
        );
        assert!(tau_tilde(&LinearMapData::euclidean(DMatrix::zeros(3, 2)), 1.0).is_err());
    }

    #[test]
    fn volume_scales() {
        let a = LinearMapData::euclidean(DMatrix::from_diagonal_element(2, 2, 2.0));
        assert_relative_eq!(tau_m(&a, 2.0).unwrap(), 2.0);
        assert_relative_eq!(tau_tilde(&a, 2.0).unwrap(), 8.0);
    }

    #[test]
    fn norm_comparison_examples() {
        let (l, r) = norm_comparison(&diag(&[1.0; 3]), 1.0, 3.0).unwrap();
        assert_relative_eq!(l, r, max_relative = 1e-14);
        assert_relative_eq!(l, 3.0, max_relative = 1e-14);
        let (l, r) = norm_comparison(&diag(&[1.0, 0.0]), 1.0, 2.0).unwrap();
        assert_relative_eq!(l, 1.0);
        assert_relative_eq!(r, 2f64.sqrt(), max_relative = 1e-14);
        assert!(norm_comparison(&diag(&[1.0]), 2.0, 1.0).is_err());
    }

    #[test]
    fn metric_spectrum_matches_whitened_euclidean() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let h = DMatrix::from_row_slice(3, 3, &[1.5, 0.2, 0.0, 0.2, 1.0, 0.1, 0.0, 0.1, 0.7]);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 0.3, 0.0, 1.1]);
        let l = LinearMapData::new(
            a,
            Metric::new(g, Orientation::Positive).unwrap(),
            Metric::new(h, Orientation::Positive).unwrap(),
        )
        .unwrap();
        let direct = singular_spectrum(&l).unwrap();
        let white = singular_spectrum(&LinearMapData::euclidean(l.whitened())).unwrap();
        for (x, y) in direct.values().iter().zip(white.values()) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(LinearMapData::new(
            DMatrix::zeros(2, 2),
            Metric::euclidean(3),
            Metric::euclidean(2)
        )
        .is_err());
    }
}
