//! Pointwise checks of calibration inequalities in orthonormal frames.
//!
//! A [`MixedForm`] of bidegree `(m - k, k)` on `R^m x R^n` is stored by its
//! coefficient table `Phi_{IJ}` against `e'_J ^ *e_I`. With that ordering the
//! pullback along the graph of `A: R^m -> R^n` is exactly
//! `sum_{I,J} Phi_{IJ} det(A[J, I]) vol`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{schatten_p, tau_tilde, LinearMapData};
use crate::error::{CalibraError, Result};
use crate::exterior::{basis_masks, mask_positions, KForm, Metric};
use crate::linalg::{binomial, factorial, minor};
use crate::models::{kahler_form, matrix_rows, standard_complex_structure};
use crate::sampling::{gaussian_matrix, random_orthogonal, sweep};

/// An element of `Lambda^{m-k}(R^m)^* (x) Lambda^k(R^n)^*`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedForm {
    m: usize,
    n: usize,
    k: usize,
    coeffs: DMatrix<f64>,
    sup_norm: f64,
}

impl MixedForm {
    /// `coeffs` is `C(m, k) x C(n, k)`, rows and columns in lexicographic
    /// multi-index order.
    pub fn new(m: usize, n: usize, k: usize, coeffs: DMatrix<f64>) -> Result<Self> {
        if k > m || k > n {
            return Err(CalibraError::domain(format!(
                "mixed degree {k} exceeds a factor dimension ({m}, {n})"
            )));
        }
        let shape = (binomial(m, k), binomial(n, k));
        if coeffs.shape() != shape {
            return Err(CalibraError::mismatch(
                format!("{}x{} coefficient table", shape.0, shape.1),
                format!("{}x{}", coeffs.nrows(), coeffs.ncols()),
            ));
        }
        let sup_norm = coeffs.norm();
        Ok(MixedForm {
            m,
            n,
            k,
            coeffs,
            sup_norm,
        })
    }

    /// The product form `y ^ x` for a `k`-form `y` on `R^n` and an
    /// `(m - k)`-form `x` on `R^m` (Euclidean Hodge star).
    pub fn from_forms(y_form: &KForm, x_form: &KForm) -> Result<Self> {
        let (m, n, k) = (x_form.dim(), y_form.dim(), y_form.degree());
        if x_form.degree() + k != m {
            return Err(CalibraError::mismatch(
                format!("{}-form on R^{m}", m.saturating_sub(k)),
                format!("{}-form", x_form.degree()),
            ));
        }
        // x = *gamma with gamma = (-1)^{k(m-k)} *x.
        let sign = if (k * (m - k)) % 2 == 0 { 1.0 } else { -1.0 };
        let gamma = x_form.hodge_star(&Metric::euclidean(m))?.scaled(sign);
        let coeffs = DMatrix::from_fn(binomial(m, k), binomial(n, k), |i, j| {
            gamma.coeffs()[i] * y_form.coeffs()[j]
        });
        MixedForm::new(m, n, k, coeffs)
    }

    pub fn source_dim(&self) -> usize {
        self.m
    }

    pub fn target_dim(&self) -> usize {
        self.n
    }

    /// The degree along the target factor.
    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    /// `sqrt(sum Phi_{IJ}^2)`, the pointwise norm for the product metric.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }
}

fn check_graph_shape(phi: &MixedForm, a: &DMatrix<f64>) -> Result<()> {
    if a.shape() != (phi.n, phi.m) {
        return Err(CalibraError::mismatch(
            format!("{}x{} matrix", phi.n, phi.m),
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    Ok(())
}

/// `((1, f)^* Phi) / vol` at a point where `df = A` (orthonormal frames).
pub fn evaluate_mixed(phi: &MixedForm, a: &DMatrix<f64>) -> Result<f64> {
    check_graph_shape(phi, a)?;
    let src: Vec<Vec<usize>> = basis_masks(phi.m, phi.k)
        .into_iter()
        .map(mask_positions)
        .collect();
    let tgt: Vec<Vec<usize>> = basis_masks(phi.n, phi.k)
        .into_iter()
        .map(mask_positions)
        .collect();
    let mut total = 0.0;
    for (i, cols) in src.iter().enumerate() {
        for (j, rows) in tgt.iter().enumerate() {
            let c = phi.coeffs[(i, j)];
            if c != 0.0 {
                total += c * minor(a, rows, cols);
            }
        }
    }
    Ok(total)
}

/// `(evaluate_mixed, k! C(m,k) C(n,k) |Phi| |A|^k)`.
pub fn lemma41_bound(phi: &MixedForm, a: &DMatrix<f64>) -> Result<(f64, f64)> {
    let lhs = evaluate_mixed(phi, a)?;
    let k = phi.k;
    let frob = a.norm();
    let rhs = factorial(k)
        * binomial(phi.m, k) as f64
        * binomial(phi.n, k) as f64
        * phi.sup_norm
        * frob.powi(k as i32);
    Ok((lhs, rhs))
}

/// The Kahler form `omega(u, v) = <J u, v>` of an orthogonal complex
/// structure.
pub fn kahler_form_of(j: &DMatrix<f64>) -> Result<KForm> {
    let dim = j.nrows();
    let mut coeffs = Vec::with_capacity(binomial(dim, 2));
    for a in 0..dim {
        for b in a + 1..dim {
            coeffs.push(j[(b, a)]);
        }
    }
    KForm::from_coeffs(dim, 2, coeffs)
}

pub fn check_complex_structure(j: &DMatrix<f64>, what: &str) -> Result<()> {
    let dim = j.nrows();
    if !j.is_square() || !dim.is_multiple_of(2) || dim == 0 {
        return Err(CalibraError::InvalidComplexStructure(format!(
            "{what} must be square of even size, got {}x{}",
            j.nrows(),
            j.ncols()
        )));
    }
    let id = DMatrix::<f64>::identity(dim, dim);
    if (j * j + &id).amax() > 1e-10 {
        return Err(CalibraError::InvalidComplexStructure(format!(
            "{what} does not square to -1"
        )));
    }
    if (j.transpose() * j - id).amax() > 1e-10 {
        return Err(CalibraError::InvalidComplexStructure(format!(
            "{what} is not orthogonal"
        )));
    }
    Ok(())
}

/// The complex-linear / anti-linear split of a real differential.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LichnerowiczSplit {
    /// `|(partial f)^{1,0}|^2 = |A^+|^2 / 2`.
    pub d_norm_sq: f64,
    /// `|(dbar f)^{1,0}|^2 = |A^-|^2 / 2`.
    pub dbar_norm_sq: f64,
    /// `|A|^2`.
    pub energy: f64,
    /// `omega_g^{c-1} ^ A^* omega_h / vol_g`, with `vol_g = omega_g^c / c!`
    /// and `c` the complex dimension of the source.
    pub pairing: f64,
    /// `(c - 1)! (d_norm_sq - dbar_norm_sq)`.
    pub pairing_expected: f64,
}

impl LichnerowiczSplit {
    /// Relative residual of `|A|^2 = 2 d + 2 dbar`.
    pub fn energy_residual(&self) -> f64 {
        let rhs = 2.0 * self.d_norm_sq + 2.0 * self.dbar_norm_sq;
        (self.energy - rhs).abs() / self.energy.max(rhs).max(f64::MIN_POSITIVE)
    }

    /// Residual of the pairing identity relative to `max(|pairing|, |A|^2)`.
    pub fn pairing_residual(&self) -> f64 {
        let scale = self
            .pairing
            .abs()
            .max(self.pairing_expected.abs())
            .max(self.energy);
        (self.pairing - self.pairing_expected).abs() / scale.max(f64::MIN_POSITIVE)
    }
}

/// Splits `A: R^{2m} -> R^{2n}` into `A^± = (A ∓ J_t A J_s) / 2` and checks
/// the pairing through [`evaluate_mixed`].
pub fn lichnerowicz_split(
    a: &DMatrix<f64>,
    j_src: &DMatrix<f64>,
    j_tgt: &DMatrix<f64>,
) -> Result<LichnerowiczSplit> {
    check_complex_structure(j_src, "source complex structure")?;
    check_complex_structure(j_tgt, "target complex structure")?;
    if a.shape() != (j_tgt.nrows(), j_src.nrows()) {
        return Err(CalibraError::mismatch(
            format!("{}x{} matrix", j_tgt.nrows(), j_src.nrows()),
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    let conj = j_tgt * a * j_src;
    let plus = (a - &conj) * 0.5;
    let minus = (a + &conj) * 0.5;
    let d_norm_sq = plus.norm_squared() / 2.0;
    let dbar_norm_sq = minus.norm_squared() / 2.0;

    let c = j_src.nrows() / 2;
    let omega_g = kahler_form_of(j_src)?;
    let omega_h = kahler_form_of(j_tgt)?;
    let x_part = omega_g.power(c - 1)?;
    let phi = MixedForm::from_forms(&omega_h, &x_part)?;
    let vol = omega_g.power(c)?.top_coefficient()? / factorial(c);
    let pairing = evaluate_mixed(&phi, a)? / vol;

    Ok(LichnerowiczSplit {
        d_norm_sq,
        dbar_norm_sq,
        energy: a.norm_squared(),
        pairing,
        pairing_expected: factorial(c - 1) * (d_norm_sq - dbar_norm_sq),
    })
}

fn check_orthonormal(frame: &DMatrix<f64>) -> Result<()> {
    let gram = frame.transpose() * frame;
    let k = frame.ncols();
    if (gram - DMatrix::<f64>::identity(k, k)).amax() > 1e-10 {
        return Err(CalibraError::domain("frame is not orthonormal to 1e-10"));
    }
    Ok(())
}

/// `1 - psi(frame)` for an orthonormal `m`-frame (columns of an `n x m`
/// matrix). A calibration never takes this below zero.
pub fn wirtinger_check(frame: &DMatrix<f64>, psi: &KForm) -> Result<f64> {
    check_orthonormal(frame)?;
    Ok(1.0 - psi.evaluate(frame)?)
}

/// The Wirtinger calibration `omega^p / p!` on `C^q`.
pub fn kahler_calibration(q: usize, p: usize) -> Result<KForm> {
    Ok(kahler_form(q).power(p)?.scaled(1.0 / factorial(p)))
}

/// Largest value of `psi` over `samples` random orthonormal frames; a
/// calibration keeps it at most 1.
pub fn sampled_comass(psi: &KForm, samples: usize, seed: u64) -> Result<f64> {
    let (m, k) = (psi.dim(), psi.degree());
    let values = sweep(samples, seed, |rng, _| {
        let o = random_orthogonal(rng, m);
        psi.evaluate(&o.columns(0, k).into_owned())
    });
    values
        .into_iter()
        .try_fold(f64::NEG_INFINITY, |acc, v| Ok(acc.max(v?)))
}

/// Outcome of [`fibration_check`].
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FibrationReport {
    /// `(A^* vol_Y ^ phi) / vol`.
    pub lhs: f64,
    /// `tau_tilde(A)`.
    pub rhs: f64,
    /// `phi` on the oriented orthonormal kernel frame; `None` at a critical
    /// point.
    pub kernel_value: Option<f64>,
}

impl FibrationReport {
    /// Equality holds exactly when the fibre is calibrated.
    pub fn fibre_calibrated(&self, tol: f64) -> bool {
        self.kernel_value.is_some_and(|v| (v - 1.0).abs() <= tol)
    }
}

/// Compares `A^* vol_Y ^ phi` with `tau_tilde(A)` for a submersion
/// `A: R^m -> R^n` (`m > n`) and an `(m - n)`-form `phi`, where
/// `vol_Y = vol_scale * e'^{1...n}`.
pub fn fibration_check(a: &DMatrix<f64>, phi: &KForm, vol_scale: f64) -> Result<FibrationReport> {
    let (n, m) = a.shape();
    if m <= n {
        return Err(CalibraError::domain(format!(
            "fibration needs source dimension > target dimension, got {m} <= {n}"
        )));
    }
    if phi.dim() != m || phi.degree() != m - n {
        return Err(CalibraError::mismatch(
            format!("{}-form on R^{m}", m - n),
            format!("{}-form on R^{}", phi.degree(), phi.dim()),
        ));
    }
    let vol_y = KForm::scalar(n, 1.0)
        .hodge_star(&Metric::euclidean(n))?
        .scaled(vol_scale);
    let lhs = evaluate_mixed(&MixedForm::from_forms(&vol_y, phi)?, a)?;
    let rhs = tau_tilde(&LinearMapData::euclidean(a.clone()), vol_scale)?;

    let scale = a.amax().max(f64::MIN_POSITIVE);
    if rhs <= 1e-12 * vol_scale * scale.powi(n as i32) {
        return Ok(FibrationReport {
            lhs,
            rhs,
            kernel_value: None,
        });
    }
    // Eigenvectors of A^T A: the top n span the horizontal space, the rest
    // the kernel.
    let eig = (a.transpose() * a).symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut frame = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
    if (a * frame.columns(0, n)).determinant() < 0.0 {
        frame.column_mut(0).neg_mut();
    }
    if frame.determinant() < 0.0 {
        frame.column_mut(n).neg_mut();
    }
    let kernel_value = phi.evaluate(&frame.columns(n, m - n).into_owned())?;
    Ok(FibrationReport {
        lhs,
        rhs,
        kernel_value: Some(kernel_value),
    })
}

/// `(det A, m^{-m} |A|_1^m)`.
pub fn amgm_det_check(a: &DMatrix<f64>) -> Result<(f64, f64)> {
    if !a.is_square() {
        return Err(CalibraError::mismatch(
            "square matrix",
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    let m = a.nrows();
    if m == 0 {
        return Ok((1.0, 1.0));
    }
    let trace_norm = schatten_p(&LinearMapData::euclidean(a.clone()), 1.0)?;
    let mf = m as f64;
    Ok((a.determinant(), (trace_norm / mf).powi(m as i32)))
}

/// The randomized suites exposed on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Lichnerowicz,
    Wirtinger,
    Fibration,
    Amgm,
    Lemma41,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Lichnerowicz,
        Suite::Wirtinger,
        Suite::Fibration,
        Suite::Amgm,
        Suite::Lemma41,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Lichnerowicz => "lichnerowicz",
            Suite::Wirtinger => "wirtinger",
            Suite::Fibration => "fibration",
            Suite::Amgm => "amgm",
            Suite::Lemma41 => "lemma41",
        }
    }

    pub fn parse(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// Inputs of the worst trial, as row-major matrices.
pub type WorstCase = BTreeMap<String, Vec<Vec<f64>>>;

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SuiteReport {
    pub suite: Suite,
    pub trials: usize,
    /// Smallest normalized margin; negative beyond `-tol` is a failure.
    pub min_margin: f64,
    pub tol: f64,
    pub failures: usize,
    pub worst_case: WorstCase,
    /// Suite-specific extras (equality witnesses, sharper constants).
    pub details: BTreeMap<String, f64>,
    pub pass: bool,
}

struct Trial {
    margin: f64,
    failed: bool,
    inputs: WorstCase,
    extras: Vec<(&'static str, f64)>,
}

fn trial(margin: f64, tol: f64, inputs: WorstCase) -> Trial {
    Trial {
        margin,
        failed: margin < -tol,
        inputs,
        extras: Vec::new(),
    }
}

fn inputs(pairs: &[(&str, &DMatrix<f64>)]) -> WorstCase {
    pairs
        .iter()
        .map(|(name, m)| (name.to_string(), matrix_rows(m)))
        .collect()
}

/// Runs one randomized suite.
pub fn run_suite(suite: Suite, trials: usize, seed: u64) -> Result<SuiteReport> {
    let tol = match suite {
        Suite::Lichnerowicz | Suite::Wirtinger | Suite::Amgm | Suite::Lemma41 => 1e-10,
        Suite::Fibration => 1e-9,
    };
    let results: Vec<Result<Trial>> = sweep(trials, seed, |rng, _| match suite {
        Suite::Lichnerowicz => lichnerowicz_trial(rng, tol),
        Suite::Wirtinger => wirtinger_trial(rng, tol),
        Suite::Fibration => fibration_trial(rng, tol),
        Suite::Amgm => {
            let m = rng.random_range(1..=6);
            let a = gaussian_matrix(rng, m, m);
            let (lhs, rhs) = amgm_det_check(&a)?;
            Ok(trial(
                (rhs - lhs) / (1.0 + rhs.abs()),
                tol,
                inputs(&[("A", &a)]),
            ))
        }
        Suite::Lemma41 => lemma41_trial(rng, tol),
    });

    let mut min_margin = f64::INFINITY;
    let mut failures = 0;
    let mut worst_case = WorstCase::new();
    let mut details: BTreeMap<String, f64> = BTreeMap::new();
    for t in results {
        let t = t?;
        if t.failed {
            failures += 1;
        }
        if t.margin < min_margin {
            min_margin = t.margin;
            worst_case = t.inputs;
        }
        for (key, value) in t.extras {
            let slot = details.entry(key.to_string()).or_insert(f64::NEG_INFINITY);
            *slot = slot.max(value);
        }
    }

    // Deterministic equality witnesses.
    let witness_failed = match suite {
        Suite::Amgm => {
            let (l, r) = amgm_det_check(&DMatrix::identity(3, 3))?;
            details.insert("identityResidual".into(), (l - r).abs());
            (l - r).abs() > tol
        }
        Suite::Wirtinger => {
            let frame = DMatrix::from_column_slice(4, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
            let m = wirtinger_check(&frame, &kahler_calibration(2, 1)?)?;
            details.insert("complexLineMargin".into(), m);
            m.abs() > tol
        }
        Suite::Fibration => {
            let a = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
            let r = fibration_check(&a, &KForm::basis(3, &[2, 3])?, 1.0)?;
            details.insert("coordinateFibreResidual".into(), (r.lhs - r.rhs).abs());
            (r.lhs - r.rhs).abs() > tol
        }
        _ => false,
    };

    Ok(SuiteReport {
        suite,
        trials,
        min_margin,
        tol,
        failures,
        worst_case,
        details,
        pass: failures == 0 && !witness_failed,
    })
}

/// Random orthogonal complex structure `O J_0 O^T`.
pub fn random_complex_structure<R: Rng + ?Sized>(rng: &mut R, c: usize) -> DMatrix<f64> {
    let o = random_orthogonal(rng, 2 * c);
    &o * standard_complex_structure(c) * o.transpose()
}

fn lichnerowicz_trial<R: Rng + ?Sized>(rng: &mut R, tol: f64) -> Result<Trial> {
    let cm = rng.random_range(1..=3);
    let cn = rng.random_range(1..=3);
    let (js, jt) = if rng.random_bool(0.5) {
        (
            standard_complex_structure(cm),
            standard_complex_structure(cn),
        )
    } else {
        (
            random_complex_structure(rng, cm),
            random_complex_structure(rng, cn),
        )
    };
    let a = gaussian_matrix(rng, 2 * cn, 2 * cm);
    let split = lichnerowicz_split(&a, &js, &jt)?;
    let residual = split.energy_residual().max(split.pairing_residual());
    // The complex-linear projection must have no anti-linear part.
    let holo = (&a - &jt * &a * &js) * 0.5;
    let holo_split = lichnerowicz_split(&holo, &js, &jt)?;
    let dbar = holo_split.dbar_norm_sq / holo_split.energy.max(1.0);
    let mut t = trial(
        -residual,
        tol,
        inputs(&[("A", &a), ("Jsrc", &js), ("Jtgt", &jt)]),
    );
    t.failed |= dbar > 1e-14;
    t.extras.push(("maxHolomorphicDbar", dbar));
    t.extras.push(("maxResidual", residual));
    Ok(t)
}

fn wirtinger_trial<R: Rng + ?Sized>(rng: &mut R, tol: f64) -> Result<Trial> {
    let o = random_orthogonal(rng, 4);
    let frame = o.columns(0, 2).into_owned();
    let margin = wirtinger_check(&frame, &kahler_calibration(2, 1)?)?;
    let mut t = trial(margin, tol, inputs(&[("frame", &frame)]));
    t.failed |= margin > 2.0 + tol;
    t.extras.push(("maxMargin", margin));
    Ok(t)
}

fn fibration_trial<R: Rng + ?Sized>(rng: &mut R, tol: f64) -> Result<Trial> {
    let m = rng.random_range(2..=5);
    let n = rng.random_range(1..m);
    // A rotated unit simple (m - n)-form: a calibration by Hadamard.
    let mut o = random_orthogonal(rng, m);
    if o.determinant() < 0.0 {
        o.column_mut(0).neg_mut();
    }
    let fibre: Vec<usize> = (n + 1..=m).collect();
    let phi = KForm::basis(m, &fibre)?.pullback(&o)?;
    let random = rng.random_bool(0.5);
    let a = if random {
        gaussian_matrix(rng, n, m)
    } else {
        // Kernel is the calibrated plane O^T span(e_{n+1..m}).
        let mut b = gaussian_matrix(rng, n, n);
        if b.determinant() < 0.0 {
            b.row_mut(0).neg_mut();
        }
        let mut proj = DMatrix::zeros(n, m);
        for i in 0..n {
            proj[(i, i)] = 1.0;
        }
        b * proj * &o
    };
    let report = fibration_check(&a, &phi, 1.0)?;
    let mut t = trial(
        report.rhs - report.lhs,
        tol,
        inputs(&[("A", &a), ("rotation", &o)]),
    );
    if let Some(v) = report.kernel_value {
        // lhs = tau_tilde * phi(kernel frame).
        let consistency = (report.lhs - report.rhs * v).abs() / (1.0 + report.rhs);
        t.failed |= consistency > tol;
        t.extras.push(("maxKernelConsistency", consistency));
    }
    if !random {
        let gap = (report.rhs - report.lhs).abs() / (1.0 + report.rhs);
        t.failed |= gap > tol;
        t.extras.push(("maxCalibratedFibreGap", gap));
    }
    Ok(t)
}

fn lemma41_trial<R: Rng + ?Sized>(rng: &mut R, tol: f64) -> Result<Trial> {
    let m = rng.random_range(1..=6);
    let n = rng.random_range(1..=6);
    let k = rng.random_range(1..=m.min(n).min(3));
    let coeffs = gaussian_matrix(rng, binomial(m, k), binomial(n, k));
    let phi = MixedForm::new(m, n, k, coeffs.clone())?;
    let a = gaussian_matrix(rng, n, m);
    let (lhs, rhs) = lemma41_bound(&phi, &a)?;
    let mut t = trial(
        (rhs - lhs) / (1.0 + rhs),
        tol,
        inputs(&[("Phi", &coeffs), ("A", &a)]),
    );
    // The constant actually needed, for comparison with k! C(m,k) C(n,k).
    let denom = phi.sup_norm() * a.norm().powi(k as i32);
    if denom > 0.0 {
        t.extras.push(("maxEmpiricalConstant", lhs.abs() / denom));
    }
    Ok(t)
}
