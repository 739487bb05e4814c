//! Flat local models `(g_0, phi_0)` of the special-holonomy geometries and
//! the pointwise calibration inequality for the identity map.
//!
//! Every model is a constant form on Euclidean `R^m`. Sign conventions are
//! fixed once here and then gated behaviourally: constancy of
//! `|iota_u phi_0|^2` over the unit sphere, self-duality where it applies,
//! and nonnegative margins in [`verify_prop53`].

use std::fmt;

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::energy::{singular_spectrum, LinearMapData};
use crate::error::{CalibraError, Result};
use crate::exterior::{KForm, Metric};
use crate::sampling::{sweep, unit_vector};

/// Which geometry a model form comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "q")]
pub enum ModelTag {
    /// Kahler form on `C^q`, `m = 2q`, `k = 2`.
    Kahler(usize),
    /// Quaternionic Kahler 4-form on `H^q`, `m = 4q >= 8`, `k = 4`.
    Quaternionic(usize),
    /// Associative 3-form, `m = 7`.
    G2,
    /// Cayley 4-form, `m = 8`.
    Spin7,
    /// A user-supplied form, e.g. a fixture read from disk.
    Custom,
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelTag::Kahler(q) => write!(f, "kahler({q})"),
            ModelTag::Quaternionic(q) => write!(f, "quaternionic({q})"),
            ModelTag::G2 => write!(f, "g2"),
            ModelTag::Spin7 => write!(f, "spin7"),
            ModelTag::Custom => write!(f, "custom"),
        }
    }
}

/// A model form with its cached norms.
#[derive(Clone, Debug)]
pub struct ModelForm {
    tag: ModelTag,
    form: KForm,
    star: KForm,
    norm_sq: f64,
    iota_const_sq: f64,
}

impl ModelForm {
    pub fn tag(&self) -> ModelTag {
        self.tag
    }

    pub fn dim(&self) -> usize {
        self.form.dim()
    }

    pub fn degree(&self) -> usize {
        self.form.degree()
    }

    pub fn form(&self) -> &KForm {
        &self.form
    }

    /// `*phi_0` for the Euclidean metric.
    pub fn star(&self) -> &KForm {
        &self.star
    }

    /// `|phi_0|^2`.
    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    /// The value `|iota_u phi_0|^2` must take for unit `u`: `k |phi_0|^2 / m`.
    pub fn iota_const_sq(&self) -> f64 {
        self.iota_const_sq
    }

    /// Wraps an arbitrary form of degree `>= 1`. Nothing is checked beyond
    /// the degree; use [`check_iota_constancy`] to find out whether it
    /// behaves like a model.
    pub fn custom(form: KForm) -> Result<Self> {
        Self::from_form(ModelTag::Custom, form)
    }

    fn from_form(tag: ModelTag, form: KForm) -> Result<Self> {
        let (m, k) = (form.dim(), form.degree());
        if k == 0 || m == 0 {
            return Err(CalibraError::domain("model forms need degree >= 1"));
        }
        let norm_sq = form.norm_sq();
        let star = form.hodge_star(&Metric::euclidean(m))?;
        Ok(ModelForm {
            tag,
            form,
            star,
            norm_sq,
            iota_const_sq: k as f64 * norm_sq / m as f64,
        })
    }
}

/// Builds the standard coordinate expression of a model form.
pub fn build_model(tag: ModelTag) -> Result<ModelForm> {
    let form = match tag {
        ModelTag::Kahler(q) => {
            if q == 0 {
                return Err(CalibraError::domain("Kahler model needs q >= 1"));
            }
            kahler_form(q)
        }
        ModelTag::Quaternionic(q) => {
            if q < 2 {
                return Err(CalibraError::domain(format!(
                    "quaternionic Kahler model needs 4q >= 8, got q = {q}"
                )));
            }
            quaternionic_form(q)?
        }
        ModelTag::G2 => g2_form(),
        ModelTag::Spin7 => spin7_form()?,
        ModelTag::Custom => {
            return Err(CalibraError::domain(
                "custom models are built with ModelForm::custom",
            ))
        }
    };
    ModelForm::from_form(tag, form)
}

/// `omega_0 = sum_a e^{2a-1} ^ e^{2a}` on `R^{2q}`.
pub fn kahler_form(q: usize) -> KForm {
    let m = 2 * q;
    let terms: Vec<[usize; 2]> = (1..=q).map(|a| [2 * a - 1, 2 * a]).collect();
    let terms: Vec<(&[usize], f64)> = terms.iter().map(|t| (&t[..], 1.0)).collect();
    KForm::from_terms(m, 2, &terms).expect("valid Kahler terms")
}

/// The triple `(omega_I, omega_J, omega_K)` on `H^q = R^{4q}`.
pub fn quaternionic_triple(q: usize) -> [KForm; 3] {
    let m = 4 * q;
    let mut i_terms = Vec::new();
    let mut j_terms = Vec::new();
    let mut k_terms = Vec::new();
    for a in 1..=q {
        let b = 4 * (a - 1);
        i_terms.push(([b + 1, b + 2], 1.0));
        i_terms.push(([b + 3, b + 4], 1.0));
        j_terms.push(([b + 1, b + 3], 1.0));
        j_terms.push(([b + 2, b + 4], -1.0));
        k_terms.push(([b + 1, b + 4], 1.0));
        k_terms.push(([b + 2, b + 3], 1.0));
    }
    let build = |terms: &[([usize; 2], f64)]| {
        let t: Vec<(&[usize], f64)> = terms.iter().map(|(i, c)| (&i[..], *c)).collect();
        KForm::from_terms(m, 2, &t).expect("valid quaternionic terms")
    };
    [build(&i_terms), build(&j_terms), build(&k_terms)]
}

/// `Omega_0 = omega_I^2 + omega_J^2 + omega_K^2`.
pub fn quaternionic_form(q: usize) -> Result<KForm> {
    let [wi, wj, wk] = quaternionic_triple(q);
    wi.wedge(&wi)?.add(&wj.wedge(&wj)?)?.add(&wk.wedge(&wk)?)
}

/// Associative 3-form
/// `e^123 + e^145 + e^167 + e^246 - e^257 - e^347 - e^356`.
pub fn g2_form() -> KForm {
    const TERMS: [([usize; 3], f64); 7] = [
        ([1, 2, 3], 1.0),
        ([1, 4, 5], 1.0),
        ([1, 6, 7], 1.0),
        ([2, 4, 6], 1.0),
        ([2, 5, 7], -1.0),
        ([3, 4, 7], -1.0),
        ([3, 5, 6], -1.0),
    ];
    let terms: Vec<(&[usize], f64)> = TERMS.iter().map(|(i, c)| (&i[..], *c)).collect();
    KForm::from_terms(7, 3, &terms).expect("valid G2 terms")
}

/// Cayley 4-form `e^1 ^ phi + *phi` on `R^8 = R + R^7`, with the associative
/// form `phi` placed on coordinates `2..8`.
pub fn spin7_form() -> Result<KForm> {
    let phi = g2_form();
    let psi = phi.hodge_star(&Metric::euclidean(7))?;
    let e1 = KForm::covector(8, 1)?;
    e1.wedge(&phi.embed(8, 1)?)?.add(&psi.embed(8, 1)?)
}

/// `B(u, v) = (iota_u phi ^ iota_v phi ^ phi) / (6 vol)` for a 3-form on
/// `R^7`. A positive form inducing the Euclidean metric and orientation
/// gives exactly the identity. Sign errors in single terms leave
/// `|iota_u phi|^2` constant but flip eigenvalues of `B`.
pub fn g2_structure_metric(phi: &KForm) -> Result<DMatrix<f64>> {
    if phi.dim() != 7 || phi.degree() != 3 {
        return Err(CalibraError::mismatch(
            "3-form on R^7",
            format!("{}-form on R^{}", phi.degree(), phi.dim()),
        ));
    }
    let contractions: Vec<KForm> = (0..7)
        .map(|i| {
            let mut e = [0.0; 7];
            e[i] = 1.0;
            phi.interior(&e)
        })
        .collect::<Result<_>>()?;
    let mut b = DMatrix::zeros(7, 7);
    for i in 0..7 {
        for j in i..7 {
            let top = contractions[i]
                .wedge(&contractions[j])?
                .wedge(phi)?
                .top_coefficient()?;
            b[(i, j)] = top / 6.0;
            b[(j, i)] = top / 6.0;
        }
    }
    Ok(b)
}

/// `max |B - I|` for [`g2_structure_metric`].
pub fn g2_structure_defect(phi: &KForm) -> Result<f64> {
    Ok((g2_structure_metric(phi)? - DMatrix::<f64>::identity(7, 7)).amax())
}

/// Result of sampling `|iota_u phi_0|^2` over unit vectors.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct IotaReport {
    pub samples: usize,
    pub constant: f64,
    pub max_deviation: f64,
    pub min_value: f64,
    pub max_value: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Samples unit vectors uniformly on `S^{m-1}` and measures how far
/// `|iota_u phi_0|^2` strays from `k |phi_0|^2 / m`.
pub fn check_iota_constancy(
    model: &ModelForm,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<IotaReport> {
    if samples == 0 {
        return Err(CalibraError::domain("need at least one sample"));
    }
    let m = model.dim();
    let values = sweep(samples, seed, |rng, _| {
        let u = unit_vector(rng, m);
        model.form.interior(u.as_slice()).map(|f| f.norm_sq())
    });
    let values: Vec<f64> = values.into_iter().collect::<Result<_>>()?;
    let constant = model.iota_const_sq;
    let max_deviation = values
        .iter()
        .map(|v| (v - constant).abs())
        .fold(0.0, f64::max);
    let min_value = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max_value = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(IotaReport {
        samples,
        constant,
        max_deviation,
        min_value,
        max_value,
        tol,
        pass: max_deviation <= tol,
    })
}

/// Both sides of `A^* phi_0 ^ *phi_0 <= (|phi_0|^2 / m) |A|_k^k vol`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Prop53Sides {
    pub lhs: f64,
    pub rhs: f64,
}

impl Prop53Sides {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }

    /// Margin scaled by `1 + rhs`, the unit the tolerance is stated in.
    pub fn normalized_margin(&self) -> f64 {
        self.margin() / (1.0 + self.rhs.abs())
    }
}

fn check_square(model: &ModelForm, a: &DMatrix<f64>) -> Result<()> {
    let m = model.dim();
    if a.shape() != (m, m) {
        return Err(CalibraError::mismatch(
            format!("{m}x{m} matrix"),
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    Ok(())
}

pub fn prop53_sides(model: &ModelForm, a: &DMatrix<f64>) -> Result<Prop53Sides> {
    check_square(model, a)?;
    let lhs = model
        .form
        .pullback(a)?
        .wedge(&model.star)?
        .top_coefficient()?;
    let spectrum = singular_spectrum(&LinearMapData::euclidean(a.clone()))?;
    let k = model.degree() as f64;
    let rhs = model.norm_sq / model.dim() as f64 * spectrum.power_sum(k);
    Ok(Prop53Sides { lhs, rhs })
}

/// `rhs - lhs` of the pointwise identity-map calibration inequality.
pub fn verify_prop53(model: &ModelForm, a: &DMatrix<f64>) -> Result<f64> {
    Ok(prop53_sides(model, a)?.margin())
}

/// `((m / |phi_0|^2) A^* phi_0 ^ *phi_0 / vol, sigma_{k,k}(A))`: the
/// calibration pairing of the identity-map calibration against its energy
/// density. The first never exceeds the second.
pub fn sigma_kk_calibration_value(model: &ModelForm, a: &DMatrix<f64>) -> Result<(f64, f64)> {
    let sides = prop53_sides(model, a)?;
    let m = model.dim() as f64;
    Ok((m / model.norm_sq * sides.lhs, m / model.norm_sq * sides.rhs))
}

/// Outcome of a randomized sweep of [`verify_prop53`].
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Prop53Report {
    pub trials: usize,
    /// Smallest `margin / (1 + rhs)` seen.
    pub min_margin: f64,
    pub failures: usize,
    pub worst_case: Vec<Vec<f64>>,
    pub tol: f64,
    pub pass: bool,
}

/// Margins over `trials` Gaussian matrices; fails below `-tol (1 + rhs)`.
pub fn prop53_sweep(model: &ModelForm, trials: usize, tol: f64, seed: u64) -> Result<Prop53Report> {
    let m = model.dim();
    let results = sweep(trials, seed, |rng, _| {
        let a = crate::sampling::gaussian_matrix(rng, m, m);
        prop53_sides(model, &a).map(|s| (s.normalized_margin(), a))
    });
    let mut min_margin = f64::INFINITY;
    let mut failures = 0;
    let mut worst = DMatrix::zeros(m, m);
    for r in results {
        let (margin, a) = r?;
        if margin < -tol {
            failures += 1;
        }
        if margin < min_margin {
            min_margin = margin;
            worst = a;
        }
    }
    Ok(Prop53Report {
        trials,
        min_margin,
        failures,
        worst_case: matrix_rows(&worst),
        tol,
        pass: failures == 0,
    })
}

pub(crate) fn matrix_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A random element of `U(q)`, realified to a `2q x 2q` orthogonal matrix
/// commuting with the complex structure `J e_{2a-1} = e_{2a}`.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, q: usize) -> DMatrix<f64> {
    let z = DMatrix::<Complex<f64>>::from_fn(q, q, |_, _| {
        Complex::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let qr = z.qr();
    let mut u = qr.q();
    let r = qr.r();
    // Fold the phases of R's diagonal into Q.
    for j in 0..q {
        let d = r[(j, j)];
        let norm = d.norm();
        if norm > 0.0 {
            let phase = d / norm;
            for i in 0..q {
                u[(i, j)] *= phase;
            }
        }
    }
    realify(&u)
}

/// `a + ib -> [[a, -b], [b, a]]` blockwise.
pub fn realify(u: &DMatrix<Complex<f64>>) -> DMatrix<f64> {
    let (rows, cols) = u.shape();
    let mut out = DMatrix::zeros(2 * rows, 2 * cols);
    for r in 0..rows {
        for c in 0..cols {
            let z = u[(r, c)];
            out[(2 * r, 2 * c)] = z.re;
            out[(2 * r, 2 * c + 1)] = -z.im;
            out[(2 * r + 1, 2 * c)] = z.im;
            out[(2 * r + 1, 2 * c + 1)] = z.re;
        }
    }
    out
}

/// The standard complex structure on `R^{2q}`: `J e_{2a-1} = e_{2a}`.
pub fn standard_complex_structure(q: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * q, 2 * q);
    for a in 0..q {
        j[(2 * a + 1, 2 * a)] = 1.0;
        j[(2 * a, 2 * a + 1)] = -1.0;
    }
    j
}
