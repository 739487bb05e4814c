//! The acceptance criteria, shared by `calibra suite-all` and the
//! `acceptance` integration test.
//!
//! Every criterion takes a [`SuiteOptions`] and derives its own seed from
//! the run seed, so criteria can run alone or in sequence with the same
//! results. Outcomes carry no timings.

use calibra_core::energy::sigma_pq;
use calibra_core::models::{
    build_model, check_iota_constancy, g2_structure_defect, prop53_sides, prop53_sweep,
    random_unitary,
};
use calibra_core::oracle::oracle_equivalence;
use calibra_core::sampling::{block_rng, random_spd, sub_seed, sweep};
use calibra_core::torus::{
    calibration_integral, circle_counterexample, cohomology_bound, energy_quadrature,
    homotopy_invariance_check, intersection_estimate, minimize_energy, pairing, random_bandlimited,
    sigma1_calibration_sweep,
};
use calibra_core::verify::{run_suite, Suite};
use calibra_core::{KForm, LinearMapData, ModelForm, ModelTag, Result, TorusMapSpec};
use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::random_class;
use crate::report::to_value;

pub const MODEL_TAGS: [ModelTag; 5] = [
    ModelTag::Kahler(2),
    ModelTag::Kahler(3),
    ModelTag::Quaternionic(2),
    ModelTag::G2,
    ModelTag::Spin7,
];

/// Associative form with the coefficient of `e^{257}` negated.
pub const CORRUPTED_G2_FIXTURE: &str = include_str!("../fixtures/g2_negated_term.json");

const IOTA_TOL: f64 = 1e-9;
const PROP53_TOL: f64 = 1e-9;
const EQUALITY_LAMBDAS: [f64; 4] = [0.0, 0.5, 1.0, 3.0];
const TORUS_INSTANCES: usize = 5;
const TORUS_GRID: usize = 64;
const DESCENT_TOL: f64 = 1e-6;
const DESCENT_MAX_ITER: usize = 100_000;
const MAX_EXCESS: f64 = 0.005;
const MAX_SUP_DEVIATION: f64 = 1e-3;
const MAX_Z_SCORE: f64 = 4.0;
const CIRCLE_GRID: usize = 1000;
const CIRCLE_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seed: u64,
    pub quick: bool,
    /// Replacement for the associative form in criteria 1 and 2.
    pub g2_form: Option<KForm>,
}

impl SuiteOptions {
    pub fn new(seed: u64) -> Self {
        SuiteOptions {
            seed,
            quick: false,
            g2_form: None,
        }
    }

    fn count(&self, full: usize) -> usize {
        if self.quick {
            (full / 10).max(1)
        } else {
            full
        }
    }

    fn seed_for(&self, salt: u64) -> u64 {
        sub_seed(self.seed, salt)
    }

    fn model(&self, tag: ModelTag) -> Result<ModelForm> {
        match (tag, &self.g2_form) {
            (ModelTag::G2, Some(form)) => ModelForm::custom(form.clone()),
            _ => build_model(tag),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub id: String,
    pub name: String,
    pub pass: bool,
    pub details: Value,
}

impl Outcome {
    fn new(id: impl Into<String>, name: impl Into<String>, pass: bool, details: Value) -> Self {
        Outcome {
            id: id.into(),
            name: name.into(),
            pass,
            details,
        }
    }

    /// One line for logs: `[PASS] 3 lichnerowicz identities`.
    pub fn line(&self) -> String {
        format!(
            "[{}] {} {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name
        )
    }
}

/// The constant `k |phi|^2 / m` each standard model must produce.
pub fn expected_iota_constant(tag: ModelTag) -> Option<f64> {
    match tag {
        ModelTag::Kahler(_) => Some(1.0),
        ModelTag::G2 => Some(3.0),
        ModelTag::Spin7 => Some(7.0),
        ModelTag::Quaternionic(_) | ModelTag::Custom => None,
    }
}

fn is_g2_shaped(model: &ModelForm) -> bool {
    model.dim() == 7 && model.degree() == 3
}

/// Iota constancy for one model, plus the structure gate for 3-forms on
/// `R^7`.
pub fn iota_entry(
    model: &ModelForm,
    label: &str,
    expected: Option<f64>,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<(Value, bool)> {
    let report = check_iota_constancy(model, samples, tol, seed)?;
    let constant_ok =
        expected.is_none_or(|c| (model.iota_const_sq() - c).abs() <= 1e-12 * c.max(1.0));
    let defect = if is_g2_shaped(model) {
        Some(g2_structure_defect(model.form())?)
    } else {
        None
    };
    let structure_ok = defect.is_none_or(|d| d <= tol);
    let pass = report.pass && constant_ok && structure_ok;
    let violations: Vec<&str> = [
        (!report.pass, "iota deviation above tolerance"),
        (!constant_ok, "iota constant differs from the model value"),
        (
            !structure_ok,
            "associative structure metric is not the identity",
        ),
    ]
    .into_iter()
    .filter_map(|(bad, what)| bad.then_some(what))
    .collect();
    let mut entry = json!({
        "tag": label,
        "m": model.dim(),
        "k": model.degree(),
        "normSq": model.norm_sq(),
        "iotaConstSq": model.iota_const_sq(),
        "expectedConstant": expected,
        "maxDeviation": report.max_deviation,
        "iota": to_value(&report),
    });
    if let Some(d) = defect {
        entry["structureDefect"] = json!(d);
    }
    entry["violations"] = json!(violations);
    entry["pass"] = json!(pass);
    Ok((entry, pass))
}

/// Randomized calibration-inequality sweep, equality on `lambda I`, and on
/// `lambda U` for unitary `U` when the model is Kahler.
pub fn prop53_entry(
    model: &ModelForm,
    label: &str,
    trials: usize,
    unitary_trials: usize,
    tol: f64,
    seed: u64,
) -> Result<(Value, bool)> {
    let sweep_report = prop53_sweep(model, trials, tol, seed)?;
    let m = model.dim();
    let mut identity_residual: f64 = 0.0;
    for lambda in EQUALITY_LAMBDAS {
        let sides = prop53_sides(model, &(DMatrix::identity(m, m) * lambda))?;
        identity_residual = identity_residual.max(sides.normalized_margin().abs());
    }
    let unitary_residual = match model.tag() {
        ModelTag::Kahler(q) => {
            let residuals = sweep(unitary_trials, sub_seed(seed, 1), |rng, _| -> Result<f64> {
                let lambda = rng.random_range(0.0..3.0);
                let a = random_unitary(rng, q) * lambda;
                Ok(prop53_sides(model, &a)?.normalized_margin().abs())
            });
            let mut worst: f64 = 0.0;
            for r in residuals {
                worst = worst.max(r?);
            }
            Some(worst)
        }
        _ => None,
    };
    let pass =
        sweep_report.pass && identity_residual <= tol && unitary_residual.is_none_or(|r| r <= tol);
    let entry = json!({
        "tag": label,
        "m": m,
        "k": model.degree(),
        "minMargin": sweep_report.min_margin,
        "sweep": to_value(&sweep_report),
        "identityEqualityResidual": identity_residual,
        "unitaryEqualityResidual": unitary_residual,
        "pass": pass,
    });
    Ok((entry, pass))
}

fn model_label(opts: &SuiteOptions, tag: ModelTag) -> String {
    match (tag, &opts.g2_form) {
        (ModelTag::G2, Some(_)) => "g2 (fixture)".to_string(),
        _ => tag.to_string(),
    }
}

/// Criterion 1: iota constancy of the five standard model forms.
pub fn criterion_iota(opts: &SuiteOptions) -> Result<Outcome> {
    let seed = opts.seed_for(1);
    let samples = opts.count(10_000);
    let mut entries = Vec::new();
    let mut pass = true;
    for (i, tag) in MODEL_TAGS.iter().enumerate() {
        let model = opts.model(*tag)?;
        let (entry, ok) = iota_entry(
            &model,
            &model_label(opts, *tag),
            expected_iota_constant(*tag),
            samples,
            IOTA_TOL,
            sub_seed(seed, i as u64),
        )?;
        pass &= ok;
        entries.push(entry);
    }
    Ok(Outcome::new(
        "1",
        "iota constancy of model forms",
        pass,
        json!({ "models": entries }),
    ))
}

/// Criterion 2: the identity-map calibration inequality and its equality
/// cases.
pub fn criterion_prop53(opts: &SuiteOptions) -> Result<Outcome> {
    let seed = opts.seed_for(2);
    let trials = opts.count(100_000);
    let unitary = opts.count(1000);
    let mut entries = Vec::new();
    let mut pass = true;
    for (i, tag) in MODEL_TAGS.iter().enumerate() {
        let model = opts.model(*tag)?;
        let (entry, ok) = prop53_entry(
            &model,
            &model_label(opts, *tag),
            trials,
            unitary,
            PROP53_TOL,
            sub_seed(seed, i as u64),
        )?;
        pass &= ok;
        entries.push(entry);
    }
    Ok(Outcome::new(
        "2",
        "identity-map calibration inequality sweep",
        pass,
        json!({ "models": entries }),
    ))
}

/// Criterion 3: both Lichnerowicz identities.
pub fn criterion_lichnerowicz(opts: &SuiteOptions) -> Result<Outcome> {
    let report = run_suite(Suite::Lichnerowicz, opts.count(100_000), opts.seed_for(3))?;
    Ok(Outcome::new(
        "3",
        "lichnerowicz identities",
        report.pass,
        to_value(&report),
    ))
}

/// A random torus instance: metrics, class and initial perturbation.
pub fn torus_instance(
    seed: u64,
    m: usize,
    n: usize,
    grid_n: usize,
    modes: usize,
    amplitude: f64,
) -> Result<TorusMapSpec> {
    let mut rng = block_rng(seed, 0);
    let g = random_spd(&mut rng, m, 0.5, 0.5);
    let h = random_spd(&mut rng, n, 0.5, 0.5);
    let q = random_class(&mut rng, m, n);
    let base = TorusMapSpec::new(g, h, q, grid_n)?;
    if modes == 0 {
        return Ok(base);
    }
    let u0 = random_bandlimited(&mut rng, m, n, grid_n, modes, amplitude);
    base.with_fourier_perturbation(&u0)
}

/// The five 2-torus instances of criteria 4, 5 and 7.
pub fn torus_instances(opts: &SuiteOptions) -> Result<Vec<TorusMapSpec>> {
    let seed = opts.seed_for(4);
    (0..TORUS_INSTANCES)
        .map(|i| torus_instance(sub_seed(seed, i as u64), 2, 2, TORUS_GRID, 4, 0.05))
        .collect()
}

/// Criterion 4: descent reaches the linear energy. Also returns the
/// minimizers for criterion 7.
pub fn criterion_minimization(opts: &SuiteOptions) -> Result<(Outcome, Vec<TorusMapSpec>)> {
    let mut entries = Vec::new();
    let mut minimizers = Vec::new();
    let mut pass = true;
    for spec in torus_instances(opts)? {
        let (trace, min) = minimize_energy(&spec, 2.0, 2.0, DESCENT_TOL, DESCENT_MAX_ITER)?;
        let excess = trace.relative_excess();
        let monotone = trace.is_monotone();
        let ok = trace.converged
            && (-1e-12..=MAX_EXCESS).contains(&excess)
            && trace.final_sup_deviation <= MAX_SUP_DEVIATION
            && monotone;
        pass &= ok;
        entries.push(json!({
            "G": matrix_rows(spec.source_metric().matrix()),
            "H": matrix_rows(spec.target_metric().matrix()),
            "Q": matrix_rows(spec.class_matrix()),
            "initialSupDeviation": spec.perturbation_sup_deviation(),
            "iterations": trace.iterations,
            "finalEnergy": trace.final_energy,
            "targetEnergy": trace.target_energy,
            "relativeExcess": excess,
            "finalSupDeviation": trace.final_sup_deviation,
            "finalGradient": trace.final_gradient,
            "monotone": monotone,
            "converged": trace.converged,
            "pass": ok,
        }));
        minimizers.push(min);
    }
    let outcome = Outcome::new(
        "4",
        "torus energy minimization",
        pass,
        json!({ "grid": TORUS_GRID, "tol": DESCENT_TOL, "maxExcess": MAX_EXCESS, "instances": entries }),
    );
    Ok((outcome, minimizers))
}

/// Criterion 5: the calibration integral does not move under homotopy.
pub fn criterion_invariance(opts: &SuiteOptions) -> Result<Outcome> {
    let seed = opts.seed_for(5);
    let trials = opts.count(100);
    let mut entries = Vec::new();
    let mut pass = true;
    for (i, spec) in torus_instances(opts)?.into_iter().enumerate() {
        let report = homotopy_invariance_check(&spec, trials, sub_seed(seed, i as u64))?;
        pass &= report.pass;
        entries.push(to_value(&report));
    }
    Ok(Outcome::new(
        "5",
        "homotopy invariance",
        pass,
        json!({ "instances": entries }),
    ))
}

/// Criterion 6: Monte-Carlo intersection invariants.
pub fn criterion_intersection(opts: &SuiteOptions) -> Result<Outcome> {
    let seed = opts.seed_for(6);
    let samples = opts.count(1_000_000);
    let mut entries = Vec::new();
    let mut pass = true;
    for (i, (m, n)) in [(1, 1), (2, 2), (3, 2)].into_iter().enumerate() {
        let spec = torus_instance(sub_seed(seed, i as u64), m, n, 8, 0, 0.0)?;
        let est = intersection_estimate(&spec, samples, sub_seed(seed, 100 + i as u64))?;
        let (entry, ok) = intersection_entry(&spec, &est);
        pass &= ok;
        entries.push(entry);
    }
    Ok(Outcome::new(
        "6",
        "intersection invariants",
        pass,
        json!({ "cases": entries }),
    ))
}

pub fn intersection_entry(
    spec: &TorusMapSpec,
    est: &calibra_core::torus::IntersectionEstimate,
) -> (Value, bool) {
    let m = spec.source_dim();
    let z = est.j_f_z_score();
    let cs = est.cauchy_schwarz_margin();
    let energy_margin = est.energy_margin(m);
    let allowance = est.energy_margin_allowance(m);
    let ok =
        z <= MAX_Z_SCORE && cs >= -1e-12 * (1.0 + est.j_f.abs()) && energy_margin >= -allowance;
    let entry = json!({
        "m": m,
        "n": spec.target_dim(),
        "G": matrix_rows(spec.source_metric().matrix()),
        "H": matrix_rows(spec.target_metric().matrix()),
        "Q": matrix_rows(spec.class_matrix()),
        "estimate": to_value(est),
        "jFZScore": z,
        "cauchySchwarzMargin": cs,
        "energyMargin": energy_margin,
        "energyMarginAllowance": allowance,
        "pass": ok,
    });
    (entry, ok)
}

/// Criterion 7: the cohomological lower bound on the criterion 4 minimizers.
pub fn criterion_bound(minimizers: &[TorusMapSpec]) -> Result<Outcome> {
    let mut entries = Vec::new();
    let mut pass = true;
    for spec in minimizers {
        for k in 1..=spec.source_dim().min(spec.target_dim()) {
            let (entry, ok) = bound_entry(spec, k)?;
            pass &= ok;
            entries.push(entry);
        }
    }
    Ok(Outcome::new(
        "7",
        "cohomology lower bound",
        pass,
        json!({ "cases": entries }),
    ))
}

pub fn bound_entry(spec: &TorusMapSpec, k: usize) -> Result<(Value, bool)> {
    let b = cohomology_bound(spec, k)?;
    let positive_ok = b.pullback_norm == 0.0 || b.bound > 0.0;
    let below_ok = b.bound <= b.linear_energy * (1.0 + 1e-12);
    let ok = positive_ok && below_ok;
    let mut entry = to_value(&b);
    entry["measuredEnergy"] = json!(b.linear_energy);
    entry["pass"] = json!(ok);
    Ok((entry, ok))
}

/// Criterion 8: fast paths against brute-force evaluation.
pub fn criterion_oracle(opts: &SuiteOptions) -> Result<Outcome> {
    let report = oracle_equivalence(opts.count(10_000), opts.seed_for(8))?;
    Ok(Outcome::new(
        "8",
        "oracle equivalence",
        report.pass,
        to_value(&report),
    ))
}

/// Criterion 9: the calibrated non-affine circle map, plus randomized
/// checks of the linear calibration inequality.
pub fn criterion_circle(opts: &SuiteOptions) -> Result<Outcome> {
    let seed = opts.seed_for(9);
    let spec = circle_counterexample(CIRCLE_GRID)?;
    let energy = energy_quadrature(&spec, 1.0, 1.0)?;
    let integral = calibration_integral(&spec);
    let mut worst_pointwise: f64 = 0.0;
    let mut min_derivative = f64::INFINITY;
    let p_norm = calibra_core::torus::p_norm_squared(&spec).sqrt();
    let differentials = spec.differentials();
    for a in &differentials {
        let l = LinearMapData::new(
            a.clone(),
            spec.source_metric().clone(),
            spec.target_metric().clone(),
        )?;
        let density = sigma_pq(&l, 1.0, 1.0)?;
        let calibrated = pairing(&spec, a)?;
        worst_pointwise = worst_pointwise.max((p_norm * density - calibrated).abs());
        min_derivative = min_derivative.min(a[(0, 0)]);
    }
    let non_affine = spec.perturbation_sup_deviation();
    let circle_ok = (energy - 1.0).abs() <= CIRCLE_TOL
        && (integral - 1.0).abs() <= CIRCLE_TOL
        && worst_pointwise <= CIRCLE_TOL
        && min_derivative >= 0.0
        && non_affine > 0.1
        && differentials.len() == CIRCLE_GRID;

    let trials = opts.count(100_000);
    let mut sweeps = Vec::new();
    let mut sweeps_ok = true;
    let circle_sweep = sigma1_calibration_sweep(&spec, trials, sub_seed(seed, 0))?;
    sweeps_ok &= circle_sweep.pass;
    sweeps.push(to_value(&circle_sweep));
    for (i, (m, n)) in [(2, 2), (3, 2)].into_iter().enumerate() {
        let inst = torus_instance(sub_seed(seed, 1 + i as u64), m, n, 8, 0, 0.0)?;
        let report = sigma1_calibration_sweep(&inst, trials, sub_seed(seed, 10 + i as u64))?;
        sweeps_ok &= report.pass;
        let mut v = to_value(&report);
        v["m"] = json!(m);
        v["n"] = json!(n);
        sweeps.push(v);
    }
    let details = json!({
        "grid": CIRCLE_GRID,
        "energy": energy,
        "energyError": energy - 1.0,
        "calibrationIntegral": integral,
        "maxPointwiseGap": worst_pointwise,
        "minDerivative": min_derivative,
        "supDeviationFromAffine": non_affine,
        "tol": CIRCLE_TOL,
        "sigma1Sweeps": sweeps,
    });
    Ok(Outcome::new(
        "9",
        "calibrated circle counterexample",
        circle_ok && sweeps_ok,
        details,
    ))
}

/// The remaining pointwise suites at a tenth of the full trial count.
pub fn extra_verify_suites(opts: &SuiteOptions) -> Result<Vec<Outcome>> {
    let trials = opts.count(10_000);
    [
        Suite::Wirtinger,
        Suite::Fibration,
        Suite::Amgm,
        Suite::Lemma41,
    ]
    .into_iter()
    .enumerate()
    .map(|(i, suite)| {
        let report = run_suite(suite, trials, opts.seed_for(20 + i as u64))?;
        Ok(Outcome::new(
            format!("extra:{}", suite.name()),
            format!("{} sweep", suite.name()),
            report.pass,
            to_value(&report),
        ))
    })
    .collect()
}

/// Runs the iota checks on the embedded corrupted associative form; passes
/// when that form is rejected.
pub fn mutation_check(opts: &SuiteOptions) -> Result<Outcome> {
    let form: KForm = serde_json::from_str(CORRUPTED_G2_FIXTURE)
        .map_err(|e| calibra_core::CalibraError::Numeric(format!("embedded fixture: {e}")))?;
    let model = ModelForm::custom(form)?;
    let (entry, accepted) = iota_entry(
        &model,
        "g2 (negated term)",
        Some(3.0),
        opts.count(10_000),
        IOTA_TOL,
        opts.seed_for(30),
    )?;
    Ok(Outcome::new(
        "mutation",
        "corrupted associative form is rejected",
        !accepted,
        json!({ "rejected": !accepted, "check": entry }),
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteSummary {
    pub seed: u64,
    pub quick: bool,
    pub outcomes: Vec<Outcome>,
    pub pass: bool,
}

/// Criteria 1 to 9 in order, then the extra suites and the mutation check.
/// `on_outcome` sees each result as soon as it is known.
pub fn run_all(opts: &SuiteOptions, mut on_outcome: impl FnMut(&Outcome)) -> Result<SuiteSummary> {
    let mut outcomes = Vec::new();
    let mut push = |o: Outcome, outcomes: &mut Vec<Outcome>| {
        on_outcome(&o);
        outcomes.push(o);
    };
    push(criterion_iota(opts)?, &mut outcomes);
    push(criterion_prop53(opts)?, &mut outcomes);
    push(criterion_lichnerowicz(opts)?, &mut outcomes);
    let (minimization, minimizers) = criterion_minimization(opts)?;
    push(minimization, &mut outcomes);
    push(criterion_invariance(opts)?, &mut outcomes);
    push(criterion_intersection(opts)?, &mut outcomes);
    push(criterion_bound(&minimizers)?, &mut outcomes);
    push(criterion_oracle(opts)?, &mut outcomes);
    push(criterion_circle(opts)?, &mut outcomes);
    for o in extra_verify_suites(opts)? {
        push(o, &mut outcomes);
    }
    push(mutation_check(opts)?, &mut outcomes);
    let pass = outcomes.iter().all(|o| o.pass);
    Ok(SuiteSummary {
        seed: opts.seed,
        quick: opts.quick,
        outcomes,
        pass,
    })
}

pub fn matrix_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}
