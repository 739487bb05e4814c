use std::path::Path;

use calibra_core::models::build_model;
use calibra_core::sampling::{block_rng, sub_seed};
use calibra_core::torus::{
    homotopy_invariance_check, intersection_estimate, minimize_energy, random_bandlimited,
};
use calibra_core::verify::{run_suite, Suite};
use calibra_core::{KForm, ModelForm, TorusMapSpec};
use serde_json::{json, Value};

use crate::config::{
    parse_tag, ModelsParams, Params, RunConfig, SuiteParams, TorusParams, VerifyParams,
};
use crate::error::CliError;
use crate::report::to_value;
use crate::suite::{
    self, bound_entry, expected_iota_constant, intersection_entry, iota_entry, prop53_entry,
    SuiteOptions,
};

const PERTURBATION_SALT: u64 = 0x7065_7274;

/// What a command produced: the report payload, its verdict and, for
/// descent runs, the energy history.
pub struct CommandOutput {
    pub results: Value,
    pub pass: bool,
    pub history: Option<Vec<f64>>,
}

impl CommandOutput {
    fn new(results: Value, pass: bool) -> Self {
        CommandOutput {
            results,
            pass,
            history: None,
        }
    }
}

pub fn execute(config: &RunConfig) -> Result<CommandOutput, CliError> {
    let seed = config.seed;
    match (&config.params, config.command.as_str()) {
        (Params::Models(p), _) => models(p, seed),
        (Params::Verify(p), _) => verify(p, seed),
        (Params::Torus(p), "torus-min") => torus_min(p, seed),
        (Params::Torus(p), "torus-invariance") => torus_invariance(p, seed),
        (Params::Torus(p), "bound") => bound(p, seed),
        (Params::Torus(p), "intersection") => intersection(p, seed),
        (Params::Suite(p), _) => suite_all(p, seed),
        (_, other) => Err(CliError::usage(format!("no handler for {other}"))),
    }
}

pub fn load_form(path: &Path) -> Result<KForm, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read form {}: {e}", path.display())))?;
    crate::config::parse_config(&text)
        .map_err(|e| CliError::usage(format!("form {}: {e}", path.display())))
}

fn models(p: &ModelsParams, seed: u64) -> Result<CommandOutput, CliError> {
    let mut models: Vec<(String, ModelForm, Option<f64>)> = Vec::new();
    for tag in &p.tags {
        let tag = parse_tag(tag)?;
        let model = build_model(tag).map_err(|e| CliError::usage(e.to_string()))?;
        models.push((tag.to_string(), model, expected_iota_constant(tag)));
    }
    if let Some(path) = &p.form {
        let model = ModelForm::custom(load_form(path)?)?;
        models.push((path.display().to_string(), model, None));
    }
    let mut entries = Vec::new();
    let mut pass = true;
    for (i, (label, model, expected)) in models.iter().enumerate() {
        let s = sub_seed(seed, i as u64);
        let (iota, iota_ok) = iota_entry(model, label, *expected, p.samples, p.tol, s)?;
        let (ineq, ineq_ok) = prop53_entry(
            model,
            label,
            p.trials,
            p.unitary_trials,
            p.tol,
            sub_seed(s, 1),
        )?;
        let ok = iota_ok && ineq_ok;
        pass &= ok;
        let mut entry = iota.clone();
        entry["minMargin"] = ineq["minMargin"].clone();
        entry["inequality"] = ineq;
        entry["pass"] = json!(ok);
        entries.push(entry);
    }
    Ok(CommandOutput::new(json!({ "models": entries }), pass))
}

fn verify(p: &VerifyParams, seed: u64) -> Result<CommandOutput, CliError> {
    let suites: Vec<Suite> = match Suite::parse(&p.suite) {
        Some(s) => vec![s],
        None => Suite::ALL.to_vec(),
    };
    let mut reports = Vec::new();
    let mut pass = true;
    for suite in suites {
        let report = run_suite(suite, p.trials, sub_seed(seed, suite as u64))?;
        pass &= report.pass;
        reports.push(to_value(&report));
    }
    Ok(CommandOutput::new(json!({ "suites": reports }), pass))
}

fn torus_spec(p: &TorusParams, seed: u64) -> Result<TorusMapSpec, CliError> {
    let (g, h, q) = p.matrices(seed)?;
    TorusMapSpec::new(g, h, q, p.grid_n).map_err(|e| CliError::usage(e.to_string()))
}

fn perturbed(p: &TorusParams, spec: TorusMapSpec, seed: u64) -> Result<TorusMapSpec, CliError> {
    if p.modes == 0 {
        return Ok(spec);
    }
    let mut rng = block_rng(sub_seed(seed, PERTURBATION_SALT), 0);
    let modes = random_bandlimited(&mut rng, p.m, p.n, p.grid_n, p.modes, p.amplitude);
    Ok(spec.with_fourier_perturbation(&modes)?)
}

fn torus_min(p: &TorusParams, seed: u64) -> Result<CommandOutput, CliError> {
    let spec = perturbed(p, torus_spec(p, seed)?, seed)?;
    let (trace, _) = minimize_energy(&spec, p.p, p.q_exponent, p.tol, p.max_iter)?;
    let excess = trace.relative_excess();
    let monotone = trace.is_monotone();
    let strictly_convex = p.p == 2.0 && p.q_exponent == 2.0;
    let pass = trace.converged
        && monotone
        && (-1e-12..=0.005).contains(&excess)
        && (!strictly_convex || trace.final_sup_deviation <= 1e-3);
    let results = json!({
        "G": suite::matrix_rows(spec.source_metric().matrix()),
        "H": suite::matrix_rows(spec.target_metric().matrix()),
        "Q": suite::matrix_rows(spec.class_matrix()),
        "initialSupDeviation": spec.perturbation_sup_deviation(),
        "iterations": trace.iterations,
        "finalEnergy": trace.final_energy,
        "targetEnergy": trace.target_energy,
        "relativeExcess": excess,
        "finalGradient": trace.final_gradient,
        "finalSupDeviation": trace.final_sup_deviation,
        "monotone": monotone,
        "converged": trace.converged,
        "energyHistory": trace.energy_history,
    });
    Ok(CommandOutput {
        results,
        pass,
        history: Some(trace.energy_history),
    })
}

fn torus_invariance(p: &TorusParams, seed: u64) -> Result<CommandOutput, CliError> {
    let spec = torus_spec(p, seed)?;
    let report = homotopy_invariance_check(&spec, p.trials, seed)?;
    let pass = report.pass;
    Ok(CommandOutput::new(to_value(&report), pass))
}

fn bound(p: &TorusParams, seed: u64) -> Result<CommandOutput, CliError> {
    let linear = torus_spec(p, seed)?;
    let bent = perturbed(p, linear.clone(), seed)?;
    let degrees: Vec<usize> = match p.k {
        Some(k) => vec![k],
        None => (1..=p.m.min(p.n)).collect(),
    };
    let mut entries = Vec::new();
    let mut pass = true;
    for k in degrees {
        for (map, spec) in [("linear", &linear), ("perturbed", &bent)] {
            let (mut entry, ok) = bound_entry(spec, k)?;
            entry["map"] = json!(map);
            pass &= ok;
            entries.push(entry);
        }
    }
    Ok(CommandOutput::new(json!({ "bounds": entries }), pass))
}

fn intersection(p: &TorusParams, seed: u64) -> Result<CommandOutput, CliError> {
    let spec = torus_spec(p, seed)?;
    let est = intersection_estimate(&spec, p.samples, seed)?;
    let (entry, pass) = intersection_entry(&spec, &est);
    Ok(CommandOutput::new(entry, pass))
}

fn suite_all(p: &SuiteParams, seed: u64) -> Result<CommandOutput, CliError> {
    let g2_form = match &p.g2_form {
        Some(path) => Some(load_form(path)?),
        None => None,
    };
    let opts = SuiteOptions {
        seed,
        quick: p.quick,
        g2_form,
    };
    let summary = suite::run_all(&opts, |o| eprintln!("{}", o.line()))?;
    let pass = summary.pass;
    Ok(CommandOutput::new(to_value(&summary), pass))
}
