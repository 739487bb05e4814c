use std::path::{Path, PathBuf};

use calibra_core::sampling::{block_rng, random_spd, sub_seed};
use calibra_core::ModelTag;
use nalgebra::DMatrix;
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::{Command, CommonArgs};
use crate::error::CliError;

/// Seed used when neither the flag, the config file nor `CALIBRA_SEED`
/// provides one.
pub const DEFAULT_SEED: u64 = 1729;

pub const SEED_ENV: &str = "CALIBRA_SEED";

const METRIC_SALT: u64 = 0x6d65_7472;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct ModelsParams {
    pub seed: Option<u64>,
    pub tags: Vec<String>,
    /// Unit vectors per iota-constancy check.
    pub samples: usize,
    /// Gaussian matrices per calibration-inequality sweep.
    pub trials: usize,
    /// Random scaled unitaries per Kahler equality check.
    pub unitary_trials: usize,
    pub tol: f64,
    pub form: Option<PathBuf>,
}

impl Default for ModelsParams {
    fn default() -> Self {
        ModelsParams {
            seed: None,
            tags: ["kahler(2)", "kahler(3)", "quaternionic(2)", "g2", "spin7"]
                .map(String::from)
                .to_vec(),
            samples: 10_000,
            trials: 100_000,
            unitary_trials: 1000,
            tol: 1e-9,
            form: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct VerifyParams {
    pub seed: Option<u64>,
    pub suite: String,
    pub trials: usize,
}

impl Default for VerifyParams {
    fn default() -> Self {
        VerifyParams {
            seed: None,
            suite: "all".into(),
            trials: 100_000,
        }
    }
}

/// Shared by `torus-min`, `torus-invariance`, `bound` and `intersection`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct TorusParams {
    pub seed: Option<u64>,
    pub m: usize,
    pub n: usize,
    #[serde(rename = "G")]
    pub g: Option<Vec<Vec<f64>>>,
    #[serde(rename = "H")]
    pub h: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Q")]
    pub q: Option<Vec<Vec<i64>>>,
    pub grid_n: usize,
    pub p: f64,
    /// Outer exponent of the density; `Q` is the class matrix.
    #[serde(rename = "q")]
    pub q_exponent: f64,
    pub trials: usize,
    pub samples: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Fourier modes in the random initial perturbation.
    pub modes: usize,
    pub amplitude: f64,
    /// Degree for `bound`; every degree up to `min(m, n)` when absent.
    pub k: Option<usize>,
}

impl Default for TorusParams {
    fn default() -> Self {
        TorusParams {
            seed: None,
            m: 2,
            n: 2,
            g: None,
            h: None,
            q: None,
            grid_n: 64,
            p: 2.0,
            q_exponent: 2.0,
            trials: 100,
            samples: 1_000_000,
            tol: 1e-6,
            max_iter: 100_000,
            modes: 4,
            amplitude: 0.05,
            k: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct SuiteParams {
    pub seed: Option<u64>,
    pub quick: bool,
    pub g2_form: Option<PathBuf>,
}

/// Effective parameters of one run, echoed into its report.
#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum Params {
    Models(ModelsParams),
    Verify(VerifyParams),
    Torus(TorusParams),
    Suite(SuiteParams),
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub format: Format,
    pub quick: bool,
    pub workers: Option<usize>,
    pub params: Params,
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
}

/// Parses a parameter object, reporting the offending field path on failure.
pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            e.into_inner().to_string()
        } else {
            format!("at `{path}`: {}", e.into_inner())
        }
    })
}

/// Flag, then config file, then environment, then [`DEFAULT_SEED`].
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            CliError::usage(format!(
                "{SEED_ENV}={v:?} is not an unsigned 64-bit integer"
            ))
        }),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn scaled(count: usize, quick: bool) -> usize {
    if quick {
        (count / 10).max(1)
    } else {
        count
    }
}

pub fn parse_tag(s: &str) -> Result<ModelTag, CliError> {
    let t = s.trim().to_ascii_lowercase();
    let arg = |prefix: &str| -> Option<Result<usize, CliError>> {
        let inner = t
            .strip_prefix(prefix)?
            .strip_prefix('(')?
            .strip_suffix(')')?;
        Some(
            inner
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("bad model size in tag {s:?}"))),
        )
    };
    match t.as_str() {
        "g2" => Ok(ModelTag::G2),
        "spin7" => Ok(ModelTag::Spin7),
        _ => {
            if let Some(q) = arg("kahler") {
                Ok(ModelTag::Kahler(q?))
            } else if let Some(q) = arg("quaternionic") {
                Ok(ModelTag::Quaternionic(q?))
            } else {
                Err(CliError::usage(format!(
                    "unknown model tag {s:?}; expected kahler(q), quaternionic(q), g2 or spin7"
                )))
            }
        }
    }
}

impl RunConfig {
    /// Merges flags over the config file and checks the result.
    pub fn resolve(command: &Command, common: &CommonArgs) -> Result<Self, CliError> {
        let cfg = common.config.as_deref();
        let quick = common.quick;
        let format = if common.csv {
            Format::Csv
        } else {
            Format::Json
        };
        if format == Format::Csv && !matches!(command, Command::TorusMin) {
            return Err(CliError::usage(
                "CSV output is only available for torus-min",
            ));
        }
        if common.workers == Some(0) {
            return Err(CliError::usage("--workers must be at least 1"));
        }
        let (seed, params) = match command {
            Command::Models { tags, form } => {
                let mut p: ModelsParams = read_config(cfg)?;
                if !tags.is_empty() {
                    p.tags = tags.clone();
                }
                if form.is_some() {
                    p.form = form.clone();
                }
                if let Some(s) = common.samples {
                    p.samples = s;
                }
                if let Some(t) = common.trials {
                    p.trials = t;
                }
                p.samples = scaled(p.samples, quick);
                p.trials = scaled(p.trials, quick);
                p.unitary_trials = scaled(p.unitary_trials, quick);
                for tag in &p.tags {
                    parse_tag(tag)?;
                }
                if p.samples == 0 || p.tol.is_nan() || p.tol < 0.0 {
                    return Err(CliError::usage("models needs samples >= 1 and tol >= 0"));
                }
                (resolve_seed(common.seed, p.seed)?, Params::Models(p))
            }
            Command::Verify { suite } => {
                let mut p: VerifyParams = read_config(cfg)?;
                if let Some(s) = suite {
                    p.suite = s.clone();
                }
                if let Some(t) = common.trials {
                    p.trials = t;
                }
                p.trials = scaled(p.trials, quick);
                if p.suite != "all" && calibra_core::verify::Suite::parse(&p.suite).is_none() {
                    return Err(CliError::usage(format!(
                        "unknown suite {:?}; expected lichnerowicz, wirtinger, fibration, amgm, lemma41 or all",
                        p.suite
                    )));
                }
                (resolve_seed(common.seed, p.seed)?, Params::Verify(p))
            }
            Command::TorusMin
            | Command::TorusInvariance
            | Command::Bound { .. }
            | Command::Intersection => {
                let mut p: TorusParams = read_config(cfg)?;
                if let Command::Bound { k: Some(k) } = command {
                    p.k = Some(*k);
                }
                if let Some(t) = common.trials {
                    p.trials = t;
                }
                if let Some(s) = common.samples {
                    p.samples = s;
                }
                p.trials = scaled(p.trials, quick);
                p.samples = scaled(p.samples, quick);
                p.validate()?;
                (resolve_seed(common.seed, p.seed)?, Params::Torus(p))
            }
            Command::SuiteAll { g2_form } => {
                let mut p: SuiteParams = read_config(cfg)?;
                p.quick |= quick;
                if g2_form.is_some() {
                    p.g2_form = g2_form.clone();
                }
                (resolve_seed(common.seed, p.seed)?, Params::Suite(p))
            }
        };
        Ok(RunConfig {
            command: command.name().to_string(),
            seed,
            format,
            quick,
            workers: common.workers,
            params,
            output: common.output.clone(),
        })
    }
}

fn matrix(rows: &[Vec<f64>], r: usize, c: usize, name: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(CliError::usage(format!("{name} must be {r}x{c}")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// `(G, H, Q)`.
pub type TorusMatrices = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

impl TorusParams {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.m == 0 || self.n == 0 {
            return Err(CliError::usage("m and n must be at least 1"));
        }
        if self.grid_n < 4 {
            return Err(CliError::usage("gridN must be at least 4"));
        }
        if [self.p, self.q_exponent]
            .iter()
            .any(|e| e.is_nan() || *e < 1.0)
        {
            return Err(CliError::usage("p and q must be at least 1"));
        }
        if self.tol.is_nan() || self.tol <= 0.0 || self.amplitude.is_nan() || self.amplitude < 0.0 {
            return Err(CliError::usage(
                "tol must be positive and amplitude non-negative",
            ));
        }
        if self.samples < 2 {
            return Err(CliError::usage("samples must be at least 2"));
        }
        if let Some(k) = self.k {
            if k == 0 || k > self.m.min(self.n) {
                return Err(CliError::usage(format!(
                    "k must lie in 1..={}",
                    self.m.min(self.n)
                )));
            }
        }
        if let Some(g) = &self.g {
            matrix(g, self.m, self.m, "G")?;
        }
        if let Some(h) = &self.h {
            matrix(h, self.n, self.n, "H")?;
        }
        if let Some(q) = &self.q {
            if q.len() != self.n || q.iter().any(|row| row.len() != self.m) {
                return Err(CliError::usage(format!("Q must be {}x{}", self.n, self.m)));
            }
        }
        Ok(())
    }

    /// Metrics and class matrix, drawing any missing metric from the seed.
    pub fn matrices(&self, seed: u64) -> Result<TorusMatrices, CliError> {
        let mut rng = block_rng(sub_seed(seed, METRIC_SALT), 0);
        let g = match &self.g {
            Some(rows) => matrix(rows, self.m, self.m, "G")?,
            None => random_spd(&mut rng, self.m, 0.5, 0.5),
        };
        let h = match &self.h {
            Some(rows) => matrix(rows, self.n, self.n, "H")?,
            None => random_spd(&mut rng, self.n, 0.5, 0.5),
        };
        let q = match &self.q {
            Some(rows) => DMatrix::from_fn(self.n, self.m, |i, j| rows[i][j] as f64),
            None => default_class(self.m, self.n),
        };
        Ok((g, h, q))
    }
}

/// `[[1, 1], [0, 1]]` on the 2-torus, otherwise the coordinate inclusion
/// or projection.
pub fn default_class(m: usize, n: usize) -> DMatrix<f64> {
    if (m, n) == (2, 2) {
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])
    } else {
        DMatrix::from_fn(n, m, |i, j| if i == j { 1.0 } else { 0.0 })
    }
}

/// A nonzero integer class matrix with entries in `-2..=2`.
pub fn random_class<R: Rng + ?Sized>(rng: &mut R, m: usize, n: usize) -> DMatrix<f64> {
    loop {
        let q = DMatrix::from_fn(n, m, |_, _| rng.random_range(-2i64..=2) as f64);
        if q.iter().any(|&v| v != 0.0) {
            return q;
        }
    }
}
