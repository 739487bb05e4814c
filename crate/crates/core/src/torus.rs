//! Flat-torus experiments for maps `T^m -> T^n` in a fixed homotopy class.
//!
//! A map is described by its linear lift `x -> Q x` (integer `Q`, `n x m`)
//! plus a periodic perturbation `u` sampled on an `N^m` grid. The
//! cohomology matrix is `P = Q^T`. Grid points sit at `i / N`, derivatives
//! are centered differences with periodic wrap, and integrals use the
//! midpoint rule, so the mean of every discrete derivative vanishes exactly.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::energy::{schatten_p, LinearMapData, SPECTRUM_CLAMP};
use crate::error::{CalibraError, Result};
use crate::exterior::{basis_masks, compound_matrix, mask_positions, KForm, Metric, Orientation};
use crate::linalg::{binomial, factorial, pairwise_sum, sphere_volume};
use crate::sampling::{gaussian_vector, sweep};

const MAX_GRID_POINTS: usize = 1 << 24;
const PAR_MIN_LEN: usize = 512;
const MAX_BACKTRACKS: usize = 80;

/// One real Fourier mode `c cos(2 pi k.x) + s sin(2 pi k.x)` of an
/// `R^n`-valued field.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FourierMode {
    pub k: Vec<i64>,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl FourierMode {
    fn phase(&self, x: &[f64]) -> f64 {
        2.0 * std::f64::consts::PI
            * self
                .k
                .iter()
                .zip(x)
                .map(|(&k, &xi)| k as f64 * xi)
                .sum::<f64>()
    }
}

/// `count` random nonzero modes with `|k_d| <= max(1, N / 8)` and
/// coefficients of size about `amplitude`.
pub fn random_bandlimited<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    n: usize,
    grid_n: usize,
    count: usize,
    amplitude: f64,
) -> Vec<FourierMode> {
    let band = (grid_n / 8).max(1) as i64;
    (0..count)
        .map(|_| {
            let k = loop {
                let k: Vec<i64> = (0..m).map(|_| rng.random_range(-band..=band)).collect();
                if k.iter().any(|&v| v != 0) {
                    break k;
                }
            };
            let cos = gaussian_vector(rng, n)
                .iter()
                .map(|v| v * amplitude)
                .collect();
            let sin = gaussian_vector(rng, n)
                .iter()
                .map(|v| v * amplitude)
                .collect();
            FourierMode { k, cos, sin }
        })
        .collect()
}

/// Flat-torus experiment: metrics, homotopy class and perturbation field.
#[derive(Clone, Debug)]
pub struct TorusMapSpec {
    m: usize,
    n: usize,
    g: Metric,
    h: Metric,
    q: DMatrix<f64>,
    grid_n: usize,
    points: usize,
    /// Point-major: `u[pt * n + j]`.
    perturbation: Vec<f64>,
}

impl TorusMapSpec {
    /// Linear map with zero perturbation. `q` must be `n x m` with integer
    /// entries.
    pub fn new(g: DMatrix<f64>, h: DMatrix<f64>, q: DMatrix<f64>, grid_n: usize) -> Result<Self> {
        let g = Metric::new(g, Orientation::Positive)?;
        let h = Metric::new(h, Orientation::Positive)?;
        let (m, n) = (g.dim(), h.dim());
        if q.shape() != (n, m) {
            return Err(CalibraError::mismatch(
                format!("{n}x{m} class matrix"),
                format!("{}x{}", q.nrows(), q.ncols()),
            ));
        }
        if q.iter().any(|v| !v.is_finite() || v.fract() != 0.0) {
            return Err(CalibraError::domain(
                "class matrix must have integer entries",
            ));
        }
        if grid_n == 0 {
            return Err(CalibraError::domain(
                "grid needs at least one point per axis",
            ));
        }
        let points = (0..m)
            .try_fold(1usize, |acc, _| acc.checked_mul(grid_n))
            .filter(|&p| p <= MAX_GRID_POINTS)
            .ok_or_else(|| CalibraError::domain(format!("grid {grid_n}^{m} is too large")))?;
        Ok(TorusMapSpec {
            m,
            n,
            g,
            h,
            q,
            grid_n,
            points,
            perturbation: vec![0.0; points * n],
        })
    }

    pub fn with_perturbation(mut self, field: Vec<f64>) -> Result<Self> {
        if field.len() != self.points * self.n {
            return Err(CalibraError::mismatch(
                format!("{} field samples", self.points * self.n),
                field.len(),
            ));
        }
        if field.iter().any(|v| !v.is_finite()) {
            return Err(CalibraError::domain("perturbation has non-finite samples"));
        }
        self.perturbation = field;
        Ok(self)
    }

    /// Samples a sum of Fourier modes on the grid.
    pub fn with_fourier_perturbation(self, modes: &[FourierMode]) -> Result<Self> {
        for mode in modes {
            if mode.k.len() != self.m || mode.cos.len() != self.n || mode.sin.len() != self.n {
                return Err(CalibraError::mismatch(
                    format!(
                        "mode with {} wavenumbers and {} coefficients",
                        self.m, self.n
                    ),
                    format!(
                        "{} and {}",
                        mode.k.len(),
                        mode.cos.len().min(mode.sin.len())
                    ),
                ));
            }
        }
        let n = self.n;
        let mut field = vec![0.0; self.points * n];
        for pt in 0..self.points {
            let x = self.point_coords(pt);
            for mode in modes {
                let (s, c) = mode.phase(&x).sin_cos();
                for j in 0..n {
                    field[pt * n + j] += mode.cos[j] * c + mode.sin[j] * s;
                }
            }
        }
        self.with_perturbation(field)
    }

    pub fn source_dim(&self) -> usize {
        self.m
    }

    pub fn target_dim(&self) -> usize {
        self.n
    }

    pub fn source_metric(&self) -> &Metric {
        &self.g
    }

    pub fn target_metric(&self) -> &Metric {
        &self.h
    }

    pub fn class_matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `P = Q^T`.
    pub fn cohomology_matrix(&self) -> DMatrix<f64> {
        self.q.transpose()
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub fn grid_points(&self) -> usize {
        self.points
    }

    pub fn perturbation(&self) -> &[f64] {
        &self.perturbation
    }

    /// `max |u - mean(u)|` over samples and components.
    pub fn perturbation_sup_deviation(&self) -> f64 {
        let n = self.n;
        (0..n)
            .map(|j| {
                let comp: Vec<f64> = self
                    .perturbation
                    .iter()
                    .skip(j)
                    .step_by(n)
                    .copied()
                    .collect();
                let mean = pairwise_sum(&comp) / comp.len() as f64;
                comp.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Coordinates in `[0, 1)^m` of a grid point.
    pub fn point_coords(&self, pt: usize) -> Vec<f64> {
        let mut rest = pt;
        (0..self.m)
            .map(|_| {
                let i = rest % self.grid_n;
                rest /= self.grid_n;
                i as f64 / self.grid_n as f64
            })
            .collect()
    }

    fn neighbours(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let nn = self.grid_n;
        (0..self.m)
            .map(|d| {
                let stride = nn.pow(d as u32);
                let plus = (0..self.points)
                    .map(|pt| {
                        if (pt / stride) % nn == nn - 1 {
                            pt + stride - nn * stride
                        } else {
                            pt + stride
                        }
                    })
                    .collect();
                let minus = (0..self.points)
                    .map(|pt| {
                        if (pt / stride).is_multiple_of(nn) {
                            pt + nn * stride - stride
                        } else {
                            pt - stride
                        }
                    })
                    .collect();
                (plus, minus)
            })
            .collect()
    }

    /// Midpoint-rule weight `sqrt(det G) / N^m`.
    fn weight(&self) -> f64 {
        self.g.sqrt_det() / self.points as f64
    }

    /// `df` at every grid point, each stored row-major as `n x m`.
    pub fn differentials(&self) -> Vec<DMatrix<f64>> {
        Grid::new(self).differentials(&self.perturbation)
    }
}

/// Precomputed stencil for one spec.
struct Grid<'a> {
    spec: &'a TorusMapSpec,
    nbrs: Vec<(Vec<usize>, Vec<usize>)>,
    q: Vec<f64>,
}

impl<'a> Grid<'a> {
    fn new(spec: &'a TorusMapSpec) -> Self {
        let (n, m) = (spec.n, spec.m);
        let q = (0..n * m).map(|i| spec.q[(i / m, i % m)]).collect();
        Grid {
            spec,
            nbrs: spec.neighbours(),
            q,
        }
    }

    /// Row-major `n x m` differential at `pt`.
    fn differential(&self, u: &[f64], pt: usize, out: &mut [f64]) {
        let (n, m) = (self.spec.n, self.spec.m);
        let half_n = self.spec.grid_n as f64 / 2.0;
        for d in 0..m {
            let (p, q) = (self.nbrs[d].0[pt], self.nbrs[d].1[pt]);
            for j in 0..n {
                out[j * m + d] = self.q[j * m + d] + (u[p * n + j] - u[q * n + j]) * half_n;
            }
        }
    }

    fn differentials(&self, u: &[f64]) -> Vec<DMatrix<f64>> {
        let (n, m) = (self.spec.n, self.spec.m);
        (0..self.spec.points)
            .map(|pt| {
                let mut a = vec![0.0; n * m];
                self.differential(u, pt, &mut a);
                DMatrix::from_row_slice(n, m, &a)
            })
            .collect()
    }

    /// `sum_x f(df_x) * weight`, reduced pairwise.
    fn integrate<F>(&self, u: &[f64], f: F) -> f64
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let nm = self.spec.n * self.spec.m;
        let values: Vec<f64> = (0..self.spec.points)
            .into_par_iter()
            .with_min_len(PAR_MIN_LEN)
            .map_init(
                || vec![0.0; nm],
                |a, pt| {
                    self.differential(u, pt, a);
                    f(a)
                },
            )
            .collect();
        pairwise_sum(&values) * self.spec.weight()
    }

    fn energy(&self, density: &Density, u: &[f64]) -> f64 {
        self.integrate(u, |a| density.value(a))
    }

    fn energy_and_gradient(&self, density: &Density, u: &[f64]) -> (f64, Vec<f64>) {
        let (n, m) = (self.spec.n, self.spec.m);
        let nm = n * m;
        let per_point: Vec<(f64, Vec<f64>)> = (0..self.spec.points)
            .into_par_iter()
            .with_min_len(PAR_MIN_LEN)
            .map_init(
                || vec![0.0; nm],
                |a, pt| {
                    self.differential(u, pt, a);
                    let mut grad = vec![0.0; nm];
                    let v = density.value_and_gradient(a, &mut grad);
                    (v, grad)
                },
            )
            .collect();
        let w = self.spec.weight();
        let values: Vec<f64> = per_point.iter().map(|(v, _)| *v).collect();
        let energy = pairwise_sum(&values) * w;
        let scale = w * self.spec.grid_n as f64 / 2.0;
        let grad: Vec<f64> = (0..self.spec.points)
            .into_par_iter()
            .with_min_len(PAR_MIN_LEN)
            .flat_map_iter(|pt| {
                let per_point = &per_point;
                (0..n).map(move |j| {
                    let mut acc = 0.0;
                    for d in 0..m {
                        let before = self.nbrs[d].1[pt];
                        let after = self.nbrs[d].0[pt];
                        acc += per_point[before].1[j * m + d] - per_point[after].1[j * m + d];
                    }
                    acc * scale
                })
            })
            .collect();
        (energy, grad)
    }
}

/// `sigma_{p,q}(A) = |A|_p^q` in the metrics `(G, H)`, with derivative.
struct Density {
    p: f64,
    q: f64,
    n: usize,
    m: usize,
    g_inv: Vec<f64>,
    h: Vec<f64>,
    h_sqrt: DMatrix<f64>,
    g_inv_sqrt: DMatrix<f64>,
}

impl Density {
    fn new(spec: &TorusMapSpec, p: f64, q: f64) -> Result<Self> {
        if !(p > 0.0 && q > 0.0 && p.is_finite() && q.is_finite()) {
            return Err(CalibraError::domain(format!(
                "exponents must be positive, got p={p}, q={q}"
            )));
        }
        let flat = |a: &DMatrix<f64>| {
            (0..a.nrows() * a.ncols())
                .map(|i| a[(i / a.ncols(), i % a.ncols())])
                .collect()
        };
        Ok(Density {
            p,
            q,
            n: spec.n,
            m: spec.m,
            g_inv: flat(spec.g.inverse()),
            h: flat(spec.h.matrix()),
            h_sqrt: spec.h.sqrt().clone(),
            g_inv_sqrt: spec.g.inv_sqrt().clone(),
        })
    }

    /// `(HA, AG^{-1})`, both row-major `n x m`.
    fn sandwich(&self, a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.n, self.m);
        let mut ha = vec![0.0; n * m];
        let mut ag = vec![0.0; n * m];
        for j in 0..n {
            for d in 0..m {
                let mut s = 0.0;
                for l in 0..n {
                    s += self.h[j * n + l] * a[l * m + d];
                }
                ha[j * m + d] = s;
                let mut t = 0.0;
                for e in 0..m {
                    t += a[j * m + e] * self.g_inv[e * m + d];
                }
                ag[j * m + d] = t;
            }
        }
        (ha, ag)
    }

    fn value(&self, a: &[f64]) -> f64 {
        if self.p == 2.0 {
            let (ha, ag) = self.sandwich(a);
            let s: f64 = ha.iter().zip(&ag).map(|(x, y)| x * y).sum::<f64>().max(0.0);
            return if self.q == 2.0 {
                s
            } else {
                s.powf(self.q / 2.0)
            };
        }
        let (t, _, _) = self.spectral(a);
        t.powf(self.q / self.p)
    }

    /// `W = H^{1/2} A G^{-1/2}`.
    /// `(sum lambda^{p/2}, W, eigen)` for the smaller of `W^T W`, `W W^T`.
    fn spectral(
        &self,
        a: &[f64],
    ) -> (
        f64,
        DMatrix<f64>,
        nalgebra::SymmetricEigen<f64, nalgebra::Dyn>,
    ) {
        let am = DMatrix::from_row_slice(self.n, self.m, a);
        let w = &self.h_sqrt * am * &self.g_inv_sqrt;
        let gram = if self.n < self.m {
            &w * w.transpose()
        } else {
            w.transpose() * &w
        };
        let eig = gram.symmetric_eigen();
        let t = eig
            .eigenvalues
            .iter()
            .map(|&l| l.max(0.0).powf(self.p / 2.0))
            .sum();
        (t, w, eig)
    }

    fn value_and_gradient(&self, a: &[f64], grad: &mut [f64]) -> f64 {
        let (n, m) = (self.n, self.m);
        if self.p == 2.0 {
            let (ha, ag) = self.sandwich(a);
            let s: f64 = ha.iter().zip(&ag).map(|(x, y)| x * y).sum::<f64>().max(0.0);
            // d|A|^2 = 2 <H A G^{-1}, dA>.
            let (value, factor) = if self.q == 2.0 {
                (s, 2.0)
            } else if s > 0.0 {
                (s.powf(self.q / 2.0), self.q * s.powf(self.q / 2.0 - 1.0))
            } else {
                (0.0, 0.0)
            };
            let hag = {
                let mut out = vec![0.0; n * m];
                for j in 0..n {
                    for d in 0..m {
                        let mut s = 0.0;
                        for l in 0..n {
                            s += self.h[j * n + l] * ag[l * m + d];
                        }
                        out[j * m + d] = s;
                    }
                }
                out
            };
            for (g, v) in grad.iter_mut().zip(hag) {
                *g = factor * v;
            }
            return value;
        }
        let (t, w, eig) = self.spectral(a);
        let value = t.powf(self.q / self.p);
        if t <= 0.0 {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return value;
        }
        let top = eig.eigenvalues.max().max(0.0);
        let floor = SPECTRUM_CLAMP * top.max(f64::MIN_POSITIVE);
        let d = eig.eigenvalues.map(|l| {
            if l > floor {
                l.powf(self.p / 2.0 - 1.0)
            } else {
                0.0
            }
        });
        let s_pow = &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose();
        let factor = self.q * t.powf(self.q / self.p - 1.0);
        let dw = if self.n < self.m {
            s_pow * w
        } else {
            w * s_pow
        };
        let ga = &self.h_sqrt * dw * &self.g_inv_sqrt * factor;
        for j in 0..n {
            for e in 0..m {
                grad[j * m + e] = ga[(j, e)];
            }
        }
        value
    }
}

/// `||P||^2 = tr(P^T G^{-1} P H)` with `P = Q^T`.
pub fn p_norm_squared(spec: &TorusMapSpec) -> f64 {
    pairing(spec, &spec.q).expect("class matrix has the differential's shape")
}

/// `<P, A> = tr(Q G^{-1} A^T H)` for a differential `A` (`n x m`).
pub fn pairing(spec: &TorusMapSpec, a: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != (spec.n, spec.m) {
        return Err(CalibraError::mismatch(
            format!("{}x{} matrix", spec.n, spec.m),
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    Ok((&spec.q * spec.g.inverse() * a.transpose() * spec.h.matrix()).trace())
}

/// `|A|_2` in the metrics `(G, H)`.
fn metric_frobenius(spec: &TorusMapSpec, a: &DMatrix<f64>) -> Result<f64> {
    Ok((a * spec.g.inverse() * a.transpose() * spec.h.matrix())
        .trace()
        .max(0.0)
        .sqrt())
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Sigma1Report {
    pub trials: usize,
    pub p_norm: f64,
    /// Smallest `(||P|| |A| - <P, A>) / (1 + ||P|| |A|)`.
    pub min_margin: f64,
    pub failures: usize,
    /// `| ||P|| |dQ| - <P, Q> |` for the linear lift.
    pub witness_residual: f64,
    /// Margin for `A = -Q`; strictly positive.
    pub reversed_margin: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Samples Gaussian differentials and checks `<P, A> <= ||P|| |A|_2`.
pub fn sigma1_calibration_sweep(
    spec: &TorusMapSpec,
    trials: usize,
    seed: u64,
) -> Result<Sigma1Report> {
    let norm_sq = p_norm_squared(spec);
    if norm_sq == 0.0 {
        return Err(CalibraError::domain(
            "the class matrix is zero, so no calibration exists",
        ));
    }
    let p_norm = norm_sq.sqrt();
    let tol = 1e-10;
    let (n, m) = (spec.n, spec.m);
    let margins = sweep(trials, seed, |rng, _| -> Result<f64> {
        let a = crate::sampling::gaussian_matrix(rng, n, m);
        let rhs = p_norm * metric_frobenius(spec, &a)?;
        Ok((rhs - pairing(spec, &a)?) / (1.0 + rhs))
    });
    let mut min_margin = f64::INFINITY;
    let mut failures = 0;
    for margin in margins {
        let margin = margin?;
        min_margin = min_margin.min(margin);
        if margin < -tol {
            failures += 1;
        }
    }
    let lift = spec.q.clone();
    let witness_residual = (p_norm * metric_frobenius(spec, &lift)? - pairing(spec, &lift)?).abs();
    let reversed = -lift;
    let reversed_margin = p_norm * metric_frobenius(spec, &reversed)? - pairing(spec, &reversed)?;
    let pass =
        failures == 0 && witness_residual <= 1e-12 * (1.0 + norm_sq) && reversed_margin > 0.0;
    Ok(Sigma1Report {
        trials,
        p_norm,
        min_margin,
        failures,
        witness_residual,
        reversed_margin,
        tol,
        pass,
    })
}

/// `int sigma_{p,q}(df) vol_g` by the midpoint rule.
pub fn energy_quadrature(spec: &TorusMapSpec, p: f64, q: f64) -> Result<f64> {
    if spec.grid_n < 4 {
        return Err(CalibraError::domain(format!(
            "grid needs at least 4 points per axis, got {}",
            spec.grid_n
        )));
    }
    let density = Density::new(spec, p, q)?;
    Ok(Grid::new(spec).energy(&density, &spec.perturbation))
}

/// `|Q|_p^q sqrt(det G)`, the energy of the linear lift.
pub fn linear_energy(spec: &TorusMapSpec, p: f64, q: f64) -> Result<f64> {
    let l = LinearMapData::new(spec.q.clone(), spec.g.clone(), spec.h.clone())?;
    Ok(schatten_p(&l, p)?.powf(q) * spec.g.sqrt_det())
}

/// `int (1, f)^* Phi = int <P, df> vol_g` by quadrature.
pub fn calibration_integral(spec: &TorusMapSpec) -> f64 {
    let grid = Grid::new(spec);
    let (n, m) = (spec.n, spec.m);
    // <P, A> = <H Q G^{-1}, A>_F.
    let kernel = spec.h.matrix() * &spec.q * spec.g.inverse();
    let kernel: Vec<f64> = (0..n * m).map(|i| kernel[(i / m, i % m)]).collect();
    grid.integrate(&spec.perturbation, |a| {
        a.iter().zip(&kernel).map(|(x, y)| x * y).sum()
    })
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct InvarianceReport {
    pub trials: usize,
    /// `||P||^2 sqrt(det G)`.
    pub expected: f64,
    pub min_value: f64,
    pub max_value: f64,
    /// `max |value - expected|`.
    pub max_deviation: f64,
    pub spread: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Re-integrates `(1, f)^* Phi` for random bandlimited perturbations of the
/// linear lift.
pub fn homotopy_invariance_check(
    spec: &TorusMapSpec,
    trials: usize,
    seed: u64,
) -> Result<InvarianceReport> {
    if spec.grid_n < 4 {
        return Err(CalibraError::domain(
            "grid needs at least 4 points per axis",
        ));
    }
    let expected = p_norm_squared(spec) * spec.g.sqrt_det();
    let base = spec
        .clone()
        .with_perturbation(vec![0.0; spec.points * spec.n])?;
    let values = sweep(trials, seed, |rng, _| -> Result<f64> {
        let count = rng.random_range(1..=4);
        let modes = random_bandlimited(rng, spec.m, spec.n, spec.grid_n, count, 0.3);
        Ok(calibration_integral(
            &base.clone().with_fourier_perturbation(&modes)?,
        ))
    });
    let mut min_value = expected;
    let mut max_value = expected;
    for v in values {
        let v = v?;
        min_value = min_value.min(v);
        max_value = max_value.max(v);
    }
    let tol = 1e-8;
    let max_deviation = (max_value - expected)
        .abs()
        .max((min_value - expected).abs());
    Ok(InvarianceReport {
        trials,
        expected,
        min_value,
        max_value,
        max_deviation,
        spread: max_value - min_value,
        tol,
        pass: max_deviation <= tol,
    })
}

/// History of a descent run.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FlowTrace {
    pub iterations: usize,
    pub energy_history: Vec<f64>,
    pub final_energy: f64,
    /// Energy of the linear lift; the exact minimum when `p = q = 2`.
    pub target_energy: f64,
    /// Largest pointwise gradient density at exit.
    pub final_gradient: f64,
    pub final_sup_deviation: f64,
    pub converged: bool,
}

impl FlowTrace {
    /// `(final - target) / target`.
    pub fn relative_excess(&self) -> f64 {
        if self.target_energy == 0.0 {
            self.final_energy
        } else {
            (self.final_energy - self.target_energy) / self.target_energy
        }
    }

    /// Whether the history never increases by more than `1e-12` per step.
    pub fn is_monotone(&self) -> bool {
        self.energy_history.windows(2).all(|w| w[1] <= w[0] + 1e-12)
    }
}

/// Gradient descent with Armijo backtracking on the perturbation field.
/// Stops once the largest pointwise gradient density drops to
/// `tol * max(1, mean density)`. Returns the trace and the final map.
pub fn minimize_energy(
    spec: &TorusMapSpec,
    p: f64,
    q: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(FlowTrace, TorusMapSpec)> {
    if spec.grid_n < 4 {
        return Err(CalibraError::domain(
            "grid needs at least 4 points per axis",
        ));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(CalibraError::domain(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let density = Density::new(spec, p, q)?;
    let grid = Grid::new(spec);
    let target_energy = linear_energy(spec, p, q)?;
    let w = spec.weight();
    let volume = spec.g.sqrt_det();

    let mut u = spec.perturbation.clone();
    let (mut energy, mut grad) = grid.energy_and_gradient(&density, &u);
    let mut history = vec![energy];
    let mut step = 1.0 / (w * (spec.grid_n * spec.grid_n) as f64);
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_density = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs())) / w;

    while iterations < max_iter {
        if grad_density <= tol * (energy / volume).max(1.0) {
            converged = true;
            break;
        }
        let grad_sq: f64 = grad.iter().map(|g| g * g).sum();
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = u.iter().zip(&grad).map(|(x, g)| x - step * g).collect();
            let e = grid.energy(&density, &trial);
            if e <= energy - 1e-4 * step * grad_sq {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else { break };
        u = next;
        (energy, grad) = grid.energy_and_gradient(&density, &u);
        grad_density = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs())) / w;
        history.push(energy);
        iterations += 1;
        step *= 2.0;
    }
    if !converged && grad_density <= tol * (energy / volume).max(1.0) {
        converged = true;
    }
    let result = spec.clone().with_perturbation(u)?;
    let trace = FlowTrace {
        iterations,
        energy_history: history,
        final_energy: energy,
        target_energy,
        final_gradient: grad_density,
        final_sup_deviation: result.perturbation_sup_deviation(),
        converged,
    };
    Ok((trace, result))
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CohomologyBound {
    pub k: usize,
    /// Smallest eigenvalue of the Gram matrix of the harmonic basis.
    pub lambda: f64,
    /// `sqrt(sum C_ij^2)`.
    pub constant_norm: f64,
    /// Frobenius norm of the degree-`k` pullback matrix.
    pub pullback_norm: f64,
    pub bound: f64,
    /// `int |df|^k` for the perturbed map in `spec`.
    pub linear_energy: f64,
    /// `bound / linearEnergy` (0 when both vanish).
    pub ratio: f64,
}

/// The lower bound `E_k(f) >= lambda (sum C_ij^2)^{-1/2} |P^{(k)}|` with
/// harmonic basis `dx^I`, bounded basis `dy^J` and the pointwise constant
/// `C_ij = k! C(m,k) C(n,k) |dx^I|_g |dy^J|_h`.
pub fn cohomology_bound(spec: &TorusMapSpec, k: usize) -> Result<CohomologyBound> {
    let (m, n) = (spec.m, spec.n);
    if k == 0 || k > m {
        return Err(CalibraError::domain(format!("degree {k} outside 1..={m}")));
    }
    let src: Vec<KForm> = basis_masks(m, k)
        .into_iter()
        .map(|mask| KForm::basis(m, &one_based(mask)))
        .collect::<Result<_>>()?;
    let volume = spec.g.sqrt_det();
    let mut gram = DMatrix::zeros(src.len(), src.len());
    for (i, a) in src.iter().enumerate() {
        for (j, b) in src.iter().enumerate() {
            gram[(i, j)] = a.inner(b, &spec.g)? * volume;
        }
    }
    let lambda = gram.clone().symmetric_eigen().eigenvalues.min();

    let pullback = if k <= n {
        compound_matrix(&spec.cohomology_matrix(), k)?
    } else {
        DMatrix::zeros(src.len(), 0)
    };
    let pullback_norm = pullback.norm();

    let lemma_constant = factorial(k) * binomial(m, k) as f64 * binomial(n, k) as f64;
    let src_norms: Vec<f64> = src
        .iter()
        .map(|a| a.inner(a, &spec.g).map(f64::sqrt))
        .collect::<Result<_>>()?;
    let tgt_norms: Vec<f64> = if k <= n {
        basis_masks(n, k)
            .into_iter()
            .map(|mask| {
                let b = KForm::basis(n, &one_based(mask))?;
                b.inner(&b, &spec.h).map(f64::sqrt)
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let c_sq: f64 = src_norms
        .iter()
        .flat_map(|a| {
            tgt_norms
                .iter()
                .map(move |b| (lemma_constant * a * b).powi(2))
        })
        .sum();
    let constant_norm = c_sq.sqrt();
    let bound = if pullback_norm == 0.0 {
        0.0
    } else {
        lambda * pullback_norm / constant_norm
    };
    let linear_energy = energy_quadrature(spec, 2.0, k as f64)?;
    let ratio = if linear_energy > 0.0 {
        bound / linear_energy
    } else {
        0.0
    };
    Ok(CohomologyBound {
        k,
        lambda,
        constant_norm,
        pullback_norm,
        bound,
        linear_energy,
        ratio,
    })
}

fn one_based(mask: u32) -> Vec<usize> {
    mask_positions(mask).into_iter().map(|i| i + 1).collect()
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct IntersectionEstimate {
    pub samples: usize,
    pub i_f: f64,
    pub j_f: f64,
    pub i_f_std_error: f64,
    pub j_f_std_error: f64,
    pub closed_form_j_f: f64,
    /// `mu_g(T^m) = sqrt(det G)`.
    pub volume: f64,
    /// `V(S^{m-1})`.
    pub sphere_volume: f64,
    /// `E_2` of the linear lift.
    pub energy: f64,
}

impl IntersectionEstimate {
    /// `|jF - closed form|` in standard errors. The standard error is
    /// floored at `1e-12 max(1, |closed form|)`: when `|Qv|_h` is constant
    /// the sample variance is pure round-off.
    pub fn j_f_z_score(&self) -> f64 {
        let diff = (self.j_f - self.closed_form_j_f).abs();
        let floor = 1e-12 * self.closed_form_j_f.abs().max(1.0);
        diff / self.j_f_std_error.max(floor)
    }

    /// `jF >= iF^2 / (mu V)`; exact for the sample means.
    pub fn cauchy_schwarz_margin(&self) -> f64 {
        self.j_f - self.i_f * self.i_f / (self.volume * self.sphere_volume)
    }

    /// `E_2 mu V^2 - m iF^2`, relative to `E_2 mu V^2`.
    pub fn energy_margin(&self, m: usize) -> f64 {
        let lhs = self.energy * self.volume * self.sphere_volume.powi(2);
        let rhs = m as f64 * self.i_f * self.i_f;
        (lhs - rhs) / lhs.max(f64::MIN_POSITIVE)
    }

    /// Relative slack in [`Self::energy_margin`] allowed for the sampling
    /// error of `iF` (four standard errors).
    pub fn energy_margin_allowance(&self, m: usize) -> f64 {
        let lhs = self.energy * self.volume * self.sphere_volume.powi(2);
        let slack = m as f64 * (2.0 * self.i_f * 4.0 * self.i_f_std_error);
        slack / lhs.max(f64::MIN_POSITIVE) + 1e-12
    }
}

/// Monte-Carlo intersection invariants of the linear lift: `iF` and `jF`
/// integrate `|Qv|_h` and `|Qv|_h^2` over the unit tangent bundle.
pub fn intersection_estimate(
    spec: &TorusMapSpec,
    samples: usize,
    seed: u64,
) -> Result<IntersectionEstimate> {
    if samples < 2 {
        return Err(CalibraError::domain("need at least two samples"));
    }
    let m = spec.m;
    let volume = spec.g.sqrt_det();
    let sphere = sphere_volume(m);
    let mass = volume * sphere;
    let g_inv_sqrt = spec.g.inv_sqrt();
    let hq = spec.q.transpose() * spec.h.matrix() * &spec.q;
    let lengths = sweep(samples, seed, |rng, _| {
        let w = gaussian_vector(rng, m);
        let v = g_inv_sqrt * (&w / w.norm());
        (v.transpose() * &hq * &v)[(0, 0)].max(0.0)
    });
    let ns = samples as f64;
    let stats = |values: &[f64]| {
        let mean = pairwise_sum(values) / ns;
        let dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
        let var = pairwise_sum(&dev) / (ns - 1.0);
        (mass * mean, mass * (var / ns).sqrt())
    };
    let roots: Vec<f64> = lengths.iter().map(|v| v.sqrt()).collect();
    let (i_f, i_f_std_error) = stats(&roots);
    let (j_f, j_f_std_error) = stats(&lengths);
    let norm_sq = p_norm_squared(spec);
    Ok(IntersectionEstimate {
        samples,
        i_f,
        j_f,
        i_f_std_error,
        j_f_std_error,
        closed_form_j_f: sphere / m as f64 * norm_sq * volume,
        volume,
        sphere_volume: sphere,
        energy: norm_sq * volume,
    })
}

/// `f(x) = x + sin(2 pi x) / (2 pi)` on the circle: a calibrated map for
/// `sigma_1` that is not affine.
pub fn circle_counterexample(grid_n: usize) -> Result<TorusMapSpec> {
    let one = DMatrix::from_element(1, 1, 1.0);
    let two_pi = 2.0 * std::f64::consts::PI;
    let modes = [FourierMode {
        k: vec![1],
        cos: vec![0.0],
        sin: vec![1.0 / two_pi],
    }];
    TorusMapSpec::new(one.clone(), one.clone(), one, grid_n)?.with_fourier_perturbation(&modes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{block_rng, random_spd};
    use approx::assert_relative_eq;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    fn identity_spec(m: usize, grid_n: usize) -> TorusMapSpec {
        TorusMapSpec::new(
            DMatrix::identity(m, m),
            DMatrix::identity(m, m),
            DMatrix::identity(m, m),
            grid_n,
        )
        .unwrap()
    }

    #[test]
    fn spec_validation() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert!(
            TorusMapSpec::new(i2.clone(), i2.clone(), mat(2, 2, &[1.0, 0.5, 0.0, 1.0]), 8).is_err()
        );
        assert!(TorusMapSpec::new(i2.clone(), i2.clone(), DMatrix::zeros(1, 2), 8).is_err());
        assert!(TorusMapSpec::new(-i2.clone(), i2.clone(), i2.clone(), 8).is_err());
        let spec = TorusMapSpec::new(i2.clone(), i2.clone(), i2, 8).unwrap();
        assert!(spec.clone().with_perturbation(vec![0.0; 5]).is_err());
        assert_eq!(spec.grid_points(), 64);
    }

    #[test]
    fn p_norm_examples() {
        assert_eq!(p_norm_squared(&identity_spec(2, 4)), 2.0);
        let zero = TorusMapSpec::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            4,
        )
        .unwrap();
        assert_eq!(p_norm_squared(&zero), 0.0);
        let scalar =
            TorusMapSpec::new(mat(1, 1, &[4.0]), mat(1, 1, &[9.0]), mat(1, 1, &[2.0]), 4).unwrap();
        assert_relative_eq!(p_norm_squared(&scalar), 9.0, max_relative = 1e-15);
    }

    #[test]
    fn pairing_examples() {
        let spec = identity_spec(2, 4);
        assert_eq!(
            pairing(&spec, &mat(2, 2, &[1.0, 0.0, 0.0, -1.0])).unwrap(),
            0.0
        );
        assert!(pairing(&spec, &DMatrix::zeros(2, 3)).is_err());

        let mut rng = block_rng(3, 0);
        let g = random_spd(&mut rng, 2, 0.5, 0.5);
        let h = random_spd(&mut rng, 3, 0.5, 0.5);
        let q = mat(3, 2, &[1.0, 2.0, 0.0, -1.0, 3.0, 1.0]);
        let spec = TorusMapSpec::new(g, h, q.clone(), 4).unwrap();
        assert_relative_eq!(
            pairing(&spec, &q).unwrap(),
            p_norm_squared(&spec),
            max_relative = 1e-14
        );
        // Gram-Schmidt against P in the metric pairing.
        let a = crate::sampling::gaussian_matrix(&mut rng, 3, 2);
        let perp = &a - &q * (pairing(&spec, &a).unwrap() / p_norm_squared(&spec));
        assert!(pairing(&spec, &perp).unwrap().abs() < 1e-12);
    }

    #[test]
    fn sigma1_sweep_and_zero_class() {
        let mut rng = block_rng(5, 0);
        let g = random_spd(&mut rng, 2, 0.5, 0.5);
        let h = random_spd(&mut rng, 2, 0.5, 0.5);
        let spec = TorusMapSpec::new(g, h, mat(2, 2, &[1.0, 1.0, 0.0, 1.0]), 4).unwrap();
        let report = sigma1_calibration_sweep(&spec, 5000, 1).unwrap();
        assert!(report.pass, "{report:?}");
        assert!(report.reversed_margin > 0.0);
        let zero = TorusMapSpec::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            4,
        )
        .unwrap();
        assert!(matches!(
            sigma1_calibration_sweep(&zero, 10, 1),
            Err(CalibraError::Domain(_))
        ));
    }

    #[test]
    fn quadrature_examples() {
        assert_eq!(
            energy_quadrature(&identity_spec(2, 8), 2.0, 2.0).unwrap(),
            2.0
        );
        let zero = TorusMapSpec::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            8,
        )
        .unwrap();
        assert_eq!(energy_quadrature(&zero, 2.0, 2.0).unwrap(), 0.0);
        let circle = circle_counterexample(64).unwrap();
        assert!((energy_quadrature(&circle, 1.0, 1.0).unwrap() - 1.0).abs() <= 1e-10);
        assert!(energy_quadrature(&identity_spec(2, 8), 0.0, 2.0).is_err());
        assert!(energy_quadrature(&identity_spec(2, 3), 2.0, 2.0).is_err());
    }

    #[test]
    fn density_matches_energy_module() {
        let mut rng = block_rng(8, 0);
        let g = random_spd(&mut rng, 3, 0.5, 0.5);
        let h = random_spd(&mut rng, 2, 0.5, 0.5);
        let spec = TorusMapSpec::new(g.clone(), h.clone(), DMatrix::zeros(2, 3), 4).unwrap();
        for (p, q) in [(2.0, 2.0), (2.0, 1.0), (1.0, 1.0), (3.0, 2.0), (4.0, 4.0)] {
            let density = Density::new(&spec, p, q).unwrap();
            let a = crate::sampling::gaussian_matrix(&mut rng, 2, 3);
            let flat: Vec<f64> = (0..6).map(|i| a[(i / 3, i % 3)]).collect();
            let l = LinearMapData::new(a.clone(), spec.g.clone(), spec.h.clone()).unwrap();
            let expected = crate::energy::sigma_pq(&l, p, q).unwrap();
            assert_relative_eq!(density.value(&flat), expected, max_relative = 1e-10);
            // Central differences of the density against the analytic gradient.
            let mut grad = vec![0.0; 6];
            density.value_and_gradient(&flat, &mut grad);
            for i in 0..6 {
                let mut plus = flat.clone();
                let mut minus = flat.clone();
                plus[i] += 1e-6;
                minus[i] -= 1e-6;
                let fd = (density.value(&plus) - density.value(&minus)) / 2e-6;
                assert!(
                    (fd - grad[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "p={p} q={q} i={i}: {fd} vs {}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn grid_gradient_matches_finite_differences() {
        let mut rng = block_rng(12, 0);
        let g = random_spd(&mut rng, 2, 0.4, 0.6);
        let h = random_spd(&mut rng, 2, 0.4, 0.6);
        let modes = random_bandlimited(&mut rng, 2, 2, 8, 3, 0.1);
        let spec = TorusMapSpec::new(g, h, mat(2, 2, &[1.0, 1.0, 0.0, 1.0]), 8)
            .unwrap()
            .with_fourier_perturbation(&modes)
            .unwrap();
        for (p, q) in [(2.0, 2.0), (3.0, 1.5)] {
            let density = Density::new(&spec, p, q).unwrap();
            let grid = Grid::new(&spec);
            let (e, grad) = grid.energy_and_gradient(&density, spec.perturbation());
            assert_relative_eq!(
                e,
                grid.energy(&density, spec.perturbation()),
                max_relative = 1e-14
            );
            for i in [0, 5, 17, 64, 127] {
                let mut plus = spec.perturbation().to_vec();
                let mut minus = plus.clone();
                plus[i] += 1e-6;
                minus[i] -= 1e-6;
                let fd = (grid.energy(&density, &plus) - grid.energy(&density, &minus)) / 2e-6;
                assert!(
                    (fd - grad[i]).abs() <= 1e-7 * (1.0 + fd.abs()),
                    "{fd} vs {}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn invariance_single_mode_and_zero() {
        let spec = identity_spec(2, 16);
        assert_eq!(calibration_integral(&spec), 2.0);
        let mode = FourierMode {
            k: vec![1, 2],
            cos: vec![0.2, -0.1],
            sin: vec![0.05, 0.3],
        };
        let moved = spec.clone().with_fourier_perturbation(&[mode]).unwrap();
        assert!((calibration_integral(&moved) - 2.0).abs() <= 1e-10);
        let report = homotopy_invariance_check(&spec, 20, 2).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn minimize_from_linear_lift_is_immediate() {
        let (trace, _) = minimize_energy(&identity_spec(2, 8), 2.0, 2.0, 1e-8, 100).unwrap();
        assert_eq!(trace.iterations, 0);
        assert!(trace.converged);
        assert_eq!(trace.final_energy, 2.0);
    }

    #[test]
    fn minimize_circle_map() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let mode = FourierMode {
            k: vec![1],
            cos: vec![0.0],
            sin: vec![0.3],
        };
        let spec = TorusMapSpec::new(one.clone(), one.clone(), one, 64)
            .unwrap()
            .with_fourier_perturbation(&[mode])
            .unwrap();
        let (trace, result) = minimize_energy(&spec, 2.0, 2.0, 1e-6, 20_000).unwrap();
        assert!(trace.converged, "{:?}", trace.final_gradient);
        assert!(trace.is_monotone());
        assert!((trace.final_energy - 1.0).abs() < 1e-10);
        assert!(result.perturbation_sup_deviation() < 1e-6);
    }

    #[test]
    fn cohomology_bound_examples() {
        let b = cohomology_bound(&identity_spec(3, 4), 1).unwrap();
        assert!(b.bound > 0.0 && b.bound <= b.linear_energy, "{b:?}");
        assert_relative_eq!(b.linear_energy, 3f64.sqrt(), max_relative = 1e-14);

        let zero = TorusMapSpec::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            4,
        )
        .unwrap();
        assert_eq!(cohomology_bound(&zero, 1).unwrap().bound, 0.0);

        let diag = TorusMapSpec::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            mat(2, 2, &[1.0, 0.0, 0.0, 2.0]),
            4,
        )
        .unwrap();
        let b = cohomology_bound(&diag, 2).unwrap();
        assert_relative_eq!(b.pullback_norm, 2.0, max_relative = 1e-15);
        assert!(b.bound > 0.0 && b.bound <= b.linear_energy);
        assert!(cohomology_bound(&diag, 3).is_err());
        assert!(cohomology_bound(&diag, 0).is_err());
    }

    #[test]
    fn intersection_examples() {
        let circle =
            TorusMapSpec::new(mat(1, 1, &[1.0]), mat(1, 1, &[1.0]), mat(1, 1, &[1.0]), 4).unwrap();
        let est = intersection_estimate(&circle, 1000, 1).unwrap();
        assert_relative_eq!(est.j_f, 2.0, max_relative = 1e-14);
        assert_relative_eq!(est.energy, 1.0);
        assert_relative_eq!(est.energy, est.j_f / 2.0, max_relative = 1e-14);

        // Constant length on a skewed circle: the variance is round-off only.
        let skewed =
            TorusMapSpec::new(mat(1, 1, &[1.7]), mat(1, 1, &[0.3]), mat(1, 1, &[-2.0]), 4).unwrap();
        let est = intersection_estimate(&skewed, 100_000, 5).unwrap();
        assert!(est.j_f_z_score() <= 4.0, "{est:?}");

        let est = intersection_estimate(&identity_spec(2, 4), 1000, 1).unwrap();
        assert_relative_eq!(
            est.closed_form_j_f,
            2.0 * std::f64::consts::PI,
            max_relative = 1e-14
        );
        assert!(est.j_f_z_score() <= 4.0);

        let zero = TorusMapSpec::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            4,
        )
        .unwrap();
        let est = intersection_estimate(&zero, 100, 1).unwrap();
        assert_eq!((est.i_f, est.j_f), (0.0, 0.0));
    }
}
