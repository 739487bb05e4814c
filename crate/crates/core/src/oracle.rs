//! Brute-force reference evaluations used to cross-check the fast paths.
//!
//! Nothing here touches minors, compound matrices or the Hodge star of
//! [`crate::exterior`]: determinants are Leibniz sums over permutations and
//! forms are evaluated on explicit vectors.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::exterior::{multi_index_basis, KForm};
use crate::linalg::binomial;
use crate::sampling::{gaussian_matrix, gaussian_vector, sweep};
use crate::verify::{evaluate_mixed, MixedForm};

/// Sign of a permutation of `0..len`, by counting inversions.
pub fn permutation_sign(perm: &[usize]) -> f64 {
    let mut inversions = 0;
    for i in 0..perm.len() {
        for j in i + 1..perm.len() {
            if perm[i] > perm[j] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// `det` of the square matrix whose `(r, c)` entry is `entry(r, c)`, as a
/// sum over all `k!` permutations.
pub fn leibniz_det(k: usize, entry: impl Fn(usize, usize) -> f64) -> f64 {
    permutations(k)
        .iter()
        .map(|p| permutation_sign(p) * (0..k).map(|r| entry(r, p[r])).product::<f64>())
        .sum()
}

/// `e^{i_1} ^ ... ^ e^{i_k}(v_1, ..., v_k)` for an arbitrary ordered list of
/// 0-based coordinates and vectors given as columns.
fn decomposable(indices: &[usize], vectors: &DMatrix<f64>) -> f64 {
    leibniz_det(indices.len(), |r, c| vectors[(indices[r], c)])
}

/// Complement of a sorted 0-based index set in `0..m`, and the sign of
/// `(I, I^c)` as a permutation.
fn complement_sign(index: &[usize], m: usize) -> (Vec<usize>, f64) {
    let rest: Vec<usize> = (0..m).filter(|i| !index.contains(i)).collect();
    let joined: Vec<usize> = index.iter().chain(&rest).copied().collect();
    (rest, permutation_sign(&joined))
}

/// Evaluates `sum Phi_{IJ} e'^J ^ *e^I` on the graph frame
/// `(e_i, A e_i)_{i=1..m}` of `R^m x R^n`, term by term.
pub fn mixed_on_graph(phi: &MixedForm, a: &DMatrix<f64>) -> Result<f64> {
    let (m, n, k) = (phi.source_dim(), phi.target_dim(), phi.degree());
    let mut frame = DMatrix::zeros(m + n, m);
    for i in 0..m {
        frame[(i, i)] = 1.0;
        for j in 0..n {
            frame[(m + j, i)] = a[(j, i)];
        }
    }
    let src = multi_index_basis(m, k)?;
    let tgt = multi_index_basis(n, k)?;
    let mut total = 0.0;
    for (r, i_idx) in src.iter().enumerate() {
        let i0: Vec<usize> = i_idx.entries().iter().map(|i| i - 1).collect();
        let (rest, sign) = complement_sign(&i0, m);
        for (c, j_idx) in tgt.iter().enumerate() {
            let coeff = phi.coeffs()[(r, c)];
            if coeff == 0.0 {
                continue;
            }
            let indices: Vec<usize> = j_idx
                .entries()
                .iter()
                .map(|j| m + j - 1)
                .chain(rest.iter().copied())
                .collect();
            total += coeff * sign * decomposable(&indices, &frame);
        }
    }
    Ok(total)
}

/// Coefficients of `A^* beta` on the basis of `Lambda^k (R^m)^*`, computed
/// as `beta(A e_{i_1}, ..., A e_{i_k})` for each basis tuple.
pub fn pullback_by_evaluation(beta: &KForm, a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (n, k) = (beta.dim(), beta.degree());
    let m = a.ncols();
    let terms: Vec<(Vec<usize>, f64)> = beta
        .terms()
        .into_iter()
        .map(|(idx, c)| (idx.entries().iter().map(|i| i - 1).collect(), c))
        .collect();
    debug_assert_eq!(a.nrows(), n);
    multi_index_basis(m, k)?
        .iter()
        .map(|idx| {
            let cols: Vec<usize> = idx.entries().iter().map(|i| i - 1).collect();
            let images = DMatrix::from_fn(n, k, |r, c| a[(r, cols[c])]);
            Ok(terms
                .iter()
                .map(|(t, c)| c * decomposable(t, &images))
                .sum())
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct OracleReport {
    pub trials: usize,
    /// Largest `|fast - oracle| / max(1, |oracle|)` for mixed forms.
    pub mixed_max_error: f64,
    /// Same for pullback coefficients.
    pub pullback_max_error: f64,
    pub tol: f64,
    pub pass: bool,
}

fn rel_err(fast: f64, oracle: f64) -> f64 {
    (fast - oracle).abs() / oracle.abs().max(1.0)
}

/// Random instances with `m, n <= 5`, `k <= 3`, compared against the
/// brute-force evaluations above.
pub fn oracle_equivalence(trials: usize, seed: u64) -> Result<OracleReport> {
    let errors = sweep(trials, seed, |rng, _| -> Result<(f64, f64)> {
        let m = rng.random_range(1..=5);
        let n = rng.random_range(1..=5);
        let k = rng.random_range(1..=m.min(n).min(3));
        let coeffs = gaussian_matrix(rng, binomial(m, k), binomial(n, k));
        let phi = MixedForm::new(m, n, k, coeffs)?;
        let a = gaussian_matrix(rng, n, m);
        let mixed = rel_err(evaluate_mixed(&phi, &a)?, mixed_on_graph(&phi, &a)?);

        let beta = KForm::from_coeffs(
            n,
            k,
            gaussian_vector(rng, binomial(n, k)).as_slice().to_vec(),
        )?;
        let fast = beta.pullback(&a)?;
        let slow = pullback_by_evaluation(&beta, &a)?;
        let pull = fast
            .coeffs()
            .iter()
            .zip(&slow)
            .map(|(&f, &s)| rel_err(f, s))
            .fold(0.0, f64::max);
        Ok((mixed, pull))
    });
    let mut mixed_max_error: f64 = 0.0;
    let mut pullback_max_error: f64 = 0.0;
    for e in errors {
        let (a, b) = e?;
        mixed_max_error = mixed_max_error.max(a);
        pullback_max_error = pullback_max_error.max(b);
    }
    let tol = 1e-10;
    Ok(OracleReport {
        trials,
        mixed_max_error,
        pullback_max_error,
        tol,
        pass: mixed_max_error <= tol && pullback_max_error <= tol,
    })
}
