//! Constant-coefficient exterior algebra on `R^m`.
//!
//! A degree-`k` form is stored densely over the basis `e^I`, where `I` runs
//! over the strictly increasing `k`-tuples of `{1, ..., m}` in lexicographic
//! order. Internally a multi-index is a bitmask; the public [`MultiIndex`]
//! type is 1-based.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CalibraError, Result};
use crate::linalg::{binomial, check_spd, minor, spd_power};

/// Largest ambient dimension supported by the bitmask representation.
pub const MAX_DIM: usize = 30;

/// A strictly increasing tuple of 1-based coordinate indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    /// Validates strict increase and the range `[1, m]`.
    pub fn new(entries: Vec<usize>, m: usize) -> Result<Self> {
        if entries.iter().any(|&i| i == 0 || i > m) {
            return Err(CalibraError::domain(format!(
                "multi-index {entries:?} has entries outside [1, {m}]"
            )));
        }
        if entries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CalibraError::domain(format!(
                "multi-index {entries:?} is not strictly increasing"
            )));
        }
        Ok(MultiIndex(entries))
    }

    pub fn entries(&self) -> &[usize] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub(crate) fn from_mask(mask: u32) -> Self {
        MultiIndex(mask_positions(mask).into_iter().map(|p| p + 1).collect())
    }

    pub(crate) fn mask(&self) -> u32 {
        self.0.iter().fold(0, |acc, &i| acc | (1 << (i - 1)))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (p, i) in self.0.iter().enumerate() {
            if p > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, ")")
    }
}

fn check_degree(m: usize, k: usize) -> Result<()> {
    if m > MAX_DIM {
        return Err(CalibraError::domain(format!(
            "ambient dimension {m} exceeds the supported maximum {MAX_DIM}"
        )));
    }
    if k > m {
        return Err(CalibraError::domain(format!(
            "degree {k} exceeds dimension {m}"
        )));
    }
    Ok(())
}

/// All `C(m, k)` basis multi-indices of `Lambda^k (R^m)^*`, lexicographically.
pub fn multi_index_basis(m: usize, k: usize) -> Result<Vec<MultiIndex>> {
    check_degree(m, k)?;
    Ok(basis_masks(m, k)
        .into_iter()
        .map(MultiIndex::from_mask)
        .collect())
}

/// Lexicographically ordered bitmasks of the `k`-subsets of `{0, ..., m-1}`.
pub(crate) fn basis_masks(m: usize, k: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(binomial(m, k));
    let mut current = Vec::with_capacity(k);
    fn rec(start: usize, m: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<u32>) {
        if current.len() == k {
            out.push(current.iter().fold(0u32, |acc, &p| acc | (1 << p)));
            return;
        }
        let remaining = k - current.len();
        for p in start..=(m - remaining) {
            current.push(p);
            rec(p + 1, m, k, current, out);
            current.pop();
        }
    }
    rec(0, m, k, &mut current, &mut out);
    out
}

/// Position of a mask in [`basis_masks`] order.
pub(crate) fn mask_rank(mask: u32, m: usize) -> usize {
    let k = mask.count_ones() as usize;
    let mut rank = 0;
    let mut prev: isize = -1;
    for (i, c) in mask_positions(mask).into_iter().enumerate() {
        for j in (prev + 1) as usize..c {
            rank += binomial(m - 1 - j, k - 1 - i);
        }
        prev = c as isize;
    }
    rank
}

pub(crate) fn mask_positions(mask: u32) -> Vec<usize> {
    (0..32).filter(|p| mask & (1 << p) != 0).collect()
}

/// Sign of `e_a ^ e_b` relative to `e_{a|b}` for disjoint masks.
pub(crate) fn merge_sign(a: u32, b: u32) -> f64 {
    let mut inversions = 0u32;
    let mut rest = b;
    while rest != 0 {
        let j = rest.trailing_zeros();
        inversions += (a >> (j + 1)).count_ones();
        rest &= rest - 1;
    }
    if inversions.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Orientation of the volume form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    Positive,
    Negative,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Positive => 1.0,
            Orientation::Negative => -1.0,
        }
    }
}

/// A constant Riemannian metric on `R^m` with an orientation.
#[derive(Clone, Debug, PartialEq)]
pub struct Metric {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    g_sqrt: DMatrix<f64>,
    g_inv_sqrt: DMatrix<f64>,
    sqrt_det: f64,
    orientation: Orientation,
    identity: bool,
}

impl Metric {
    pub fn new(g: DMatrix<f64>, orientation: Orientation) -> Result<Self> {
        check_spd(&g, "metric")?;
        let chol = g
            .clone()
            .cholesky()
            .ok_or_else(|| CalibraError::InvalidMetric("Cholesky factorization failed".into()))?;
        let g_inv = chol.inverse();
        let sqrt_det = chol.l().diagonal().product();
        let identity = g == DMatrix::identity(g.nrows(), g.nrows());
        let g_sqrt = spd_power(&g, 0.5);
        let g_inv_sqrt = spd_power(&g, -0.5);
        Ok(Metric {
            g,
            g_inv,
            g_sqrt,
            g_inv_sqrt,
            sqrt_det,
            orientation,
            identity,
        })
    }

    pub fn euclidean(m: usize) -> Self {
        Metric {
            g: DMatrix::identity(m, m),
            g_inv: DMatrix::identity(m, m),
            g_sqrt: DMatrix::identity(m, m),
            g_inv_sqrt: DMatrix::identity(m, m),
            sqrt_det: 1.0,
            orientation: Orientation::Positive,
            identity: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.g_inv
    }

    /// `G^{1/2}`, the map from `g`-coordinates to an orthonormal frame.
    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.g_sqrt
    }

    /// `G^{-1/2}`.
    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.g_inv_sqrt
    }

    pub fn sqrt_det(&self) -> f64 {
        self.sqrt_det
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn is_euclidean(&self) -> bool {
        self.identity
    }

    /// The Riemannian volume form `orientation * sqrt(det G) * e^{1...m}`.
    pub fn volume_form(&self) -> KForm {
        let m = self.dim();
        let mut vol = KForm::zero(m, m).expect("degree m is always valid");
        vol.coeffs[0] = self.orientation.sign() * self.sqrt_det;
        vol
    }

    /// Lowers an index: `u -> G u`.
    pub fn flat(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.g * u
    }
}

/// A constant-coefficient alternating `k`-form on `R^m`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KForm {
    m: usize,
    k: usize,
    coeffs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawKForm {
    m: usize,
    k: usize,
    coeffs: Vec<f64>,
}

impl<'de> Deserialize<'de> for KForm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawKForm::deserialize(d)?;
        KForm::from_coeffs(raw.m, raw.k, raw.coeffs).map_err(serde::de::Error::custom)
    }
}

impl KForm {
    pub fn zero(m: usize, k: usize) -> Result<Self> {
        check_degree(m, k)?;
        Ok(KForm {
            m,
            k,
            coeffs: vec![0.0; binomial(m, k)],
        })
    }

    pub fn from_coeffs(m: usize, k: usize, coeffs: Vec<f64>) -> Result<Self> {
        check_degree(m, k)?;
        let expected = binomial(m, k);
        if coeffs.len() != expected {
            return Err(CalibraError::mismatch(
                format!("{expected} coefficients for degree {k} in dimension {m}"),
                coeffs.len(),
            ));
        }
        Ok(KForm { m, k, coeffs })
    }

    /// The constant form `c`.
    pub fn scalar(m: usize, c: f64) -> Self {
        KForm {
            m,
            k: 0,
            coeffs: vec![c],
        }
    }

    /// The basis 1-form `e^i` (1-based).
    pub fn covector(m: usize, i: usize) -> Result<Self> {
        Self::basis(m, &[i])
    }

    /// The basis form `e^{i_1} ^ ... ^ e^{i_k}`.
    pub fn basis(m: usize, index: &[usize]) -> Result<Self> {
        Self::from_terms(m, index.len(), &[(index, 1.0)])
    }

    /// Sums signed basis terms. Indices are 1-based and need not be sorted;
    /// unsorted terms pick up the sign of the sorting permutation, and terms
    /// with a repeated index vanish.
    pub fn from_terms(m: usize, k: usize, terms: &[(&[usize], f64)]) -> Result<Self> {
        let mut form = KForm::zero(m, k)?;
        for (index, c) in terms {
            if index.len() != k {
                return Err(CalibraError::mismatch(
                    format!("degree {k} term"),
                    index.len(),
                ));
            }
            if index.iter().any(|&i| i == 0 || i > m) {
                return Err(CalibraError::domain(format!(
                    "term {index:?} has entries outside [1, {m}]"
                )));
            }
            let mut sorted = index.to_vec();
            let mut sign = 1.0;
            // Bubble sort keeps track of the permutation parity.
            for a in 0..sorted.len() {
                for b in 0..sorted.len() - 1 - a {
                    if sorted[b] > sorted[b + 1] {
                        sorted.swap(b, b + 1);
                        sign = -sign;
                    }
                }
            }
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                continue;
            }
            let mask = sorted.iter().fold(0u32, |acc, &i| acc | (1 << (i - 1)));
            form.coeffs[mask_rank(mask, m)] += sign * c;
        }
        Ok(form)
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of `e^I` for a sorted, 1-based `I`.
    pub fn get(&self, index: &MultiIndex) -> f64 {
        self.coeffs[mask_rank(index.mask(), self.m)]
    }

    /// Nonzero terms as (multi-index, coefficient) pairs.
    pub fn terms(&self) -> Vec<(MultiIndex, f64)> {
        basis_masks(self.m, self.k)
            .into_iter()
            .zip(&self.coeffs)
            .filter(|(_, &c)| c != 0.0)
            .map(|(mask, &c)| (MultiIndex::from_mask(mask), c))
            .collect()
    }

    /// Sum of squared coefficients (the Euclidean norm squared).
    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn scaled(&self, s: f64) -> KForm {
        KForm {
            m: self.m,
            k: self.k,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    fn check_same_space(&self, other: &KForm) -> Result<()> {
        if self.m != other.m || self.k != other.k {
            return Err(CalibraError::mismatch(
                format!("degree {} form on R^{}", self.k, self.m),
                format!("degree {} form on R^{}", other.k, other.m),
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &KForm) -> Result<KForm> {
        self.check_same_space(other)?;
        Ok(KForm {
            m: self.m,
            k: self.k,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &KForm) -> Result<KForm> {
        self.add(&other.scaled(-1.0))
    }

    /// Largest absolute coefficient difference.
    pub fn max_abs_diff(&self, other: &KForm) -> Result<f64> {
        self.check_same_space(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Re-embeds the form into `R^{new_m}`, sending coordinate `i` to
    /// `i + offset`.
    pub fn embed(&self, new_m: usize, offset: usize) -> Result<KForm> {
        if self.m + offset > new_m {
            return Err(CalibraError::domain(format!(
                "cannot embed R^{} at offset {offset} into R^{new_m}",
                self.m
            )));
        }
        let mut out = KForm::zero(new_m, self.k)?;
        for (mask, &c) in basis_masks(self.m, self.k).iter().zip(&self.coeffs) {
            if c != 0.0 {
                out.coeffs[mask_rank(mask << offset, new_m)] += c;
            }
        }
        Ok(out)
    }

    /// Exterior product.
    pub fn wedge(&self, other: &KForm) -> Result<KForm> {
        if self.m != other.m {
            return Err(CalibraError::mismatch(
                format!("forms on R^{}", self.m),
                format!("R^{}", other.m),
            ));
        }
        let degree = self.k + other.k;
        if degree > self.m {
            return Err(CalibraError::domain(format!(
                "wedge of degrees {} and {} exceeds dimension {}",
                self.k, other.k, self.m
            )));
        }
        let mut out = KForm::zero(self.m, degree)?;
        let left = basis_masks(self.m, self.k);
        let right = basis_masks(self.m, other.k);
        for (&a, &ca) in left.iter().zip(&self.coeffs) {
            if ca == 0.0 {
                continue;
            }
            for (&b, &cb) in right.iter().zip(&other.coeffs) {
                if cb == 0.0 || a & b != 0 {
                    continue;
                }
                out.coeffs[mask_rank(a | b, self.m)] += merge_sign(a, b) * ca * cb;
            }
        }
        Ok(out)
    }

    /// `p`-fold exterior power; `p = 0` gives the constant 1.
    pub fn power(&self, p: usize) -> Result<KForm> {
        let mut acc = KForm::scalar(self.m, 1.0);
        for _ in 0..p {
            acc = acc.wedge(self)?;
        }
        Ok(acc)
    }

    /// Interior product `iota_u`: `(iota_u a)(v_2, ...) = a(u, v_2, ...)`.
    pub fn interior(&self, u: &[f64]) -> Result<KForm> {
        if self.k == 0 {
            return Err(CalibraError::domain("interior product of a 0-form"));
        }
        if u.len() != self.m {
            return Err(CalibraError::mismatch(
                format!("vector of length {}", self.m),
                u.len(),
            ));
        }
        let mut out = KForm::zero(self.m, self.k - 1)?;
        for (mask, &c) in basis_masks(self.m, self.k).iter().zip(&self.coeffs) {
            if c == 0.0 {
                continue;
            }
            for (p, pos) in mask_positions(*mask).into_iter().enumerate() {
                let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
                out.coeffs[mask_rank(mask & !(1 << pos), self.m)] += sign * c * u[pos];
            }
        }
        Ok(out)
    }

    /// Metric inner product on `Lambda^k`, whose Gram matrix on the basis is
    /// the `k`-th compound of `G^{-1}`.
    pub fn inner(&self, other: &KForm, metric: &Metric) -> Result<f64> {
        self.check_same_space(other)?;
        check_metric_dim(metric, self.m)?;
        if metric.is_euclidean() {
            return Ok(self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a * b)
                .sum());
        }
        let raised = compound_apply(metric.inverse(), self.k, &other.coeffs);
        Ok(self.coeffs.iter().zip(&raised).map(|(a, b)| a * b).sum())
    }

    /// Hodge star, characterised by `b ^ *a = <b, a> vol_g` for every `b`.
    pub fn hodge_star(&self, metric: &Metric) -> Result<KForm> {
        check_metric_dim(metric, self.m)?;
        let m = self.m;
        let full: u32 = (1u32 << m) - 1;
        let raised = if metric.is_euclidean() {
            self.coeffs.clone()
        } else {
            compound_apply(metric.inverse(), self.k, &self.coeffs)
        };
        let scale = metric.orientation().sign() * metric.sqrt_det();
        let mut out = KForm::zero(m, m - self.k)?;
        for (&mask, &c) in basis_masks(m, self.k).iter().zip(&raised) {
            if c == 0.0 {
                continue;
            }
            let comp = full & !mask;
            out.coeffs[mask_rank(comp, m)] += merge_sign(mask, comp) * scale * c;
        }
        Ok(out)
    }

    /// Pullback along the linear map `a: R^m -> R^n` (an `n x m` matrix) of
    /// a form on `R^n`: `(A^* b)_I = sum_J b_J det(A[J, I])`.
    pub fn pullback(&self, a: &DMatrix<f64>) -> Result<KForm> {
        if a.nrows() != self.m {
            return Err(CalibraError::mismatch(
                format!("matrix with {} rows", self.m),
                format!("{} rows", a.nrows()),
            ));
        }
        let src = a.ncols();
        if self.k > src {
            return Err(CalibraError::domain(format!(
                "cannot pull back a {}-form to R^{src}",
                self.k
            )));
        }
        let mut out = KForm::zero(src, self.k)?;
        let cols: Vec<Vec<usize>> = basis_masks(src, self.k)
            .into_iter()
            .map(mask_positions)
            .collect();
        for (&mask, &c) in basis_masks(self.m, self.k).iter().zip(&self.coeffs) {
            if c == 0.0 {
                continue;
            }
            let rows = mask_positions(mask);
            for (slot, col) in out.coeffs.iter_mut().zip(&cols) {
                *slot += c * minor(a, &rows, col);
            }
        }
        Ok(out)
    }

    /// Evaluates the form on `k` vectors given as the columns of an `m x k`
    /// matrix.
    pub fn evaluate(&self, vectors: &DMatrix<f64>) -> Result<f64> {
        if vectors.nrows() != self.m || vectors.ncols() != self.k {
            return Err(CalibraError::mismatch(
                format!("{}x{} frame", self.m, self.k),
                format!("{}x{}", vectors.nrows(), vectors.ncols()),
            ));
        }
        let cols: Vec<usize> = (0..self.k).collect();
        Ok(basis_masks(self.m, self.k)
            .iter()
            .zip(&self.coeffs)
            .filter(|(_, &c)| c != 0.0)
            .map(|(&mask, &c)| c * minor(vectors, &mask_positions(mask), &cols))
            .sum())
    }

    /// Coefficient of a top-degree form against `e^{1...m}`.
    pub fn top_coefficient(&self) -> Result<f64> {
        if self.k != self.m {
            return Err(CalibraError::domain(format!(
                "expected a top-degree form, got degree {} on R^{}",
                self.k, self.m
            )));
        }
        Ok(self.coeffs[0])
    }
}

fn check_metric_dim(metric: &Metric, m: usize) -> Result<()> {
    if metric.dim() != m {
        return Err(CalibraError::mismatch(
            format!("metric on R^{m}"),
            format!("R^{}", metric.dim()),
        ));
    }
    Ok(())
}

/// The `k`-th compound matrix: entry `(J, I)` is the minor of `a` with rows
/// `J` and columns `I`, both in lexicographic basis order.
pub fn compound_matrix(a: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let (n, m) = a.shape();
    if k > n.min(m) {
        return Err(CalibraError::domain(format!(
            "compound of order {k} of a {n}x{m} matrix"
        )));
    }
    let rows: Vec<Vec<usize>> = basis_masks(n, k).into_iter().map(mask_positions).collect();
    let cols: Vec<Vec<usize>> = basis_masks(m, k).into_iter().map(mask_positions).collect();
    Ok(DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
        minor(a, &rows[r], &cols[c])
    }))
}

/// `compound_k(a) * v` for square `a`, without materialising the compound.
fn compound_apply(a: &DMatrix<f64>, k: usize, v: &[f64]) -> Vec<f64> {
    let m = a.nrows();
    let idx: Vec<Vec<usize>> = basis_masks(m, k).into_iter().map(mask_positions).collect();
    idx.iter()
        .map(|rows| {
            idx.iter()
                .zip(v)
                .filter(|(_, &c)| c != 0.0)
                .map(|(cols, &c)| c * minor(a, rows, cols))
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn e(m: usize, idx: &[usize]) -> KForm {
        KForm::basis(m, idx).unwrap()
    }

    #[test]
    fn basis_enumeration() {
        let b = multi_index_basis(3, 2).unwrap();
        let got: Vec<Vec<usize>> = b.iter().map(|i| i.entries().to_vec()).collect();
        assert_eq!(got, vec![vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(multi_index_basis(5, 0).unwrap(), vec![MultiIndex(vec![])]);
        assert!(multi_index_basis(3, 4).is_err());
    }

    #[test]
    fn basis_count_matches_direct_enumeration() {
        // Count strictly increasing triples in [1, 7] by brute force.
        let mut count = 0;
        for a in 1..=7 {
            for b in a + 1..=7 {
                for c in b + 1..=7 {
                    count += 1;
                    let idx = MultiIndex::new(vec![a, b, c], 7).unwrap();
                    let pos = multi_index_basis(7, 3)
                        .unwrap()
                        .iter()
                        .position(|x| x == &idx)
                        .unwrap();
                    assert_eq!(pos, count - 1);
                }
            }
        }
        assert_eq!(count, 35);
        assert_eq!(multi_index_basis(7, 3).unwrap().len(), count);
    }

    #[test]
    fn multi_index_validation() {
        assert!(MultiIndex::new(vec![0, 1], 3).is_err());
        assert!(MultiIndex::new(vec![2, 1], 3).is_err());
        assert!(MultiIndex::new(vec![1, 4], 3).is_err());
        assert_eq!(MultiIndex::new(vec![1, 3], 3).unwrap().to_string(), "(1,3)");
    }

    #[test]
    fn mask_rank_inverts_enumeration() {
        for m in 0..=9 {
            for k in 0..=m {
                for (r, mask) in basis_masks(m, k).into_iter().enumerate() {
                    assert_eq!(mask_rank(mask, m), r);
                }
            }
        }
    }

    #[test]
    fn wedge_examples() {
        assert_eq!(e(2, &[1]).wedge(&e(2, &[2])).unwrap(), e(2, &[1, 2]));
        assert_eq!(
            e(2, &[2]).wedge(&e(2, &[1])).unwrap(),
            e(2, &[1, 2]).scaled(-1.0)
        );
        let sum = e(3, &[1]).add(&e(3, &[2])).unwrap();
        let expected = e(3, &[1, 3]).add(&e(3, &[2, 3])).unwrap();
        assert_eq!(sum.wedge(&e(3, &[3])).unwrap(), expected);
        assert!(e(2, &[1, 2]).wedge(&e(2, &[1])).is_err());
        assert!(e(2, &[1]).wedge(&e(3, &[1])).is_err());
    }

    #[test]
    fn interior_examples() {
        let e12 = e(3, &[1, 2]);
        assert_eq!(e12.interior(&[1.0, 0.0, 0.0]).unwrap(), e(3, &[2]));
        assert_eq!(
            e12.interior(&[0.0, 1.0, 0.0]).unwrap(),
            e(3, &[1]).scaled(-1.0)
        );
        assert_eq!(e12.interior(&[0.0, 0.0, 1.0]).unwrap().norm_sq(), 0.0);
        assert!(KForm::scalar(3, 1.0).interior(&[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn inner_examples() {
        let id = Metric::euclidean(2);
        assert_eq!(e(2, &[1, 2]).inner(&e(2, &[1, 2]), &id).unwrap(), 1.0);
        let g = Metric::new(DMatrix::from_element(1, 1, 4.0), Orientation::Positive).unwrap();
        assert_relative_eq!(e(1, &[1]).inner(&e(1, &[1]), &g).unwrap(), 0.25);
        assert!(e(2, &[1]).inner(&e(2, &[1, 2]), &id).is_err());
    }

    #[test]
    fn hodge_examples() {
        let id = Metric::euclidean(2);
        assert_eq!(e(2, &[1]).hodge_star(&id).unwrap(), e(2, &[2]));
        assert_eq!(e(2, &[2]).hodge_star(&id).unwrap(), e(2, &[1]).scaled(-1.0));
        let twice = e(2, &[1]).hodge_star(&id).unwrap().hodge_star(&id).unwrap();
        assert_eq!(twice, e(2, &[1]).scaled(-1.0));
        assert_eq!(
            KForm::scalar(3, 2.0)
                .hodge_star(&Metric::euclidean(3))
                .unwrap(),
            e(3, &[1, 2, 3]).scaled(2.0)
        );
    }

    #[test]
    fn hodge_respects_orientation_and_scale() {
        let g = Metric::new(
            DMatrix::from_diagonal_element(2, 2, 4.0),
            Orientation::Negative,
        )
        .unwrap();
        // *1 = vol_g = -4 e^{12}.
        assert_relative_eq!(
            KForm::scalar(2, 1.0).hodge_star(&g).unwrap().coeffs()[0],
            -4.0
        );
        assert_relative_eq!(g.volume_form().coeffs()[0], -4.0);
    }

    #[test]
    fn pullback_examples() {
        let beta = KForm::from_coeffs(3, 2, vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(beta.pullback(&DMatrix::identity(3, 3)).unwrap(), beta);
        let scaled = beta
            .pullback(&DMatrix::from_diagonal_element(3, 3, 1.5))
            .unwrap();
        for (a, b) in scaled.coeffs().iter().zip(beta.coeffs()) {
            assert_relative_eq!(*a, b * 2.25);
        }
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 5.0]));
        let pulled = e(3, &[1, 3]).pullback(&diag).unwrap();
        assert_eq!(pulled, e(3, &[1, 3]).scaled(10.0));
        // Pulling a 2-form back to R^1 has no target degree.
        assert!(e(3, &[1, 2]).pullback(&DMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn evaluate_on_frames() {
        let e12 = e(3, &[1, 2]);
        let frame = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(e12.evaluate(&frame).unwrap(), 1.0);
        let swapped = DMatrix::from_column_slice(3, 2, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(e12.evaluate(&swapped).unwrap(), -1.0);
    }

    #[test]
    fn from_terms_sorts_with_sign() {
        let f = KForm::from_terms(3, 2, &[(&[2, 1], 1.0), (&[3, 3], 5.0)]).unwrap();
        assert_eq!(f, e(3, &[1, 2]).scaled(-1.0));
    }

    #[test]
    fn json_round_trip_and_validation() {
        let f = KForm::from_coeffs(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"m":3,"k":1,"coeffs":[1.0,2.0,3.0]}"#);
        let back: KForm = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<KForm>(r#"{"m":3,"k":2,"coeffs":[1.0]}"#).is_err());
    }

    #[test]
    fn compound_of_product_is_product_of_compounds() {
        let a = DMatrix::from_fn(3, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let b = DMatrix::from_fn(4, 3, |i, j| ((i * 2 + j * 5) % 7) as f64 - 3.0);
        let lhs = compound_matrix(&(&a * &b), 2).unwrap();
        let rhs = compound_matrix(&a, 2).unwrap() * compound_matrix(&b, 2).unwrap();
        assert!((lhs - rhs).amax() < 1e-9);
    }
}
