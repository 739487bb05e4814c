//! Seeded random sampling with per-block substreams.
//!
//! Sweeps are cut into fixed-size blocks and block `b` draws from ChaCha
//! stream `b` of the run seed. Results therefore depend only on the seed,
//! never on how many workers processed the blocks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Trials per substream block.
pub const BLOCK: usize = 1024;

/// An independent seed for a named sub-experiment (SplitMix64 finaliser of
/// `seed ^ salt`).
pub fn sub_seed(seed: u64, salt: u64) -> u64 {
    let mut z = (seed ^ salt).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Uniform point on the Euclidean unit sphere `S^{m-1}`.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, m: usize) -> DVector<f64> {
    loop {
        let v = gaussian_vector(rng, m);
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, m: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, m, m).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random symmetric positive-definite matrix `L L^T + shift I`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, m: usize, spread: f64, shift: f64) -> DMatrix<f64> {
    let l = gaussian_matrix(rng, m, m) * spread;
    let s = &l * l.transpose() + DMatrix::identity(m, m) * shift;
    // Exact symmetry.
    (&s + s.transpose()) * 0.5
}

/// Runs `trials` draws in seeded blocks (in parallel) and returns the
/// per-trial outputs in trial order.
pub fn sweep<T, F>(trials: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    let blocks = trials.div_ceil(BLOCK);
    let per_block: Vec<Vec<T>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, b as u64);
            let start = b * BLOCK;
            let end = (start + BLOCK).min(trials);
            (start..end).map(|t| f(&mut rng, t)).collect()
        })
        .collect();
    per_block.into_iter().flatten().collect()
}
