//! Fixed inputs shared by the benchmarks.

use calibra_core::sampling::{block_rng, gaussian_matrix, random_spd};
use calibra_core::torus::{random_bandlimited, TorusMapSpec};
use calibra_core::Result;
use nalgebra::DMatrix;

pub const SEED: u64 = 0x5eed;

/// A reproducible `n x m` Gaussian matrix.
pub fn matrix(n: usize, m: usize, stream: u64) -> DMatrix<f64> {
    gaussian_matrix(&mut block_rng(SEED, stream), n, m)
}

/// A perturbed map on the 2-torus with random metrics.
pub fn torus(grid_n: usize) -> Result<TorusMapSpec> {
    let mut rng = block_rng(SEED, 99);
    let g = random_spd(&mut rng, 2, 0.5, 0.5);
    let h = random_spd(&mut rng, 2, 0.5, 0.5);
    let q = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    let modes = random_bandlimited(&mut rng, 2, 2, grid_n, 4, 0.05);
    TorusMapSpec::new(g, h, q, grid_n)?.with_fourier_perturbation(&modes)
}

#[cfg(test)]
mod tests {
    #[test]
    fn inputs_build() {
        assert_eq!(super::matrix(3, 4, 0).shape(), (3, 4));
        assert_eq!(super::torus(16).unwrap().grid_points(), 256);
    }
}
