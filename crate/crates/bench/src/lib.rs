//! Fixtures shared by the benchmarks.

use assisted_doa::linalg::{HermitianMatrix, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_c(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

/// Rank-1 speech plus full-rank noise, `(Φy, Φu)` of order `m`.
pub fn covariances(m: usize, seed: u64) -> (HermitianMatrix, HermitianMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g: Vec<C64> = (0..m).map(|_| random_c(&mut rng)).collect();
    let b: Vec<Vec<C64>> = (0..2 * m).map(|_| (0..m).map(|_| random_c(&mut rng)).collect()).collect();
    let phi_u = HermitianMatrix::from_upper(m, |i, j| b.iter().map(|v| v[i] * v[j].conj()).sum());
    let phi_y = phi_u.add(&HermitianMatrix::outer(&g).scaled(5.0)).expect("same order");
    (phi_y, phi_u)
}

/// Uniform white noise channels.
pub fn noise_channels(channels: usize, samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..channels).map(|_| (0..samples).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}
