//! Seed derivation and random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha stream keyed by a
//! 64-bit seed. Child seeds are derived with a SplitMix64 finalizer over
//! `(parent, index)`, so adding trials never perturbs the streams of earlier
//! trials.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stream identifiers used within a single seed.
pub const STREAM_EXCITATION: u64 = 1;
pub const STREAM_NOISE: u64 = 2;
pub const STREAM_SYSTEM: u64 = 3;
pub const STREAM_AUX: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed number `index` of `parent`.
pub fn derive(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Independent generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal_vector<R: Rng>(rng: &mut R, len: usize, std: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    // Row-major fill so the draw order is independent of storage layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

/// Uniform direction on the unit sphere in `R^len`.
pub fn unit_vector<R: Rng>(rng: &mut R, len: usize) -> DVector<f64> {
    loop {
        let v = normal_vector(rng, len, 1.0);
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}
