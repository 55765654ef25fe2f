#![allow(dead_code)]

use pkm::{PlatformGeometry, PlatformPose};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform sample of the seven-variable design box.
pub fn random_geometry(rng: &mut ChaCha8Rng) -> PlatformGeometry {
    let pi = std::f64::consts::PI;
    PlatformGeometry::from_array([
        rng.random_range(0.20..0.50),
        rng.random_range(0.15..0.30),
        rng.random_range(-0.15..0.15),
        rng.random_range(0.10..pi),
        rng.random_range(0.10..pi),
        rng.random_range(0.10..pi),
        rng.random_range(0.10..pi),
    ])
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> PlatformPose {
    let a = 40f64.to_radians();
    PlatformPose::new(
        rng.random_range(-0.2..0.2),
        rng.random_range(0.3..0.8),
        rng.random_range(-a..a),
        rng.random_range(-a..a),
    )
}

/// Max entrywise difference relative to the largest reference entry.
pub fn normwise_relative_error(a: &[f64], reference: &[f64]) -> f64 {
    let scale = reference
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    a.iter()
        .zip(reference)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}
