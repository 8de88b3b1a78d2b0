//! Planted structures for closed-loop simulation and testing.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::domain::{ConceptSet, Configuration, FeatureMatrix};
use crate::error::Result;

/// Standard Gaussian coordinates for `concepts`, scaled by `scale`.
pub fn gaussian_configuration_for(
    concepts: &Arc<ConceptSet>,
    dims: usize,
    scale: f64,
    seed: u64,
) -> Result<Configuration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = concepts.len();
    // row-major fill so that the draw order does not depend on storage layout
    let mut data = Vec::with_capacity(n * dims);
    for _ in 0..n * dims {
        let z: f64 = StandardNormal.sample(&mut rng);
        data.push(z * scale);
    }
    Configuration::new(Arc::clone(concepts), DMatrix::from_row_slice(n, dims, &data))
}

/// Unit Gaussian configuration over `n` numbered concepts.
pub fn gaussian_configuration(n: usize, dims: usize, seed: u64) -> Configuration {
    let cs = Arc::new(ConceptSet::numbered(n).expect("n ≥ 3"));
    gaussian_configuration_for(&cs, dims, 1.0, seed).expect("finite coordinates")
}

/// Two tight Gaussian blobs of `per_blob` points each, centers `separation` apart.
pub fn two_blobs(per_blob: usize, dims: usize, separation: f64, spread: f64, seed: u64) -> Configuration {
    let n = 2 * per_blob;
    let cs = Arc::new(ConceptSet::numbered(n).expect("n ≥ 3"));
    let mut c = gaussian_configuration_for(&cs, dims, spread, seed)
        .expect("finite coordinates")
        .coords()
        .clone();
    for i in per_blob..n {
        c[(i, 0)] += separation;
    }
    Configuration::new(cs, c).expect("finite coordinates")
}

/// Derives a binary feature matrix from a planted geometry.
///
/// Each feature is a ball with a random center (drawn like the configuration
/// itself, but wider) and a common radius; a concept has the feature when it
/// lies inside the ball. Concepts that are close share most balls, so the
/// cosine distance between feature rows grows with Euclidean distance.
/// Rows left empty by chance get their nearest feature center switched on.
pub fn ball_features(
    planted: &Configuration,
    n_features: usize,
    radius_factor: f64,
    seed: u64,
) -> Result<FeatureMatrix> {
    let n = planted.len();
    let k = planted.dims();
    let coords = planted.coords();
    let spread = (coords.iter().map(|v| v * v).sum::<f64>() / (n * k) as f64).sqrt().max(1e-12);
    let radius = radius_factor * spread;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..n_features)
        .map(|_| {
            // jitter around a random concept keeps every ball near the data
            let anchor = rng.random_range(0..n);
            (0..k)
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    coords[(anchor, c)] + z * spread
                })
                .collect()
        })
        .collect();
    let sq = |i: usize, f: &[f64]| -> f64 {
        (0..k).map(|c| (coords[(i, c)] - f[c]).powi(2)).sum()
    };
    let mut values = vec![0u8; n * n_features];
    for i in 0..n {
        let mut any = false;
        for (f, center) in centers.iter().enumerate() {
            if sq(i, center) <= radius * radius {
                values[i * n_features + f] = 1;
                any = true;
            }
        }
        if !any && n_features > 0 {
            let nearest = (0..n_features)
                .min_by(|&a, &b| sq(i, &centers[a]).total_cmp(&sq(i, &centers[b])))
                .expect("at least one feature");
            values[i * n_features + nearest] = 1;
        }
    }
    let labels = (0..n_features).map(|f| format!("feature {f}")).collect();
    FeatureMatrix::new(Arc::clone(planted.concepts()), labels, values, true)
}
