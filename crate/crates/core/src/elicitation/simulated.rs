//! A deterministic stand-in respondent driven by a planted structure.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    Choice, ConceptSet, Configuration, FeatureMatrix, RatingRecord, Source, TripletRecord,
};
use crate::error::{Error, Result};
use crate::features::{cosine_dissimilarity, VerificationAnswer};
use crate::mds::distance_matrix;
use crate::synthetic::ball_features;

/// Fixed timestamp on simulated records, so that outputs are reproducible.
pub const SIMULATED_TIMESTAMP: &str = "2000-01-01T00:00:00.000Z";

/// Features derived from a planted geometry when one is asked for.
pub const DEFAULT_DERIVED_FEATURES: usize = 600;
pub const DEFAULT_RADIUS_FACTOR: f64 = 2.5;

#[derive(Debug, Clone)]
pub enum Planted {
    Geometry(Configuration),
    Features(FeatureMatrix),
}

impl Planted {
    pub fn concepts(&self) -> &Arc<ConceptSet> {
        match self {
            Planted::Geometry(c) => c.concepts(),
            Planted::Features(m) => m.concepts(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Noise {
    /// Always the nearer option; exact ties broken by a seeded coin.
    Deterministic,
    /// Option `x` chosen with probability ∝ exp(-beta · d(anchor, x)²).
    Luce { beta: f64 },
}

/// Probability of choosing the option at squared distance `da2` over the one
/// at `db2` under the Luce rule.
pub fn luce_probability(beta: f64, da2: f64, db2: f64) -> f64 {
    // logistic form avoids underflow of the two exponentials
    1.0 / (1.0 + (beta * (da2 - db2)).exp())
}

pub struct SimulatedRespondent {
    planted: Planted,
    noise: Noise,
    seed: u64,
    respondent_id: String,
    dist: DMatrix<f64>,
    features: Option<FeatureMatrix>,
}

impl SimulatedRespondent {
    /// Distances come from the geometry (Euclidean) or the feature matrix
    /// (cosine). A geometry gets a ball-model feature matrix for the feature
    /// tasks, seeded from `seed`.
    pub fn new(planted: Planted, noise: Noise, seed: u64) -> Result<Self> {
        Self::with_feature_model(planted, noise, seed, DEFAULT_DERIVED_FEATURES, DEFAULT_RADIUS_FACTOR)
    }

    pub fn with_feature_model(
        planted: Planted,
        noise: Noise,
        seed: u64,
        n_features: usize,
        radius_factor: f64,
    ) -> Result<Self> {
        if let Noise::Luce { beta } = noise {
            if !(beta >= 0.0) {
                return Err(Error::OutOfRange(format!("Luce beta must be ≥ 0, got {beta}")));
            }
        }
        let (dist, features) = match &planted {
            Planted::Geometry(c) => (
                distance_matrix(c).values().clone(),
                Some(ball_features(c, n_features, radius_factor, seed ^ 0x5eed_f00d)?),
            ),
            Planted::Features(m) => (cosine_dissimilarity(m)?.values().clone(), Some(m.clone())),
        };
        Ok(Self {
            planted,
            noise,
            seed,
            respondent_id: format!("simulated-{seed}"),
            dist,
            features,
        })
    }

    pub fn with_respondent_id(mut self, id: impl Into<String>) -> Self {
        self.respondent_id = id.into();
        self
    }

    pub fn concepts(&self) -> &Arc<ConceptSet> {
        self.planted.concepts()
    }

    pub fn planted(&self) -> &Planted {
        &self.planted
    }

    /// The planted dissimilarities answers are based on.
    pub fn distances(&self) -> &DMatrix<f64> {
        &self.dist
    }

    pub fn feature_matrix(&self) -> &FeatureMatrix {
        self.features.as_ref().expect("always derived at construction")
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Answers each `(anchor, option_a, option_b)` query.
    pub fn answer_triplets(&self, queries: &[(usize, usize, usize)]) -> Result<Vec<TripletRecord>> {
        let n = self.concepts().len();
        let mut rng = self.rng(1);
        queries
            .iter()
            .map(|&(anchor, option_a, option_b)| {
                let da2 = self.dist[(anchor, option_a)].powi(2);
                let db2 = self.dist[(anchor, option_b)].powi(2);
                // one uniform per query keeps answers aligned across noise settings
                let u: f64 = rng.random();
                let pick_a = match self.noise {
                    Noise::Deterministic if da2 == db2 => u < 0.5,
                    Noise::Deterministic => da2 < db2,
                    Noise::Luce { beta } => u < luce_probability(beta, da2, db2),
                };
                let r = TripletRecord {
                    anchor,
                    option_a,
                    option_b,
                    choice: if pick_a { Choice::A } else { Choice::B },
                    respondent_id: self.respondent_id.clone(),
                    source: Source::Simulated,
                    timestamp: SIMULATED_TIMESTAMP.into(),
                };
                r.validate(n)?;
                Ok(r)
            })
            .collect()
    }

    /// `7 - round(6 · d / d_max)` per pair; all 7s when every distance is zero.
    pub fn answer_pairwise(&self, pairs: &[(usize, usize)]) -> Result<Vec<RatingRecord>> {
        let n = self.concepts().len();
        let dmax = self.dist.max();
        pairs
            .iter()
            .map(|&(concept_i, concept_j)| {
                let d = self.dist[(concept_i, concept_j)];
                let scaled = if dmax > 0.0 { (6.0 * d / dmax).round() } else { 0.0 };
                let r = RatingRecord {
                    concept_i,
                    concept_j,
                    rating: 7 - scaled as u8,
                    respondent_id: self.respondent_id.clone(),
                    source: Source::Simulated,
                    timestamp: SIMULATED_TIMESTAMP.into(),
                };
                r.validate(n)?;
                Ok(r)
            })
            .collect()
    }

    /// Looks up each (concept, feature) cell in the planted matrix.
    pub fn answer_verification(&self, cells: &[(String, String)]) -> Result<Vec<VerificationAnswer>> {
        let m = self.feature_matrix();
        cells
            .iter()
            .map(|(concept, feature)| {
                let c = m
                    .concepts()
                    .index_of(concept)
                    .ok_or_else(|| Error::ConceptMismatch(format!("unknown concept `{concept}`")))?;
                // features outside the planted inventory are simply absent
                let answer = m.feature_index(feature).is_some_and(|f| m.get(c, f) > 0);
                Ok(VerificationAnswer {
                    concept: concept.clone(),
                    feature: feature.clone(),
                    answer,
                })
            })
            .collect()
    }

    /// The planted feature labels present in each concept's row.
    pub fn answer_feature_generation(&self) -> BTreeMap<String, Vec<String>> {
        let m = self.feature_matrix();
        m.concepts()
            .labels()
            .iter()
            .enumerate()
            .map(|(c, label)| {
                let present = m
                    .feature_labels()
                    .iter()
                    .enumerate()
                    .filter(|&(f, _)| m.get(c, f) > 0)
                    .map(|(_, l)| l.clone())
                    .collect();
                (label.clone(), present)
            })
            .collect()
    }
}

/// Expected agreement of Luce choices with the noiseless nearer-option rule,
/// averaged exactly over every (anchor, unordered option pair). Tied pairs
/// count 1/2 at any beta.
pub fn luce_self_consistency(dist: &DMatrix<f64>, beta: f64) -> f64 {
    let n = dist.nrows();
    let mut total = 0.0;
    let mut count = 0usize;
    for a in 0..n {
        for x in 0..n {
            for y in x + 1..n {
                if x == a || y == a {
                    continue;
                }
                let p = luce_probability(beta, dist[(a, x)].powi(2), dist[(a, y)].powi(2));
                total += p.max(1.0 - p);
                count += 1;
            }
        }
    }
    total / count as f64
}

/// Finds beta with `luce_self_consistency(dist, beta) ≈ target` by bisection
/// on log beta. `target` must lie strictly between 1/2 and the noiseless
/// agreement.
pub fn calibrate_luce_beta(dist: &DMatrix<f64>, target: f64) -> Result<f64> {
    if dist.nrows() < 3 {
        return Err(Error::OutOfRange("need at least 3 concepts".into()));
    }
    let (mut lo, mut hi) = (-30.0f64, 30.0f64);
    let f = |log_beta: f64| luce_self_consistency(dist, log_beta.exp()) - target;
    if !(f(lo) < 0.0 && f(hi) > 0.0) {
        return Err(Error::OutOfRange(format!(
            "self-consistency target {target} not reachable (range {:.4}..{:.4})",
            f(lo) + target,
            f(hi) + target
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}
