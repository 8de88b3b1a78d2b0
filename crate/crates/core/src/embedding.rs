//! Ordinal embedding from triplet judgments under the crowd-kernel model.
//!
//! For an anchor `a` and options `b`, `c`, the probability that `b` is judged
//! more similar is
//!
//! ```text
//! P(b) = (mu + |a - c|²) / (2 mu + |a - b|² + |a - c|²)
//! ```
//!
//! Fitting minimizes the negative log-likelihood of the observed choices by
//! full-batch gradient descent.

use std::sync::Arc;

use log::{debug, warn};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::domain::{ConceptSet, Configuration, FitHyperparams, FitReport, TripletRecord};
use crate::error::{Error, Result};

/// Scale of the Gaussian used to initialize coordinates.
pub const INIT_SCALE: f64 = 0.1;

/// Slack allowed when checking that the loss is still non-increasing at the end of a fit.
pub const LOSS_MONOTONE_TOLERANCE: f64 = 1e-6;

/// Anchor, chosen option and rejected option, as concept indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Judgment {
    pub anchor: usize,
    pub chosen: usize,
    pub other: usize,
}

impl From<&TripletRecord> for Judgment {
    fn from(t: &TripletRecord) -> Self {
        Self {
            anchor: t.anchor,
            chosen: t.chosen(),
            other: t.other(),
        }
    }
}

fn sq_dist(x: &[f64], k: usize, i: usize, j: usize) -> f64 {
    let (a, b) = (&x[i * k..i * k + k], &x[j * k..j * k + k]);
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Probability that `chosen` is picked over `other` for `anchor`.
pub fn triplet_probability(
    config: &Configuration,
    anchor: usize,
    chosen: usize,
    other: usize,
    mu: f64,
) -> Result<f64> {
    if anchor == chosen || anchor == other || chosen == other {
        return Err(Error::Invariant(format!(
            "triplet ({anchor}, {chosen}, {other}) indices are not pairwise distinct"
        )));
    }
    for (i, what) in [(anchor, "anchor"), (chosen, "chosen"), (other, "other")] {
        config.concepts().check_index(i, what)?;
    }
    if !(mu > 0.0) {
        return Err(Error::OutOfRange(format!("mu must be > 0, got {mu}")));
    }
    let dc = config.squared_distance(anchor, chosen);
    let doth = config.squared_distance(anchor, other);
    Ok((mu + doth) / (2.0 * mu + dc + doth))
}

/// Summed loss and its gradient over flat row-major coordinates.
fn loss_grad_flat(x: &[f64], k: usize, judgments: &[Judgment], mu: f64, grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for j in judgments {
        let (a, b, c) = (j.anchor, j.chosen, j.other);
        let dab = sq_dist(x, k, a, b);
        let dac = sq_dist(x, k, a, c);
        let num = mu + dac;
        let den = 2.0 * mu + dab + dac;
        loss += den.ln() - num.ln();
        // d loss / d dab and d loss / d dac
        let g_ab = 1.0 / den;
        let g_ac = 1.0 / den - 1.0 / num;
        for d in 0..k {
            let ab = 2.0 * (x[a * k + d] - x[b * k + d]);
            let ac = 2.0 * (x[a * k + d] - x[c * k + d]);
            grad[a * k + d] += g_ab * ab + g_ac * ac;
            grad[b * k + d] -= g_ab * ab;
            grad[c * k + d] -= g_ac * ac;
        }
    }
    loss
}

fn flatten(c: &Configuration) -> Vec<f64> {
    let (n, k) = (c.len(), c.dims());
    let mut x = Vec::with_capacity(n * k);
    for i in 0..n {
        for d in 0..k {
            x.push(c.coords()[(i, d)]);
        }
    }
    x
}

fn to_judgments(config: &Configuration, triplets: &[TripletRecord]) -> Result<Vec<Judgment>> {
    triplets
        .iter()
        .map(|t| {
            t.validate(config.len())?;
            Ok(Judgment::from(t))
        })
        .collect()
}

/// `-Σ log P(observed choice)` and its exact gradient with respect to every coordinate.
pub fn loss_and_gradient(
    config: &Configuration,
    triplets: &[TripletRecord],
    mu: f64,
) -> Result<(f64, DMatrix<f64>)> {
    if triplets.is_empty() {
        return Err(Error::Empty("no triplets".into()));
    }
    let judgments = to_judgments(config, triplets)?;
    let (n, k) = (config.len(), config.dims());
    let x = flatten(config);
    let mut grad = vec![0.0; n * k];
    let loss = loss_grad_flat(&x, k, &judgments, mu, &mut grad);
    Ok((loss, DMatrix::from_row_slice(n, k, &grad)))
}

/// Fraction of triplets whose recorded choice is the option strictly nearer
/// to the anchor; exact ties earn half credit.
pub fn holdout_accuracy(config: &Configuration, triplets: &[TripletRecord]) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::Empty("no triplets to score".into()));
    }
    let judgments = to_judgments(config, triplets)?;
    Ok(accuracy(config, &judgments))
}

fn accuracy(config: &Configuration, judgments: &[Judgment]) -> f64 {
    let score: f64 = judgments
        .iter()
        .map(|j| {
            let dc = config.squared_distance(j.anchor, j.chosen);
            let doth = config.squared_distance(j.anchor, j.other);
            if dc < doth {
                1.0
            } else if dc == doth {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    score / judgments.len() as f64
}

/// Splits `n` items into (train, holdout) index lists: a seeded shuffle with
/// the last `ceil(fraction · n)` positions held out.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    idx.shuffle(&mut rng);
    let n_hold = (fraction * n as f64).ceil() as usize;
    let hold = idx.split_off(n - n_hold.min(n));
    (idx, hold)
}

/// Fits a `dims`-dimensional configuration to triplet judgments.
///
/// Deterministic given its arguments: the holdout split and the Gaussian
/// initialization both derive from `seed`.
pub fn fit_triplets(
    triplets: &[TripletRecord],
    concepts: &Arc<ConceptSet>,
    dims: usize,
    hp: &FitHyperparams,
    seed: u64,
) -> Result<(Configuration, FitReport)> {
    hp.validate()?;
    if dims == 0 {
        return Err(Error::OutOfRange("dims must be ≥ 1".into()));
    }
    let n = concepts.len();
    let (train_idx, hold_idx) = holdout_split(triplets.len(), hp.holdout_fraction, seed);
    if train_idx.is_empty() || (hp.holdout_fraction > 0.0 && hold_idx.is_empty()) {
        return Err(Error::TooFewTriplets(format!(
            "{} triplets leave {} for training and {} held out",
            triplets.len(),
            train_idx.len(),
            hold_idx.len()
        )));
    }
    let mut judgments = Vec::with_capacity(triplets.len());
    for t in triplets {
        t.validate(n)?;
        judgments.push(Judgment::from(t));
    }
    let train: Vec<Judgment> = train_idx.iter().map(|&i| judgments[i]).collect();
    let hold: Vec<Judgment> = hold_idx.iter().map(|&i| judgments[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut x: Vec<f64> = (0..n * dims)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * INIT_SCALE
        })
        .collect();

    let scale = 1.0 / train.len() as f64;
    let mut grad = vec![0.0; n * dims];
    let mut curve = Vec::with_capacity(hp.epochs + 1);
    for epoch in 0..hp.epochs {
        let loss = loss_grad_flat(&x, dims, &train, hp.mu, &mut grad) * scale;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        curve.push(loss);
        let step = hp.learning_rate * scale;
        for (xi, gi) in x.iter_mut().zip(&grad) {
            *xi -= step * gi;
        }
    }
    let final_loss = loss_grad_flat(&x, dims, &train, hp.mu, &mut grad) * scale;
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: hp.epochs });
    }
    curve.push(final_loss);

    let tail_start = curve.len() - (curve.len() / 10).max(2);
    if curve[tail_start..]
        .windows(2)
        .any(|w| w[1] > w[0] + LOSS_MONOTONE_TOLERANCE)
    {
        warn!("triplet fit: loss still increasing during the final epochs; consider a smaller learning rate");
    }

    let config = Configuration::new(Arc::clone(concepts), DMatrix::from_row_slice(n, dims, &x))?;
    let holdout_accuracy = if hold.is_empty() {
        accuracy(&config, &train)
    } else {
        accuracy(&config, &hold)
    };
    debug!(
        "triplet fit: {} train / {} holdout, final loss {final_loss:.5}, accuracy {holdout_accuracy:.3}",
        train.len(),
        hold.len()
    );
    let report = FitReport {
        train_loss_curve: curve,
        holdout_accuracy,
        n_train: train.len(),
        n_holdout: hold.len(),
        seed,
        hyperparams: *hp,
    };
    Ok((config, report))
}

/// Draws `n_trials` triplets uniformly: a uniform anchor, then an ordered pair
/// of distinct options from the remaining concepts.
pub fn sample_triplets(concepts: &ConceptSet, n_trials: usize, seed: u64) -> Result<Vec<(usize, usize, usize)>> {
    let n = concepts.len();
    if n < 3 {
        return Err(Error::InvalidConceptSet(format!("need at least 3 concepts, got {n}")));
    }
    if n_trials == 0 {
        return Err(Error::OutOfRange("n_trials must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_trials)
        .map(|_| {
            let anchor = rng.random_range(0..n);
            let mut a = rng.random_range(0..n - 1);
            if a >= anchor {
                a += 1;
            }
            let (lo, hi) = (anchor.min(a), anchor.max(a));
            let mut b = rng.random_range(0..n - 2);
            if b >= lo {
                b += 1;
            }
            if b >= hi {
                b += 1;
            }
            (anchor, a, b)
        })
        .collect())
}
