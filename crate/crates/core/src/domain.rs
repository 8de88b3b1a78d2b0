//! Shared data model: concept sets, feature matrices, behavioral records,
//! dissimilarity matrices and configurations.
//!
//! Every constructor validates its invariants and rejects bad input instead
//! of repairing it. Values are immutable after construction.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a dissimilarity matrix is symmetric.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Highest per-cell count in a raw (non-binarized) feature matrix: the
/// number of raters who verified a concept-feature pair.
pub const MAX_RATER_COUNT: u8 = 4;

/// Ordered, labeled concepts. The index basis for every matrix in the crate.
#[derive(Debug, Clone)]
pub struct ConceptSet {
    labels: Vec<String>,
    categories: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for ConceptSet {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels && self.categories == other.categories
    }
}

impl Eq for ConceptSet {}

impl ConceptSet {
    pub fn new(labels: Vec<String>, categories: Vec<String>) -> Result<Self> {
        if labels.len() != categories.len() {
            return Err(Error::InvalidConceptSet(format!(
                "{} labels but {} categories",
                labels.len(),
                categories.len()
            )));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if label.trim().is_empty() {
                return Err(Error::InvalidConceptSet(format!("label {i} is empty")));
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::InvalidConceptSet(format!("duplicate label `{label}`")));
            }
        }
        if labels.len() < 3 {
            return Err(Error::InvalidConceptSet(format!(
                "need at least 3 concepts, got {}",
                labels.len()
            )));
        }
        Ok(Self {
            labels,
            categories,
            index,
        })
    }

    /// The 30 tools and reptiles used throughout the original study.
    pub fn tools_and_reptiles() -> Self {
        const REPTILES: [&str; 15] = [
            "Turtle",
            "Alligator",
            "Lizard",
            "Tortoise",
            "Cobra",
            "Snake",
            "Blindworm",
            "Gecko",
            "Boa python",
            "Toad",
            "Crocodile",
            "Chameleon",
            "Caiman",
            "Salamander",
            "Dinosaur",
        ];
        const TOOLS: [&str; 15] = [
            "Hammer",
            "Screwdriver",
            "Grinding disc",
            "Vacuum cleaner",
            "Spanner",
            "Lawn mower",
            "Axe",
            "Saw",
            "Knife",
            "Nail",
            "Chisel",
            "Shovel",
            "Anvil",
            "Oilcan",
            "Paint brush",
        ];
        let labels = REPTILES.iter().chain(TOOLS.iter()).map(|s| s.to_string()).collect();
        let categories = std::iter::repeat_n("reptile", 15)
            .chain(std::iter::repeat_n("tool", 15))
            .map(String::from)
            .collect();
        Self::new(labels, categories).expect("built-in concept table is valid")
    }

    /// Concept set with generated labels `c0, c1, ...` and a single category.
    pub fn numbered(n: usize) -> Result<Self> {
        let labels = (0..n).map(|i| format!("c{i}")).collect();
        Self::new(labels, vec!["concept".to_string(); n])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// True when both sets hold the same labels, in any order.
    pub fn same_members(&self, other: &ConceptSet) -> bool {
        self.len() == other.len() && self.labels.iter().all(|l| other.index.contains_key(l))
    }

    /// For each concept of `self`, its position in `other`.
    pub fn permutation_into(&self, other: &ConceptSet) -> Result<Vec<usize>> {
        if !self.same_members(other) {
            return Err(Error::ConceptMismatch(format!(
                "{} vs {} concepts with different labels",
                self.len(),
                other.len()
            )));
        }
        Ok(self.labels.iter().map(|l| other.index[l]).collect())
    }

    pub(crate) fn check_index(&self, i: usize, what: &str) -> Result<()> {
        if i >= self.len() {
            return Err(Error::Invariant(format!(
                "{what} index {i} out of range for {} concepts",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Concept × feature matrix of rater counts, or booleans once binarized.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    concepts: Arc<ConceptSet>,
    feature_labels: Vec<String>,
    values: Vec<u8>,
    binarized: bool,
}

impl FeatureMatrix {
    /// `values` is row-major, one row per concept.
    pub fn new(
        concepts: Arc<ConceptSet>,
        feature_labels: Vec<String>,
        values: Vec<u8>,
        binarized: bool,
    ) -> Result<Self> {
        let expected = concepts.len() * feature_labels.len();
        if values.len() != expected {
            return Err(Error::Invariant(format!(
                "feature matrix has {} cells, expected {} × {} = {expected}",
                values.len(),
                concepts.len(),
                feature_labels.len()
            )));
        }
        let mut seen = HashSet::with_capacity(feature_labels.len());
        for f in &feature_labels {
            if !seen.insert(f.as_str()) {
                return Err(Error::Invariant(format!("duplicate feature label `{f}`")));
            }
        }
        let max = if binarized { 1 } else { MAX_RATER_COUNT };
        if let Some(pos) = values.iter().position(|&v| v > max) {
            let (r, c) = (pos / feature_labels.len(), pos % feature_labels.len());
            return Err(Error::Invariant(format!(
                "cell ({}, {}) = {} exceeds {max}",
                concepts.label(r),
                feature_labels[c],
                values[pos]
            )));
        }
        Ok(Self {
            concepts,
            feature_labels,
            values,
            binarized,
        })
    }

    pub fn concepts(&self) -> &Arc<ConceptSet> {
        &self.concepts
    }

    pub fn feature_labels(&self) -> &[String] {
        &self.feature_labels
    }

    pub fn n_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_labels.len()
    }

    pub fn is_binarized(&self) -> bool {
        self.binarized
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, concept: usize, feature: usize) -> u8 {
        self.values[concept * self.n_features() + feature]
    }

    pub fn row(&self, concept: usize) -> &[u8] {
        let f = self.n_features();
        &self.values[concept * f..(concept + 1) * f]
    }

    pub fn feature_index(&self, label: &str) -> Option<usize> {
        self.feature_labels.iter().position(|f| f == label)
    }
}

/// Which option of a triplet trial was judged more similar to the anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    A,
    B,
}

/// Who produced a judgment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Llm,
    Simulated,
}

/// Current UTC time as an ISO-8601 string.
pub fn utc_now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// One triadic comparison: which of two options is more similar to the anchor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub anchor: usize,
    pub option_a: usize,
    pub option_b: usize,
    pub choice: Choice,
    pub respondent_id: String,
    pub source: Source,
    pub timestamp: String,
}

impl TripletRecord {
    pub fn validate(&self, n_concepts: usize) -> Result<()> {
        let (a, x, y) = (self.anchor, self.option_a, self.option_b);
        if a >= n_concepts || x >= n_concepts || y >= n_concepts {
            return Err(Error::Invariant(format!(
                "triplet ({a}, {x}, {y}) references a concept outside 0..{n_concepts}"
            )));
        }
        if a == x || a == y || x == y {
            return Err(Error::Invariant(format!(
                "triplet ({a}, {x}, {y}) indices are not pairwise distinct"
            )));
        }
        check_timestamp(&self.timestamp)
    }

    pub fn chosen(&self) -> usize {
        match self.choice {
            Choice::A => self.option_a,
            Choice::B => self.option_b,
        }
    }

    pub fn other(&self) -> usize {
        match self.choice {
            Choice::A => self.option_b,
            Choice::B => self.option_a,
        }
    }
}

/// One Likert similarity rating (1 = extremely dissimilar, 7 = extremely similar).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub concept_i: usize,
    pub concept_j: usize,
    pub rating: u8,
    pub respondent_id: String,
    pub source: Source,
    pub timestamp: String,
}

impl RatingRecord {
    pub fn validate(&self, n_concepts: usize) -> Result<()> {
        if self.concept_i >= n_concepts || self.concept_j >= n_concepts {
            return Err(Error::Invariant(format!(
                "rating pair ({}, {}) references a concept outside 0..{n_concepts}",
                self.concept_i, self.concept_j
            )));
        }
        if self.concept_i == self.concept_j {
            return Err(Error::Invariant(format!(
                "rating pair ({0}, {0}) rates a concept against itself",
                self.concept_i
            )));
        }
        if !(1..=7).contains(&self.rating) {
            return Err(Error::Invariant(format!("rating {} outside 1..=7", self.rating)));
        }
        check_timestamp(&self.timestamp)
    }
}

fn check_timestamp(ts: &str) -> Result<()> {
    chrono::DateTime::parse_from_rfc3339(ts)
        .map(|_| ())
        .map_err(|e| Error::Invariant(format!("timestamp {ts:?} is not ISO-8601: {e}")))
}

/// Symmetric, non-negative, zero-diagonal n × n matrix over a concept set.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    concepts: Arc<ConceptSet>,
    values: DMatrix<f64>,
}

impl DissimilarityMatrix {
    pub fn new(concepts: Arc<ConceptSet>, values: DMatrix<f64>) -> Result<Self> {
        let n = concepts.len();
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::Invariant(format!(
                "dissimilarity matrix is {}×{}, expected {n}×{n}",
                values.nrows(),
                values.ncols()
            )));
        }
        for i in 0..n {
            if values[(i, i)] != 0.0 {
                return Err(Error::Invariant(format!(
                    "diagonal entry {i} is {}",
                    values[(i, i)]
                )));
            }
            for j in 0..n {
                let v = values[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Invariant(format!("entry ({i}, {j}) = {v}")));
                }
                if (v - values[(j, i)]).abs() > SYMMETRY_TOLERANCE {
                    return Err(Error::Invariant(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { concepts, values })
    }

    pub fn concepts(&self) -> &Arc<ConceptSet> {
        &self.concepts
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Reorders rows and columns so that they follow `target`'s label order.
    pub fn align_to(&self, target: &Arc<ConceptSet>) -> Result<Self> {
        if *self.concepts == **target {
            return Ok(self.clone());
        }
        let pos = target.permutation_into(&self.concepts)?;
        let n = pos.len();
        let values = DMatrix::from_fn(n, n, |i, j| self.values[(pos[i], pos[j])]);
        Ok(Self {
            concepts: Arc::clone(target),
            values,
        })
    }
}

/// n × k coordinates, one row per concept.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    concepts: Arc<ConceptSet>,
    coords: DMatrix<f64>,
}

impl Configuration {
    pub fn new(concepts: Arc<ConceptSet>, coords: DMatrix<f64>) -> Result<Self> {
        if coords.nrows() != concepts.len() {
            return Err(Error::Invariant(format!(
                "configuration has {} rows for {} concepts",
                coords.nrows(),
                concepts.len()
            )));
        }
        if coords.ncols() == 0 {
            return Err(Error::Invariant("configuration has zero dimensions".into()));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("configuration has non-finite coordinates".into()));
        }
        Ok(Self { concepts, coords })
    }

    pub fn concepts(&self) -> &Arc<ConceptSet> {
        &self.concepts
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    pub fn dims(&self) -> usize {
        self.coords.ncols()
    }

    pub fn squared_distance(&self, i: usize, j: usize) -> f64 {
        (0..self.dims())
            .map(|c| {
                let d = self.coords[(i, c)] - self.coords[(j, c)];
                d * d
            })
            .sum()
    }

    /// Reorders rows so that they follow `target`'s label order.
    pub fn align_to(&self, target: &Arc<ConceptSet>) -> Result<Self> {
        if *self.concepts == **target {
            return Ok(self.clone());
        }
        let pos = target.permutation_into(&self.concepts)?;
        let coords = DMatrix::from_fn(pos.len(), self.dims(), |i, c| self.coords[(pos[i], c)]);
        Ok(Self {
            concepts: Arc::clone(target),
            coords,
        })
    }
}

/// Optimizer settings for the triplet embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitHyperparams {
    /// Crowd-kernel regularizer added to both squared distances.
    pub mu: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub holdout_fraction: f64,
}

impl Default for FitHyperparams {
    fn default() -> Self {
        Self {
            mu: 0.05,
            learning_rate: 0.5,
            epochs: 2000,
            holdout_fraction: 0.1,
        }
    }
}

impl FitHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::OutOfRange(format!("mu must be > 0, got {}", self.mu)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::OutOfRange(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::OutOfRange("epochs must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::OutOfRange(format!(
                "holdout_fraction must be in [0, 1), got {}",
                self.holdout_fraction
            )));
        }
        Ok(())
    }
}

/// Outcome of a triplet fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean training loss per epoch, recorded before each update, plus the final value.
    pub train_loss_curve: Vec<f64>,
    /// Accuracy on the held-out split; training accuracy when nothing was held out.
    pub holdout_accuracy: f64,
    pub n_train: usize,
    pub n_holdout: usize,
    pub seed: u64,
    pub hyperparams: FitHyperparams,
}

/// Squared Procrustes correlation between two structures with its permutation p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub r_squared: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    pub dims_used: usize,
}
