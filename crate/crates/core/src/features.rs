//! Concept × feature matrices: binarization, verification merging, cosine
//! dissimilarity and bookkeeping.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::{ConceptSet, DissimilarityMatrix, FeatureMatrix};
use crate::error::{Error, Result};

/// A single yes/no verification judgment for one matrix cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationAnswer {
    pub concept: String,
    pub feature: String,
    pub answer: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixStats {
    pub n_concepts: usize,
    pub n_features: usize,
    pub ones: usize,
    pub zeros: usize,
}

/// Maps every non-zero count to 1. Already-binarized input comes back unchanged.
pub fn binarize(m: &FeatureMatrix) -> FeatureMatrix {
    let values = m.values().iter().map(|&v| u8::from(v > 0)).collect();
    FeatureMatrix::new(
        Arc::clone(m.concepts()),
        m.feature_labels().to_vec(),
        values,
        true,
    )
    .expect("binarized values stay within bounds")
}

/// Overwrites every cell of `generated` with its verification answer.
///
/// A negative answer clears a generated 1, a positive answer sets a 0, so the
/// result depends only on the answers; `generated` fixes the shape and labels.
pub fn merge_verification(
    generated: &FeatureMatrix,
    answers: &[VerificationAnswer],
) -> Result<FeatureMatrix> {
    if !generated.is_binarized() {
        return Err(Error::Invariant(
            "verification merges into a binarized matrix".into(),
        ));
    }
    let features: HashMap<&str, usize> = generated
        .feature_labels()
        .iter()
        .enumerate()
        .map(|(i, f)| (f.as_str(), i))
        .collect();
    let nf = generated.n_features();
    let mut cells: Vec<Option<bool>> = vec![None; generated.values().len()];
    for a in answers {
        let c = generated.concepts().index_of(&a.concept).ok_or_else(|| {
            Error::Verification(format!("unknown concept `{}`", a.concept))
        })?;
        let f = *features
            .get(a.feature.as_str())
            .ok_or_else(|| Error::Verification(format!("unknown feature `{}`", a.feature)))?;
        if cells[c * nf + f].replace(a.answer).is_some() {
            return Err(Error::Verification(format!(
                "duplicate answer for ({}, {})",
                a.concept, a.feature
            )));
        }
    }
    let missing: Vec<String> = cells
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_none())
        .map(|(k, _)| {
            format!(
                "({}, {})",
                generated.concepts().label(k / nf),
                generated.feature_labels()[k % nf]
            )
        })
        .collect();
    if !missing.is_empty() {
        let shown: Vec<_> = missing.iter().take(10).cloned().collect();
        return Err(Error::Verification(format!(
            "{} cell(s) without an answer: {}{}",
            missing.len(),
            shown.join(", "),
            if missing.len() > shown.len() { ", ..." } else { "" }
        )));
    }
    let values = cells.into_iter().map(|v| u8::from(v == Some(true))).collect();
    FeatureMatrix::new(
        Arc::clone(generated.concepts()),
        generated.feature_labels().to_vec(),
        values,
        true,
    )
}

/// Pairwise cosine distance between concept rows.
pub fn cosine_dissimilarity(m: &FeatureMatrix) -> Result<DissimilarityMatrix> {
    let n = m.n_concepts();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| m.row(i).iter().map(|&v| f64::from(v)).collect())
        .collect();
    let sq_norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    if let Some(i) = sq_norms.iter().position(|&x| x == 0.0) {
        return Err(Error::ZeroRow {
            concept: m.concepts().label(i).to_string(),
        });
    }
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            // one square root of the exact integer product keeps identical rows at exactly 0
            let v = (1.0 - dot / (sq_norms[i] * sq_norms[j]).sqrt()).max(0.0);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    DissimilarityMatrix::new(Arc::clone(m.concepts()), d)
}

pub fn matrix_stats(m: &FeatureMatrix) -> MatrixStats {
    let ones = m.values().iter().filter(|&&v| v > 0).count();
    MatrixStats {
        n_concepts: m.n_concepts(),
        n_features: m.n_features(),
        ones,
        zeros: m.values().len() - ones,
    }
}

/// Lowercases, trims and collapses internal whitespace.
pub fn normalize_feature_label(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Builds a binarized matrix from per-concept feature lists.
///
/// Labels are normalized and deduplicated by exact string equality; features
/// are ordered by first appearance, walking concepts in set order. Empty
/// strings are dropped.
pub fn tabulate_feature_lists(
    concepts: &Arc<ConceptSet>,
    lists: &BTreeMap<String, Vec<String>>,
) -> Result<FeatureMatrix> {
    for label in lists.keys() {
        if concepts.index_of(label).is_none() {
            return Err(Error::ConceptMismatch(format!("unknown concept `{label}`")));
        }
    }
    let mut feature_index: HashMap<String, usize> = HashMap::new();
    let mut features: Vec<String> = Vec::new();
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for (ci, label) in concepts.labels().iter().enumerate() {
        for raw in lists.get(label).into_iter().flatten() {
            let f = normalize_feature_label(raw);
            if f.is_empty() {
                continue;
            }
            let fi = *feature_index.entry(f.clone()).or_insert_with(|| {
                features.push(f);
                features.len() - 1
            });
            cells.push((ci, fi));
        }
    }
    let nf = features.len();
    let mut values = vec![0u8; concepts.len() * nf];
    for (c, f) in cells {
        values[c * nf + f] = 1;
    }
    FeatureMatrix::new(Arc::clone(concepts), features, values, true)
}
