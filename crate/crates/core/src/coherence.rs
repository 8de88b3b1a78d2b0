//! Structure coherence: Procrustes correlation between configurations,
//! permutation significance, and helpers for Likert rating data.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{CoherenceReport, ConceptSet, Configuration, DissimilarityMatrix, RatingRecord};
use crate::error::{Error, Result};
use crate::mds::classical_mds;

/// Column-centered coordinates of two configurations, padded to equal width.
struct CenteredPair {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    norm: f64,
}

fn centered(m: &DMatrix<f64>, width: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, width);
    for c in 0..m.ncols() {
        let mean = m.column(c).sum() / n as f64;
        for r in 0..n {
            out[(r, c)] = m[(r, c)] - mean;
        }
    }
    out
}

impl CenteredPair {
    fn new(x: &Configuration, y: &Configuration) -> Result<Self> {
        let y = y.align_to(x.concepts())?;
        let width = x.dims().max(y.dims());
        let xc = centered(x.coords(), width);
        let yc = centered(y.coords(), width);
        let (tx, ty) = (xc.norm_squared(), yc.norm_squared());
        if tx == 0.0 || ty == 0.0 {
            return Err(Error::DegenerateConfiguration);
        }
        Ok(Self {
            x: xc,
            y: yc,
            norm: tx * ty,
        })
    }

    fn r2_with_rows(&self, rows: Option<&[usize]>) -> f64 {
        let cross = match rows {
            None => self.x.transpose() * &self.y,
            Some(p) => {
                let yp = DMatrix::from_fn(self.y.nrows(), self.y.ncols(), |r, c| self.y[(p[r], c)]);
                self.x.transpose() * yp
            }
        };
        let trace_norm: f64 = cross.singular_values().iter().sum();
        (trace_norm * trace_norm / self.norm).clamp(0.0, 1.0)
    }
}

/// Squared Procrustes correlation after optimal translation, scaling and
/// orthogonal transformation (reflections allowed). Rows are matched by label.
pub fn procrustes_r2(x: &Configuration, y: &Configuration) -> Result<f64> {
    Ok(CenteredPair::new(x, y)?.r2_with_rows(None))
}

/// Embeds both matrices with classical MDS at `k` dimensions and compares the
/// embeddings. The p-value is left at 1 with zero permutations.
pub fn dissimilarity_r2(
    a: &DissimilarityMatrix,
    b: &DissimilarityMatrix,
    k: usize,
) -> Result<CoherenceReport> {
    let b = b.align_to(a.concepts())?;
    let x = classical_mds(a, k)?.configuration;
    let y = classical_mds(&b, k)?.configuration;
    Ok(CoherenceReport {
        r_squared: procrustes_r2(&x, &y)?,
        p_value: 1.0,
        n_permutations: 0,
        dims_used: k,
    })
}

/// One-sided permutation p-value for `procrustes_r2(x, y)`, permuting the rows of `y`.
///
/// Replicate `i` draws its permutation from stream `i` of a ChaCha generator
/// seeded with `seed`, so the result does not depend on thread count.
pub fn permutation_test(x: &Configuration, y: &Configuration, n_perm: usize, seed: u64) -> Result<f64> {
    if n_perm == 0 {
        return Err(Error::OutOfRange("n_perm must be ≥ 1".into()));
    }
    let pair = CenteredPair::new(x, y)?;
    let observed = pair.r2_with_rows(None);
    let n = x.len();
    let hits: usize = (0..n_perm as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            usize::from(pair.r2_with_rows(Some(&p)) >= observed)
        })
        .sum();
    Ok((1 + hits) as f64 / (n_perm + 1) as f64)
}

/// Procrustes r² plus its permutation p-value.
pub fn procrustes_test(
    x: &Configuration,
    y: &Configuration,
    n_perm: usize,
    seed: u64,
) -> Result<CoherenceReport> {
    Ok(CoherenceReport {
        r_squared: procrustes_r2(x, y)?,
        p_value: permutation_test(x, y, n_perm, seed)?,
        n_permutations: n_perm,
        dims_used: x.dims().max(y.dims()),
    })
}

/// Mean Likert rating per unordered pair, mapped to `(7 - mean) / 6`.
pub fn ratings_to_dissimilarity(
    records: &[RatingRecord],
    concepts: &Arc<ConceptSet>,
) -> Result<DissimilarityMatrix> {
    let n = concepts.len();
    let mut sum = DMatrix::<f64>::zeros(n, n);
    let mut count = DMatrix::<u32>::zeros(n, n);
    for r in records {
        r.validate(n)?;
        let (i, j) = (r.concept_i.min(r.concept_j), r.concept_i.max(r.concept_j));
        sum[(i, j)] += f64::from(r.rating);
        count[(i, j)] += 1;
    }
    let mut missing = Vec::new();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if count[(i, j)] == 0 {
                missing.push((concepts.label(i).to_string(), concepts.label(j).to_string()));
                continue;
            }
            let mean = sum[(i, j)] / f64::from(count[(i, j)]);
            let v = (7.0 - mean) / 6.0;
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingPairs(missing));
    }
    DissimilarityMatrix::new(Arc::clone(concepts), d)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Mean pairwise Pearson correlation between respondents' rating vectors.
///
/// Pairs are unordered; a respondent who rated the same pair more than once
/// contributes the mean of those ratings.
pub fn inter_rater_reliability(records: &[RatingRecord]) -> Result<f64> {
    let mut by_rater: BTreeMap<&str, BTreeMap<(usize, usize), (f64, u32)>> = BTreeMap::new();
    for r in records {
        if r.concept_i == r.concept_j || !(1..=7).contains(&r.rating) {
            return Err(Error::Invariant(format!("invalid rating record {r:?}")));
        }
        let key = (r.concept_i.min(r.concept_j), r.concept_i.max(r.concept_j));
        let e = by_rater.entry(r.respondent_id.as_str()).or_default().entry(key).or_default();
        e.0 += f64::from(r.rating);
        e.1 += 1;
    }
    if by_rater.len() < 2 {
        return Err(Error::OutOfRange(format!(
            "need at least 2 respondents, got {}",
            by_rater.len()
        )));
    }
    let pairs: BTreeSet<(usize, usize)> = by_rater.values().flat_map(|m| m.keys().copied()).collect();
    let mut vectors: Vec<(&str, Vec<f64>)> = Vec::with_capacity(by_rater.len());
    for (rater, ratings) in &by_rater {
        if ratings.len() != pairs.len() {
            return Err(Error::Invariant(format!(
                "respondent `{rater}` rated {} of {} pairs",
                ratings.len(),
                pairs.len()
            )));
        }
        let v: Vec<f64> = pairs.iter().map(|p| ratings[p].0 / f64::from(ratings[p].1)).collect();
        let first = v[0];
        if v.iter().all(|&x| x == first) {
            return Err(Error::ZeroVariance {
                respondent: rater.to_string(),
            });
        }
        vectors.push((rater, v));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            total += pearson(&vectors[i].1, &vectors[j].1);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Square table of pairwise coherence reports between named structures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceTable {
    pub names: Vec<String>,
    pub dims: usize,
    pub n_permutations: usize,
    pub seed: u64,
    pub cells: Vec<Vec<CoherenceReport>>,
}

impl CoherenceTable {
    pub fn r_squared(&self, i: usize, j: usize) -> f64 {
        self.cells[i][j].r_squared
    }

    /// r² matrix as CSV: header `,name1,name2,...`, one row per structure.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![String::new()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.names.iter().zip(&self.cells) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|c| crate::io::fmt_f64(c.r_squared)));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Compares every pair of structures: each is embedded once with classical
/// MDS at `k` dimensions, then each off-diagonal cell gets the Procrustes r²
/// and its permutation p-value. All structures are aligned by label to the
/// first one's concept order.
pub fn coherence_matrix(
    structures: &[(String, DissimilarityMatrix)],
    k: usize,
    n_perm: usize,
    seed: u64,
) -> Result<CoherenceTable> {
    if structures.len() < 2 {
        return Err(Error::OutOfRange(format!(
            "need at least 2 structures, got {}",
            structures.len()
        )));
    }
    let basis = Arc::clone(structures[0].1.concepts());
    let configs = structures
        .iter()
        .map(|(_, d)| Ok(classical_mds(&d.align_to(&basis)?, k)?.configuration))
        .collect::<Result<Vec<_>>>()?;
    let m = structures.len();
    let mut cells = vec![vec![None; m]; m];
    for i in 0..m {
        for j in i..m {
            let mut report = procrustes_test(&configs[i], &configs[j], n_perm, seed)?;
            report.dims_used = k;
            if i == j {
                report.r_squared = 1.0;
            }
            cells[i][j] = Some(report);
            cells[j][i] = Some(report);
        }
    }
    Ok(CoherenceTable {
        names: structures.iter().map(|(n, _)| n.clone()).collect(),
        dims: k,
        n_permutations: n_perm,
        seed,
        cells: cells
            .into_iter()
            .map(|row| row.into_iter().map(|c| c.expect("filled")).collect())
            .collect(),
    })
}
