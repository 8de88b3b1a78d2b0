//! Estimate conceptual structure from behavioral judgments (feature
//! listing and verification, triadic comparisons, pairwise Likert ratings)
//! and measure how coherent those structures are across tasks and
//! respondents.
//!
//! Pipeline stages:
//!
//! - [`features`]: concept × feature matrices to cosine dissimilarities
//! - [`embedding`]: triplet judgments to an ordinal embedding
//! - [`mds`]: dissimilarities to coordinates (classical MDS)
//! - [`coherence`]: squared Procrustes correlation and permutation tests
//! - [`cluster`]: hierarchical clustering and dendrogram export
//! - [`elicitation`]: prompts, LLM client and a simulated respondent
//! - [`service`]: HTTP session server for human data collection

pub mod cluster;
pub mod coherence;
pub mod domain;
pub mod elicitation;
pub mod embedding;
pub mod error;
pub mod features;
pub mod io;
pub mod mds;
pub mod service;
pub mod synthetic;

pub use domain::{
    Choice, CoherenceReport, ConceptSet, Configuration, DissimilarityMatrix, FeatureMatrix,
    FitHyperparams, FitReport, RatingRecord, Source, TripletRecord,
};
pub use error::{Error, Result};
