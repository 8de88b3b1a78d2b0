//! Behavioral data from language models and from a simulated respondent.

pub mod client;
pub mod parse;
pub mod prompts;
pub mod runners;
pub mod simulated;

pub use client::{ChatTransport, HttpTransport, LlmClient, LlmRunConfig, ResponseCache};
pub use parse::{parse_response, ParsedResponse, ResponseContext};
pub use prompts::{render_prompt, PromptTemplate, Task};
pub use runners::{
    all_pairs, run_feature_generation, run_pairwise, run_triplets, run_verification,
    split_feature_list, FeatureGenerationOutput, RunOutput, UnresolvedQuery, VerificationOutput,
};
pub use simulated::{calibrate_luce_beta, luce_self_consistency, Noise, Planted, SimulatedRespondent};
