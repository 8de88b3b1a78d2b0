//! Batch elicitation: feature listing, feature verification, triplets and
//! pairwise ratings against an [`LlmClient`].

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::client::{Completion, LlmClient};
use super::parse::{parse_response, ParsedResponse, ResponseContext};
use super::prompts::PromptTemplate;
use crate::domain::{utc_now, Choice, ConceptSet, RatingRecord, Source, TripletRecord};
use crate::error::{Error, Result};
use crate::features::{normalize_feature_label, VerificationAnswer};

/// Default repetitions per concept for feature listing.
pub const DEFAULT_FEATURE_REPS: u32 = 5;
/// Default sampling temperature for feature listing.
pub const FEATURE_GENERATION_TEMPERATURE: f64 = 0.7;

/// Runs `f` over `items` on up to `concurrency` threads; results come back in
/// input order.
pub(crate) fn map_concurrent<T, R, F>(items: &[T], concurrency: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = concurrency.clamp(1, items.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every item processed"))
        .collect()
}

/// One raw feature-listing completion with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub concept: String,
    pub rep: u32,
    pub model: String,
    pub temperature: f64,
    pub prompt: String,
    /// Verbatim completion; absent when the request failed.
    pub response: Option<String>,
    pub error: Option<String>,
    pub cached: bool,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGenerationOutput {
    /// `n_reps` records per concept, concept-major.
    pub records: Vec<GenerationRecord>,
    /// Normalized candidate features per concept label, in response order.
    pub lists: BTreeMap<String, Vec<String>>,
}

impl FeatureGenerationOutput {
    pub fn failures(&self) -> impl Iterator<Item = &GenerationRecord> {
        self.records.iter().filter(|r| r.error.is_some())
    }
}

/// Splits a free-text feature listing into normalized candidate features.
///
/// Lines and commas separate items; list markers ("1.", "-", "*", "•") and
/// a trailing period are stripped.
pub fn split_feature_list(text: &str) -> Vec<String> {
    text.split(['\n', ','])
        .map(|item| {
            let t = item.trim();
            let t = t.trim_start_matches(['-', '*', '•']);
            let t = match t.find(|c: char| !c.is_ascii_digit()) {
                Some(p) if p > 0 && (t[p..].starts_with('.') || t[p..].starts_with(')')) => &t[p + 1..],
                _ => t,
            };
            normalize_feature_label(t.trim().trim_end_matches('.'))
        })
        .filter(|f| !f.is_empty())
        .collect()
}

fn bind<'a>(pairs: &[(&'a str, &'a str)]) -> BTreeMap<&'a str, &'a str> {
    pairs.iter().copied().collect()
}

/// Asks for the features of every concept `n_reps` times. Transport failures
/// are recorded on the affected (concept, rep) and do not stop the run.
pub fn run_feature_generation(
    client: &LlmClient,
    concepts: &ConceptSet,
    template: &PromptTemplate,
    n_reps: u32,
) -> Result<FeatureGenerationOutput> {
    if n_reps == 0 {
        return Err(Error::OutOfRange("n_reps must be ≥ 1".into()));
    }
    let mut jobs = Vec::new();
    for label in concepts.labels() {
        let prompt = template.render(&bind(&[("concept1", label)]))?;
        for rep in 0..n_reps {
            jobs.push((label.clone(), rep, prompt.clone()));
        }
    }
    let cfg = client.config();
    let records = map_concurrent(&jobs, cfg.concurrency, |_, (concept, rep, prompt)| {
        let (response, error, cached) = match client.complete(prompt, *rep) {
            Ok(Completion { text, cached }) => (Some(text), None, cached),
            Err(e) => {
                warn!("feature generation failed for {concept} rep {rep}: {e}");
                (None, Some(e.to_string()), false)
            }
        };
        GenerationRecord {
            concept: concept.clone(),
            rep: *rep,
            model: cfg.model_name.clone(),
            temperature: cfg.temperature,
            prompt: prompt.clone(),
            response,
            error,
            cached,
            timestamp: utc_now(),
        }
    });
    let mut lists: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in &records {
        let entry = lists.entry(r.concept.clone()).or_default();
        if let Some(text) = &r.response {
            entry.extend(split_feature_list(text));
        }
    }
    Ok(FeatureGenerationOutput { records, lists })
}

/// A query whose responses never parsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedQuery {
    pub index: usize,
    pub prompt: String,
    pub responses: Vec<String>,
}

/// Queries `prompt` until the response parses or `attempts` draws are used.
/// Each draw has its own cache slot so that a cached unparseable answer is
/// not simply replayed.
fn ask_until_parsed(
    client: &LlmClient,
    prompt: &str,
    context: ResponseContext<'_>,
    attempts: u32,
) -> Result<std::result::Result<ParsedResponse, Vec<String>>> {
    let mut seen = Vec::new();
    for sample in 0..attempts {
        let text = client.complete(prompt, sample)?.text;
        match parse_response(context, &text) {
            Ok(p) => return Ok(Ok(p)),
            Err(_) => {
                warn!("unparseable response {text:?} to {prompt:?}");
                seen.push(text);
            }
        }
    }
    Ok(Err(seen))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutput {
    /// One answer per resolved cell, concept-major.
    pub answers: Vec<VerificationAnswer>,
    pub unresolved: Vec<UnresolvedQuery>,
}

/// Asks a yes/no question for every (concept, feature) cell. Unparseable
/// cells are re-queried up to `max_retries` times, then reported unresolved.
pub fn run_verification(
    client: &LlmClient,
    concepts: &ConceptSet,
    features: &[String],
    template: &PromptTemplate,
) -> Result<VerificationOutput> {
    let mut cells = Vec::with_capacity(concepts.len() * features.len());
    for c in concepts.labels() {
        for f in features {
            let prompt = template.render(&bind(&[("concept1", c), ("property1", f)]))?;
            cells.push((c.clone(), f.clone(), prompt));
        }
    }
    let attempts = client.config().max_retries + 1;
    let results = map_concurrent(&cells, client.config().concurrency, |_, (_, _, prompt)| {
        ask_until_parsed(client, prompt, ResponseContext::Verification, attempts)
    });
    let mut out = VerificationOutput {
        answers: Vec::new(),
        unresolved: Vec::new(),
    };
    for (i, ((concept, feature, prompt), r)) in cells.into_iter().zip(results).enumerate() {
        match r? {
            Ok(ParsedResponse::Verified(answer)) => out.answers.push(VerificationAnswer {
                concept,
                feature,
                answer,
            }),
            Ok(other) => unreachable!("verification context parsed as {other:?}"),
            Err(responses) => out.unresolved.push(UnresolvedQuery {
                index: i,
                prompt,
                responses,
            }),
        }
    }
    info!(
        "verification: {} answered, {} unresolved",
        out.answers.len(),
        out.unresolved.len()
    );
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput<T> {
    /// Parsed records in query order.
    pub records: Vec<T>,
    /// Queries skipped after an unparseable response and one re-query.
    pub skipped: Vec<UnresolvedQuery>,
}

/// Asks the triplet question for each `(anchor, option_a, option_b)`.
pub fn run_triplets(
    client: &LlmClient,
    concepts: &ConceptSet,
    triplets: &[(usize, usize, usize)],
    template: &PromptTemplate,
) -> Result<RunOutput<TripletRecord>> {
    for &(a, x, y) in triplets {
        for i in [a, x, y] {
            concepts.check_index(i, "concept")?;
        }
    }
    let results = map_concurrent(triplets, client.config().concurrency, |_, &(a, x, y)| {
        let (la, lx, ly) = (concepts.label(a), concepts.label(x), concepts.label(y));
        let prompt = template.render(&bind(&[("anchor", la), ("concept1", lx), ("concept2", ly)]))?;
        let ctx = ResponseContext::Triplet { options: [lx, ly] };
        Ok::<_, Error>((prompt.clone(), ask_until_parsed(client, &prompt, ctx, 2)?))
    });
    let respondent_id = client.config().model_name.clone();
    let mut out = RunOutput {
        records: Vec::new(),
        skipped: Vec::new(),
    };
    for (i, (&(anchor, option_a, option_b), r)) in triplets.iter().zip(results).enumerate() {
        let (prompt, parsed) = r?;
        match parsed {
            Ok(ParsedResponse::Choice(c)) => out.records.push(TripletRecord {
                anchor,
                option_a,
                option_b,
                choice: if c == 0 { Choice::A } else { Choice::B },
                respondent_id: respondent_id.clone(),
                source: Source::Llm,
                timestamp: utc_now(),
            }),
            Ok(other) => unreachable!("triplet context parsed as {other:?}"),
            Err(responses) => {
                warn!("skipping triplet {i} ({anchor}, {option_a}, {option_b})");
                out.skipped.push(UnresolvedQuery {
                    index: i,
                    prompt,
                    responses,
                });
            }
        }
    }
    Ok(out)
}

/// Asks for a 1-7 similarity rating for each pair.
pub fn run_pairwise(
    client: &LlmClient,
    concepts: &ConceptSet,
    pairs: &[(usize, usize)],
    template: &PromptTemplate,
) -> Result<RunOutput<RatingRecord>> {
    for &(i, j) in pairs {
        concepts.check_index(i, "concept")?;
        concepts.check_index(j, "concept")?;
    }
    let results = map_concurrent(pairs, client.config().concurrency, |_, &(i, j)| {
        let prompt = template.render(&bind(&[("concept1", concepts.label(i)), ("concept2", concepts.label(j))]))?;
        Ok::<_, Error>((prompt.clone(), ask_until_parsed(client, &prompt, ResponseContext::Pairwise, 2)?))
    });
    let respondent_id = client.config().model_name.clone();
    let mut out = RunOutput {
        records: Vec::new(),
        skipped: Vec::new(),
    };
    for (q, (&(concept_i, concept_j), r)) in pairs.iter().zip(results).enumerate() {
        let (prompt, parsed) = r?;
        match parsed {
            Ok(ParsedResponse::Rating(rating)) => out.records.push(RatingRecord {
                concept_i,
                concept_j,
                rating,
                respondent_id: respondent_id.clone(),
                source: Source::Llm,
                timestamp: utc_now(),
            }),
            Ok(other) => unreachable!("pairwise context parsed as {other:?}"),
            Err(responses) => {
                warn!("skipping pair {q} ({concept_i}, {concept_j})");
                out.skipped.push(UnresolvedQuery {
                    index: q,
                    prompt,
                    responses,
                });
            }
        }
    }
    Ok(out)
}

/// Every unordered pair `(i, j)` with `i < j`, row-major.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elicitation::client::tests::FnTransport;
    use crate::elicitation::client::{ChatRequest, LlmRunConfig};
    use crate::elicitation::prompts::Task;
    use std::sync::Arc;

    fn client<F>(f: F, cfg: LlmRunConfig) -> LlmClient
    where
        F: Fn(&ChatRequest) -> Result<String> + Send + Sync + 'static,
    {
        LlmClient::new(Arc::new(FnTransport(f)), cfg).unwrap()
    }

    fn quick() -> LlmRunConfig {
        LlmRunConfig {
            backoff_base_ms: 0,
            concurrency: 3,
            ..Default::default()
        }
    }

    #[test]
    fn splits_feature_lists() {
        assert_eq!(
            split_feature_list("have tail, can stay underwater, have tough skin"),
            vec!["have tail", "can stay underwater", "have tough skin"]
        );
        assert_eq!(
            split_feature_list("1. Has  Scales\n2) lays eggs.\n- is green\n\n* Cold blooded"),
            vec!["has scales", "lays eggs", "is green", "cold blooded"]
        );
        assert_eq!(split_feature_list("   \n,,"), Vec::<String>::new());
    }

    #[test]
    fn feature_generation_counts_and_failures() {
        let cs = ConceptSet::tools_and_reptiles();
        let c = client(
            |r: &ChatRequest| {
                if r.prompt().ends_with("Oilcan") {
                    Err(Error::Transport("refused".into()))
                } else {
                    Ok("has a handle, is useful".into())
                }
            },
            LlmRunConfig {
                max_retries: 0,
                temperature: FEATURE_GENERATION_TEMPERATURE,
                ..quick()
            },
        );
        let t = PromptTemplate::default_for(Task::FeatureGeneration);
        let out = run_feature_generation(&c, &cs, &t, DEFAULT_FEATURE_REPS).unwrap();
        assert_eq!(out.records.len(), 150);
        assert_eq!(out.failures().count(), 5);
        assert!(out.failures().all(|r| r.concept == "Oilcan"));
        assert_eq!(out.lists["Alligator"].len(), 10);
        assert!(out.lists["Oilcan"].is_empty());
        assert_eq!(out.records[5].prompt, "List all the properties of Alligator");
        assert!(out.records.iter().all(|r| r.temperature == 0.7));
        // concept-major, reps in order, despite concurrent completion
        for (k, r) in out.records.iter().enumerate() {
            assert_eq!(r.rep, (k % 5) as u32);
        }
    }

    #[test]
    fn verification_requeries_and_reports_unresolved() {
        let cs = ConceptSet::new(
            vec!["car".into(), "dogs".into(), "cats".into()],
            vec!["x".into(); 3],
        )
        .unwrap();
        let features = vec!["has heart".to_string()];
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        let c = client(
            move |r: &ChatRequest| {
                counter.fetch_add(1, Ordering::SeqCst);
                let p = r.prompt();
                Ok(if p.contains("car") {
                    "No.".into()
                } else if p.contains("dogs") {
                    "Yes".into()
                } else {
                    "It depends".into()
                })
            },
            quick(),
        );
        let t = PromptTemplate::named(Task::FeatureVerification, "alternate").unwrap();
        let out = run_verification(&c, &cs, &features, &t).unwrap();
        assert_eq!(
            out.answers,
            vec![
                VerificationAnswer { concept: "car".into(), feature: "has heart".into(), answer: false },
                VerificationAnswer { concept: "dogs".into(), feature: "has heart".into(), answer: true },
            ]
        );
        assert_eq!(out.unresolved.len(), 1);
        assert_eq!(out.unresolved[0].responses.len(), 4);
        assert_eq!(calls.load(Ordering::SeqCst), 2 + 4);
    }

    #[test]
    fn triplets_skip_after_one_requery() {
        let cs = ConceptSet::tools_and_reptiles();
        let ia = cs.index_of("Alligator").unwrap();
        let is = cs.index_of("Shovel").unwrap();
        let isp = cs.index_of("Spanner").unwrap();
        let ic = cs.index_of("Caiman").unwrap();
        let icr = cs.index_of("Crocodile").unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        let c = client(
            move |r: &ChatRequest| {
                counter.fetch_add(1, Ordering::SeqCst);
                Ok(if r.prompt().contains("Spanner") { "Spanner".into() } else { "Dangerous".into() })
            },
            quick(),
        );
        let t = PromptTemplate::default_for(Task::Triplet);
        let out = run_triplets(&c, &cs, &[(is, ia, isp), (ia, ic, icr)], &t).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].choice, Choice::B);
        assert_eq!(out.records[0].source, Source::Llm);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].index, 1);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn pairwise_prompts_and_ratings() {
        let cs = ConceptSet::tools_and_reptiles();
        let pairs = all_pairs(cs.len());
        assert_eq!(pairs.len(), 435);
        let c = client(|_: &ChatRequest| Ok("6".into()), quick());
        let t = PromptTemplate::default_for(Task::Pairwise);
        let out = run_pairwise(&c, &cs, &pairs, &t).unwrap();
        assert_eq!(out.records.len(), 435);
        assert!(out.records.iter().all(|r| r.rating == 6));
        assert_eq!((out.records[434].concept_i, out.records[434].concept_j), (28, 29));
    }

    #[test]
    fn transport_failure_aborts_triplets() {
        let cs = ConceptSet::numbered(3).unwrap();
        let c = client(
            |_: &ChatRequest| Err(Error::Transport("down".into())),
            LlmRunConfig { max_retries: 1, ..quick() },
        );
        let t = PromptTemplate::default_for(Task::Triplet);
        let err = run_triplets(&c, &cs, &[(0, 1, 2)], &t).unwrap_err();
        assert!(matches!(err, Error::Transport(_)));
    }

    #[test]
    fn map_concurrent_preserves_order() {
        let items: Vec<u64> = (0..200).collect();
        let out = map_concurrent(&items, 8, |i, &x| {
            std::thread::sleep(std::time::Duration::from_micros((x * 7919) % 300));
            (i, x * 2)
        });
        assert!(out.iter().enumerate().all(|(k, &(i, v))| i == k && v == 2 * k as u64));
    }
}
