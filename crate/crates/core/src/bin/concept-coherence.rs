//! Command-line front end: one subcommand per pipeline stage.
//!
//! Errors go to stderr as `{"error": <kind>, "message": <text>}` with a
//! nonzero exit status.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use concept_coherence::cluster::{agglomerate, cut_clusters, export_dendrogram, ExportFormat, Linkage};
use concept_coherence::coherence::{
    coherence_matrix, inter_rater_reliability, procrustes_test, ratings_to_dissimilarity,
};
use concept_coherence::elicitation::runners::{
    FeatureGenerationOutput, DEFAULT_FEATURE_REPS, FEATURE_GENERATION_TEMPERATURE,
};
use concept_coherence::elicitation::{
    all_pairs, calibrate_luce_beta, run_feature_generation, run_pairwise, run_triplets, run_verification,
    LlmClient, LlmRunConfig, Noise, Planted, PromptTemplate, SimulatedRespondent, Task,
};
use concept_coherence::embedding::{fit_triplets, sample_triplets};
use concept_coherence::features::{
    binarize, cosine_dissimilarity, matrix_stats, merge_verification, tabulate_feature_lists,
    VerificationAnswer,
};
use concept_coherence::mds::{classical_mds, distance_matrix};
use concept_coherence::service::ServiceConfig;
use concept_coherence::synthetic::gaussian_configuration_for;
use concept_coherence::{
    io, ConceptSet, Configuration, DissimilarityMatrix, Error, FitHyperparams, RatingRecord, Result,
    TripletRecord,
};

#[derive(Parser)]
#[command(name = "concept-coherence", version, about = "Conceptual structure from behavioral judgments")]
struct Cli {
    /// TOML file with [llm], [fit] and [service] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InOut {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ConceptsArg {
    /// `label,category` CSV; defaults to the built-in 30 tools and reptiles.
    #[arg(long)]
    concepts: Option<PathBuf>,
}

impl ConceptsArg {
    fn load(&self) -> Result<Arc<ConceptSet>> {
        Ok(Arc::new(match &self.concepts {
            Some(p) => io::read_concept_set(io::open(p)?)?,
            None => ConceptSet::tools_and_reptiles(),
        }))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate raw feature lists (JSON) into a binarized matrix CSV.
    IngestFeatures {
        #[command(flatten)]
        io: InOut,
        #[command(flatten)]
        concepts: ConceptsArg,
    },
    /// Map every non-zero count to 1.
    Binarize {
        #[command(flatten)]
        io: InOut,
    },
    /// Overwrite matrix cells with verification answers (JSONL).
    VerifyMerge {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        answers: PathBuf,
    },
    /// Cosine dissimilarity between feature rows.
    Cosine {
        #[command(flatten)]
        io: InOut,
    },
    /// Classical MDS of a dissimilarity CSV into an embedding JSON.
    Mds {
        #[command(flatten)]
        io: InOut,
        #[arg(long, default_value_t = 3)]
        dims: usize,
    },
    /// Fit an ordinal embedding to triplet judgments (JSONL).
    FitTriplets {
        #[command(flatten)]
        io: InOut,
        #[command(flatten)]
        concepts: ConceptsArg,
        #[arg(long, default_value_t = 3)]
        dims: usize,
        /// Held-out fraction of judgments.
        #[arg(long)]
        holdout: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the fit report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Average Likert ratings (JSONL) into a dissimilarity CSV.
    RatingsToDissim {
        #[command(flatten)]
        io: InOut,
        #[command(flatten)]
        concepts: ConceptsArg,
        /// Also write mean pairwise inter-rater correlation here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Procrustes r² and permutation p-value between two structures.
    Procrustes {
        /// Embedding JSON or dissimilarity CSV.
        #[arg(long)]
        input: PathBuf,
        /// Embedding JSON or dissimilarity CSV.
        #[arg(long)]
        other: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Dimensions for dissimilarity inputs.
        #[arg(long, default_value_t = 3)]
        dims: usize,
        #[arg(long, default_value_t = 999)]
        n_perm: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pairwise coherence between several structures, as an r² CSV.
    CoherenceMatrix {
        /// Repeat once per structure: dissimilarity CSV or embedding JSON.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Structure names, in input order; file stems by default.
        #[arg(long)]
        name: Vec<String>,
        #[arg(long)]
        output: PathBuf,
        /// Full table with p-values (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        dims: usize,
        #[arg(long, default_value_t = 999)]
        n_perm: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Hierarchical clustering of a dissimilarity CSV.
    Cluster {
        #[command(flatten)]
        io: InOut,
        #[arg(long, default_value = "average")]
        linkage: Linkage,
        #[arg(long, default_value = "newick")]
        format: ExportFormat,
        /// Write `label,cluster` for a cut into this many clusters instead.
        #[arg(long)]
        cut: Option<usize>,
    },
    /// Query a language model.
    Elicit {
        #[arg(value_enum)]
        task: TaskArg,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        concepts: ConceptsArg,
        /// Feature matrix whose columns are verified (verification), or a
        /// triplet JSONL whose queries are reused (triplet).
        #[arg(long)]
        input: Option<PathBuf>,
        /// `default` or `alternate`.
        #[arg(long, default_value = "default")]
        template: String,
        #[arg(long, default_value_t = DEFAULT_FEATURE_REPS)]
        n_reps: u32,
        /// Triplets to sample when no --input is given.
        #[arg(long, default_value_t = 3600)]
        n_trials: usize,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Answer a task from a planted structure.
    Simulate {
        #[arg(value_enum)]
        task: SimTask,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        concepts: ConceptsArg,
        /// Planted embedding JSON or feature-matrix CSV; a seeded Gaussian
        /// configuration when absent.
        #[arg(long)]
        planted: Option<PathBuf>,
        /// Dimensions of a generated planted configuration.
        #[arg(long, default_value_t = 3)]
        dims: usize,
        #[arg(long, value_enum, default_value = "deterministic")]
        noise: NoiseArg,
        /// Luce inverse temperature.
        #[arg(long)]
        beta: Option<f64>,
        /// Calibrate beta to this self-consistency instead.
        #[arg(long)]
        self_consistency: Option<f64>,
        #[arg(long, default_value_t = 3600)]
        n_trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Seed for the triplet queries; defaults to --seed.
        #[arg(long)]
        query_seed: Option<u64>,
        #[arg(long, default_value_t = 600)]
        n_features: usize,
        #[arg(long, default_value_t = 2.5)]
        radius_factor: f64,
    },
    /// Run the data-collection HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        store_dir: Option<PathBuf>,
        #[command(flatten)]
        concepts: ConceptsArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Features,
    Verification,
    Triplet,
    Pairwise,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Features => Task::FeatureGeneration,
            TaskArg::Verification => Task::FeatureVerification,
            TaskArg::Triplet => Task::Triplet,
            TaskArg::Pairwise => Task::Pairwise,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SimTask {
    /// Write the planted configuration itself.
    Planted,
    Features,
    Verification,
    Triplet,
    Pairwise,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Deterministic,
    Luce,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct ConfigFile {
    llm: Option<LlmRunConfig>,
    fit: Option<FitHyperparams>,
    service: Option<ServiceConfig>,
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = io::create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = io::create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn is_json(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("json")
}

/// Embedding JSON as is, or a dissimilarity CSV through classical MDS.
fn load_structure_config(path: &Path, dims: usize) -> Result<Configuration> {
    if is_json(path) {
        io::read_configuration(io::open(path)?, None)
    } else {
        Ok(classical_mds(&io::read_dissimilarity(io::open(path)?, None)?, dims)?.configuration)
    }
}

/// Dissimilarity CSV as is, or an embedding JSON through Euclidean distances.
fn load_structure_dissim(path: &Path) -> Result<DissimilarityMatrix> {
    if is_json(path) {
        Ok(distance_matrix(&io::read_configuration(io::open(path)?, None)?))
    } else {
        io::read_dissimilarity(io::open(path)?, None)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FeatureListsInput {
    Run(FeatureGenerationOutput),
    Lists(BTreeMap<String, Vec<String>>),
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::IngestFeatures { io: f, concepts } => {
            let cs = concepts.load()?;
            let lists = match serde_json::from_reader(io::open(&f.input)?)? {
                FeatureListsInput::Run(r) => r.lists,
                FeatureListsInput::Lists(l) => l,
            };
            let m = tabulate_feature_lists(&cs, &lists)?;
            let s = matrix_stats(&m);
            log::info!("{} concepts × {} features, {} ones", s.n_concepts, s.n_features, s.ones);
            io::write_feature_matrix(&m, io::create(&f.output)?)
        }
        Command::Binarize { io: f } => {
            let m = io::read_feature_matrix(io::open(&f.input)?, None)?;
            io::write_feature_matrix(&binarize(&m), io::create(&f.output)?)
        }
        Command::VerifyMerge { io: f, answers } => {
            let m = io::read_feature_matrix(io::open(&f.input)?, None)?;
            let answers: Vec<VerificationAnswer> = io::read_jsonl(io::open(&answers)?)?;
            let merged = merge_verification(&binarize(&m), &answers)?;
            io::write_feature_matrix(&merged, io::create(&f.output)?)
        }
        Command::Cosine { io: f } => {
            let m = io::read_feature_matrix(io::open(&f.input)?, None)?;
            io::write_dissimilarity(&cosine_dissimilarity(&m)?, io::create(&f.output)?)
        }
        Command::Mds { io: f, dims } => {
            let d = io::read_dissimilarity(io::open(&f.input)?, None)?;
            let r = classical_mds(&d, dims)?;
            let mut w = io::create(&f.output)?;
            io::write_configuration(&r.configuration, &mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::FitTriplets {
            io: f,
            concepts,
            dims,
            holdout,
            epochs,
            learning_rate,
            mu,
            seed,
            report,
        } => {
            let cs = concepts.load()?;
            let triplets: Vec<TripletRecord> = io::read_jsonl(io::open(&f.input)?)?;
            let mut hp = cfg.fit.unwrap_or_default();
            if let Some(h) = holdout {
                hp.holdout_fraction = h;
            }
            if let Some(e) = epochs {
                hp.epochs = e;
            }
            if let Some(l) = learning_rate {
                hp.learning_rate = l;
            }
            if let Some(m) = mu {
                hp.mu = m;
            }
            let (config, fit) = fit_triplets(&triplets, &cs, dims, &hp, seed)?;
            log::info!("holdout accuracy {:.4}", fit.holdout_accuracy);
            let mut w = io::create(&f.output)?;
            io::write_configuration(&config, &mut w)?;
            w.flush()?;
            if let Some(p) = report {
                write_json(&p, &fit)?;
            }
            Ok(())
        }
        Command::RatingsToDissim { io: f, concepts, report } => {
            let cs = concepts.load()?;
            let records: Vec<RatingRecord> = io::read_jsonl(io::open(&f.input)?)?;
            let d = ratings_to_dissimilarity(&records, &cs)?;
            io::write_dissimilarity(&d, io::create(&f.output)?)?;
            if let Some(p) = report {
                let reliability = inter_rater_reliability(&records).ok();
                write_json(&p, &serde_json::json!({ "inter_rater_reliability": reliability }))?;
            }
            Ok(())
        }
        Command::Procrustes {
            input,
            other,
            output,
            dims,
            n_perm,
            seed,
        } => {
            let x = load_structure_config(&input, dims)?;
            let y = load_structure_config(&other, dims)?.align_to(x.concepts())?;
            write_json(&output, &procrustes_test(&x, &y, n_perm, seed)?)
        }
        Command::CoherenceMatrix {
            input,
            name,
            output,
            report,
            dims,
            n_perm,
            seed,
        } => {
            if !name.is_empty() && name.len() != input.len() {
                return Err(Error::OutOfRange(format!(
                    "{} names for {} inputs",
                    name.len(),
                    input.len()
                )));
            }
            let structures = input
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let n = name.get(i).cloned().unwrap_or_else(|| {
                        p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
                    });
                    Ok((n, load_structure_dissim(p)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let table = coherence_matrix(&structures, dims, n_perm, seed)?;
            write_text(&output, &table.to_csv()?)?;
            if let Some(p) = report {
                write_json(&p, &table)?;
            }
            Ok(())
        }
        Command::Cluster {
            io: f,
            linkage,
            format,
            cut,
        } => {
            let d = io::read_dissimilarity(io::open(&f.input)?, None)?;
            let tree = agglomerate(&d, linkage);
            match cut {
                None => write_text(&f.output, &export_dendrogram(&tree, format)),
                Some(k) => {
                    let labels = cut_clusters(&tree, k)?;
                    let mut w = csv::Writer::from_writer(io::create(&f.output)?);
                    w.write_record(["label", "cluster"])?;
                    for (l, c) in d.concepts().labels().iter().zip(labels) {
                        w.write_record([l.as_str(), &c.to_string()])?;
                    }
                    w.flush()?;
                    Ok(())
                }
            }
        }
        Command::Elicit {
            task,
            output,
            concepts,
            input,
            template,
            n_reps,
            n_trials,
            temperature,
            seed,
        } => {
            let cs = concepts.load()?;
            let task: Task = task.into();
            let template = PromptTemplate::named(task, &template)?;
            let mut llm = cfg.llm.unwrap_or_default();
            llm.temperature = temperature.unwrap_or(match task {
                Task::FeatureGeneration => FEATURE_GENERATION_TEMPERATURE,
                _ => llm.temperature,
            });
            let client = LlmClient::http(llm)?;
            match task {
                Task::FeatureGeneration => {
                    let out = run_feature_generation(&client, &cs, &template, n_reps)?;
                    if out.failures().next().is_some() {
                        log::warn!("{} completion(s) failed", out.failures().count());
                    }
                    write_json(&output, &out)
                }
                Task::FeatureVerification => {
                    let path = input.ok_or_else(|| {
                        Error::InvalidPayload("verification needs --input <feature matrix>".into())
                    })?;
                    let m = io::read_feature_matrix(io::open(&path)?, Some(&cs))?;
                    let out = run_verification(&client, &cs, m.feature_labels(), &template)?;
                    if !out.unresolved.is_empty() {
                        write_json(&output.with_extension("unresolved.json"), &out.unresolved)?;
                    }
                    io::write_jsonl(&out.answers, io::create(&output)?)
                }
                Task::Triplet => {
                    let queries = match input {
                        Some(p) => io::read_jsonl::<TripletRecord, _>(io::open(&p)?)?
                            .iter()
                            .map(|t| (t.anchor, t.option_a, t.option_b))
                            .collect(),
                        None => sample_triplets(&cs, n_trials, seed)?,
                    };
                    let out = run_triplets(&client, &cs, &queries, &template)?;
                    log::info!("{} triplets answered, {} skipped", out.records.len(), out.skipped.len());
                    io::write_jsonl(&out.records, io::create(&output)?)
                }
                Task::Pairwise => {
                    let out = run_pairwise(&client, &cs, &all_pairs(cs.len()), &template)?;
                    log::info!("{} pairs rated, {} skipped", out.records.len(), out.skipped.len());
                    io::write_jsonl(&out.records, io::create(&output)?)
                }
            }
        }
        Command::Simulate {
            task,
            output,
            concepts,
            planted,
            dims,
            noise,
            beta,
            self_consistency,
            n_trials,
            seed,
            query_seed,
            n_features,
            radius_factor,
        } => {
            let cs = concepts.load()?;
            let planted = match planted {
                Some(p) if is_json(&p) => Planted::Geometry(io::read_configuration(io::open(&p)?, Some(&cs))?),
                Some(p) => Planted::Features(io::read_feature_matrix(io::open(&p)?, Some(&cs))?),
                None => Planted::Geometry(gaussian_configuration_for(&cs, dims, 1.0, seed)?),
            };
            if let SimTask::Planted = task {
                return match &planted {
                    Planted::Geometry(c) => {
                        let mut w = io::create(&output)?;
                        io::write_configuration(c, &mut w)?;
                        w.flush()?;
                        Ok(())
                    }
                    Planted::Features(m) => io::write_feature_matrix(m, io::create(&output)?),
                };
            }
            let base = SimulatedRespondent::with_feature_model(
                planted.clone(),
                Noise::Deterministic,
                seed,
                n_features,
                radius_factor,
            )?;
            let noise = match (noise, beta, self_consistency) {
                (NoiseArg::Deterministic, _, _) => Noise::Deterministic,
                (NoiseArg::Luce, Some(b), None) => Noise::Luce { beta: b },
                (NoiseArg::Luce, None, Some(t)) => Noise::Luce {
                    beta: calibrate_luce_beta(base.distances(), t)?,
                },
                (NoiseArg::Luce, _, _) => {
                    return Err(Error::InvalidPayload(
                        "luce noise needs exactly one of --beta or --self-consistency".into(),
                    ))
                }
            };
            if let Noise::Luce { beta } = noise {
                log::info!("Luce beta = {beta}");
            }
            let r = SimulatedRespondent::with_feature_model(planted, noise, seed, n_features, radius_factor)?;
            match task {
                SimTask::Planted => unreachable!("handled above"),
                SimTask::Features => write_json(&output, &r.answer_feature_generation()),
                SimTask::Verification => {
                    let m = r.feature_matrix();
                    let cells: Vec<(String, String)> = m
                        .concepts()
                        .labels()
                        .iter()
                        .flat_map(|c| m.feature_labels().iter().map(move |f| (c.clone(), f.clone())))
                        .collect();
                    io::write_jsonl(&r.answer_verification(&cells)?, io::create(&output)?)
                }
                SimTask::Triplet => {
                    let queries = sample_triplets(&cs, n_trials, query_seed.unwrap_or(seed))?;
                    io::write_jsonl(&r.answer_triplets(&queries)?, io::create(&output)?)
                }
                SimTask::Pairwise => io::write_jsonl(&r.answer_pairwise(&all_pairs(cs.len()))?, io::create(&output)?),
            }
        }
        Command::Serve {
            port,
            store_dir,
            concepts,
        } => {
            let mut svc = cfg.service.unwrap_or_default().with_env()?;
            if let Some(p) = port {
                svc.port = p;
            }
            if let Some(d) = store_dir {
                svc.store_dir = d;
            }
            if concepts.concepts.is_some() {
                svc.concepts = concepts.concepts;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(concept_coherence::service::serve(svc, |addr| {
                eprintln!("listening on {addr}");
            }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", serde_json::json!({"error": "usage", "message": msg.trim_end()}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}
