//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p concept-coherence --test acceptance`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use concept_coherence::cluster::{agglomerate, cut_clusters, Linkage};
use concept_coherence::coherence::{
    coherence_matrix, permutation_test, procrustes_r2, ratings_to_dissimilarity,
};
use concept_coherence::elicitation::{
    all_pairs, calibrate_luce_beta, parse_response, render_prompt, Noise, ParsedResponse, Planted,
    ResponseContext, SimulatedRespondent, Task,
};
use concept_coherence::embedding::{fit_triplets, loss_and_gradient, sample_triplets};
use concept_coherence::features::{
    cosine_dissimilarity, matrix_stats, merge_verification, tabulate_feature_lists, VerificationAnswer,
};
use concept_coherence::mds::{classical_mds, distance_matrix};
use concept_coherence::synthetic::{gaussian_configuration, gaussian_configuration_for, two_blobs};
use concept_coherence::{
    Choice, ConceptSet, Configuration, DissimilarityMatrix, FeatureMatrix, FitHyperparams, Source,
    TripletRecord,
};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    check(
        elapsed < limit,
        format!("{detail}; {:.2}s (limit {:.0}s)", elapsed.as_secs_f64(), limit.as_secs_f64()),
    )
}

fn triplet_records(queries: &[(usize, usize, usize)], planted: &Configuration) -> Vec<TripletRecord> {
    queries
        .iter()
        .map(|&(anchor, option_a, option_b)| {
            let a_nearer = planted.squared_distance(anchor, option_a) < planted.squared_distance(anchor, option_b);
            TripletRecord {
                anchor,
                option_a,
                option_b,
                choice: if a_nearer { Choice::A } else { Choice::B },
                respondent_id: "oracle".into(),
                source: Source::Simulated,
                timestamp: "2000-01-01T00:00:00Z".into(),
            }
        })
        .collect()
}

fn mds_recovery() -> Outcome {
    let start = Instant::now();
    let planted = gaussian_configuration(30, 3, 2024);
    let d = distance_matrix(&planted);
    let recovered = classical_mds(&d, 3).map_err(|e| e.to_string())?.configuration;
    let r2 = procrustes_r2(&planted, &recovered).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(r2 >= 0.999, format!("r² = {r2:.6} (≥ 0.999)"))?;
    within(elapsed, Duration::from_secs(1), format!("r² = {r2:.6}"))
}

/// Crowd-kernel loss written out independently of the library.
fn oracle_loss(x: &DMatrix<f64>, ts: &[TripletRecord], mu: f64) -> f64 {
    let d2 = |i: usize, j: usize| (x.row(i) - x.row(j)).norm_squared();
    ts.iter()
        .map(|t| {
            let (a, c, o) = (t.anchor, t.chosen(), t.other());
            -((mu + d2(a, o)) / (2.0 * mu + d2(a, c) + d2(a, o))).ln()
        })
        .sum()
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mu = 0.05;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let c = gaussian_configuration(10, 3, 100 + seed);
        let queries = sample_triplets(c.concepts(), 40, 200 + seed).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        // random choices, so the loss is not at a trivial optimum
        let ts: Vec<TripletRecord> = triplet_records(&queries, &c)
            .into_iter()
            .map(|mut t| {
                if rng.random::<bool>() {
                    t.choice = Choice::B;
                }
                t
            })
            .collect();
        let (loss, g) = loss_and_gradient(&c, &ts, mu).map_err(|e| e.to_string())?;
        let x = c.coords().clone();
        let reference = oracle_loss(&x, &ts, mu);
        if (loss - reference).abs() > 1e-9 * reference.abs().max(1.0) {
            return Err(format!("seed {seed}: loss {loss} vs oracle {reference}"));
        }
        let mut num = DMatrix::zeros(10, 3);
        for i in 0..10 {
            for k in 0..3 {
                let mut p = x.clone();
                p[(i, k)] += h;
                let mut m = x.clone();
                m[(i, k)] -= h;
                num[(i, k)] = (oracle_loss(&p, &ts, mu) - oracle_loss(&m, &ts, mu)) / (2.0 * h);
            }
        }
        worst = worst.max((&g - &num).norm() / num.norm());
    }
    let elapsed = start.elapsed();
    check(worst <= 1e-5, format!("max relative error {worst:.2e} over 20 instances (≤ 1e-5)"))?;
    within(elapsed, Duration::from_secs(5), format!("max relative error {worst:.2e}"))
}

fn triplet_recovery() -> Outcome {
    let start = Instant::now();
    let cs = Arc::new(ConceptSet::tools_and_reptiles());
    let hp = FitHyperparams::default();
    let mut good = 0;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let planted = gaussian_configuration_for(&cs, 3, 1.0, 1000 + seed).map_err(|e| e.to_string())?;
        let queries = sample_triplets(&cs, 3600, 2000 + seed).map_err(|e| e.to_string())?;
        let ts = triplet_records(&queries, &planted);
        let (fit, report) = fit_triplets(&ts, &cs, 3, &hp, seed).map_err(|e| e.to_string())?;
        let r2 = procrustes_r2(&planted, &fit).map_err(|e| e.to_string())?;
        let ok = report.holdout_accuracy >= 0.95 && r2 >= 0.90;
        good += usize::from(ok);
        lines.push(format!("{:.3}/{:.3}", report.holdout_accuracy, r2));
    }
    let elapsed = start.elapsed();
    let detail = format!("{good}/10 seeds pass (acc/r²: {})", lines.join(" "));
    check(good >= 9, detail.clone())?;
    within(elapsed, Duration::from_secs(60), detail)
}

fn noise_calibration() -> Outcome {
    let cs = Arc::new(ConceptSet::tools_and_reptiles());
    let planted = gaussian_configuration_for(&cs, 3, 1.0, 77).map_err(|e| e.to_string())?;
    let d = distance_matrix(&planted).values().clone();
    let beta = calibrate_luce_beta(&d, 0.75).map_err(|e| e.to_string())?;
    let respondent = SimulatedRespondent::new(Planted::Geometry(planted), Noise::Luce { beta }, 78)
        .map_err(|e| e.to_string())?;
    let queries = sample_triplets(&cs, 3600, 79).map_err(|e| e.to_string())?;
    let ts = respondent.answer_triplets(&queries).map_err(|e| e.to_string())?;
    let (_, report) = fit_triplets(&ts, &cs, 3, &FitHyperparams::default(), 80).map_err(|e| e.to_string())?;
    let acc = report.holdout_accuracy;
    check(
        (0.70..=0.80).contains(&acc),
        format!("beta = {beta:.4}, holdout accuracy {acc:.4} (in [0.70, 0.80])"),
    )
}

/// Features, triplets and ratings from one planted respondent.
fn end_to_end_structures(seed: u64) -> Result<Vec<(String, DissimilarityMatrix)>, String> {
    let cs = Arc::new(ConceptSet::tools_and_reptiles());
    let planted = gaussian_configuration_for(&cs, 3, 1.0, seed).map_err(|e| e.to_string())?;
    let r = SimulatedRespondent::new(Planted::Geometry(planted), Noise::Deterministic, seed)
        .map_err(|e| e.to_string())?;

    let lists = r.answer_feature_generation();
    let features = tabulate_feature_lists(&cs, &lists).map_err(|e| e.to_string())?;
    let feature_d = cosine_dissimilarity(&features).map_err(|e| e.to_string())?;

    let queries = sample_triplets(&cs, 3600, seed + 1).map_err(|e| e.to_string())?;
    let ts = r.answer_triplets(&queries).map_err(|e| e.to_string())?;
    let (fit, _) = fit_triplets(&ts, &cs, 3, &FitHyperparams::default(), seed + 2).map_err(|e| e.to_string())?;

    let ratings = r.answer_pairwise(&all_pairs(cs.len())).map_err(|e| e.to_string())?;
    let rating_d = ratings_to_dissimilarity(&ratings, &cs).map_err(|e| e.to_string())?;

    Ok(vec![
        ("features".into(), feature_d),
        ("triplets".into(), distance_matrix(&fit)),
        ("pairwise".into(), rating_d),
    ])
}

fn end_to_end_coherence() -> Outcome {
    let structures = end_to_end_structures(4242)?;
    let table = coherence_matrix(&structures, 3, 999, 7).map_err(|e| e.to_string())?;
    let mut worst_r2: f64 = 1.0;
    let mut worst_p: f64 = 0.0;
    let mut cells = Vec::new();
    for i in 0..3 {
        for j in i + 1..3 {
            let c = table.cells[i][j];
            worst_r2 = worst_r2.min(c.r_squared);
            worst_p = worst_p.max(c.p_value);
            cells.push(format!("{}-{} {:.3}", table.names[i], table.names[j], c.r_squared));
        }
    }
    check(
        worst_r2 >= 0.85 && worst_p <= 0.001,
        format!("r² {}; min {worst_r2:.3} (≥ 0.85), max p {worst_p:.4} (≤ 0.001)", cells.join(", ")),
    )
}

fn procrustes_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let x = gaussian_configuration(30, 3, seed);
        let rot = Rotation3::from_euler_angles(
            rng.random_range(-3.1..3.1),
            rng.random_range(-1.5..1.5),
            rng.random_range(-3.1..3.1),
        );
        let scale = rng.random_range(0.1..10.0);
        let shift = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let y = DMatrix::from_fn(30, 3, |i, k| {
            let p = Vector3::new(x.coords()[(i, 0)], x.coords()[(i, 1)], x.coords()[(i, 2)]);
            (rot * p * scale + shift)[k]
        });
        let y = Configuration::new(x.concepts().clone(), y).map_err(|e| e.to_string())?;
        let r2 = procrustes_r2(&x, &y).map_err(|e| e.to_string())?;
        worst = worst.max((r2 - 1.0).abs());
    }
    check(worst <= 1e-9, format!("max |r² - 1| = {worst:.1e} under similarity transforms (≤ 1e-9)"))?;

    let x = gaussian_configuration(30, 3, 99);
    let p_self = permutation_test(&x, &x, 999, 1).map_err(|e| e.to_string())?;
    check(p_self <= 0.005, format!("self-comparison p = {p_self:.4} (≤ 0.005)"))?;

    let mut significant = 0;
    for trial in 0..100u64 {
        let a = gaussian_configuration(30, 3, 10_000 + 2 * trial);
        let b = gaussian_configuration(30, 3, 10_001 + 2 * trial);
        if permutation_test(&a, &b, 199, trial).map_err(|e| e.to_string())? <= 0.05 {
            significant += 1;
        }
    }
    check(
        significant <= 12,
        format!("invariance error {worst:.1e}; self p = {p_self:.4}; null p ≤ 0.05 in {significant}/100 (≤ 12)"),
    )
}

fn feature_bookkeeping() -> Outcome {
    let cs = Arc::new(ConceptSet::tools_and_reptiles());
    let (nc, nf) = (30, 580);
    let labels: Vec<String> = (0..nf).map(|f| format!("feature {f}")).collect();
    // 786 ones listed, spread over the first cells
    let mut raw = vec![0u8; nc * nf];
    raw.iter_mut().take(786).for_each(|v| *v = 1);
    let m = FeatureMatrix::new(cs.clone(), labels.clone(), raw, true).map_err(|e| e.to_string())?;
    let s = matrix_stats(&m);
    check(
        (s.ones, s.zeros) == (786, 16614) && s.ones + s.zeros == nc * nf,
        format!("raw ones/zeros {}/{}", s.ones, s.zeros),
    )?;
    let answers: Vec<VerificationAnswer> = (0..nc * nf)
        .map(|k| VerificationAnswer {
            concept: cs.label(k / nf).to_string(),
            feature: labels[k % nf].clone(),
            answer: k < 7845,
        })
        .collect();
    let v = merge_verification(&m, &answers).map_err(|e| e.to_string())?;
    let s = matrix_stats(&v);
    check(
        (s.ones, s.zeros) == (7845, 9555) && s.ones + s.zeros == nc * nf,
        format!("raw 786/16614, verified {}/{} over 30×580", s.ones, s.zeros),
    )
}

/// Average linkage by recomputing mean leaf-to-leaf distances from scratch.
fn brute_force_average(d: &DMatrix<f64>) -> Vec<(Vec<usize>, f64)> {
    let mut clusters: Vec<Vec<usize>> = (0..d.nrows()).map(|i| vec![i]).collect();
    let mut merges = Vec::new();
    while clusters.len() > 1 {
        let mut best = (0, 1, f64::INFINITY);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut s = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        s += d[(i, j)];
                    }
                }
                let avg = s / (clusters[a].len() * clusters[b].len()) as f64;
                if avg < best.2 {
                    best = (a, b, avg);
                }
            }
        }
        let (a, b, h) = best;
        let merged_b = clusters.remove(b);
        clusters[a].extend(merged_b);
        clusters[a].sort();
        merges.push((clusters[a].clone(), h));
    }
    merges
}

fn clustering() -> Outcome {
    let blobs = two_blobs(15, 3, 50.0, 1.0, 31);
    let tree = agglomerate(&distance_matrix(&blobs), Linkage::Average);
    let labels = cut_clusters(&tree, 2).map_err(|e| e.to_string())?;
    let expected: Vec<usize> = (0..30).map(|i| usize::from(i >= 15)).collect();
    check(labels == expected, format!("two-blob cut {labels:?}"))?;

    let upper = [1.0, 4.0, 7.0, 3.5, 6.0, 2.5];
    let mut m = DMatrix::zeros(4, 4);
    let mut k = 0;
    for i in 0..4 {
        for j in i + 1..4 {
            m[(i, j)] = upper[k];
            m[(j, i)] = upper[k];
            k += 1;
        }
    }
    let d = DissimilarityMatrix::new(Arc::new(ConceptSet::numbered(4).unwrap()), m.clone()).map_err(|e| e.to_string())?;
    let tree = agglomerate(&d, Linkage::Average);
    let oracle = brute_force_average(&m);
    let n = tree.n_leaves();
    for (step, (merge, (members, h))) in tree.merges().iter().zip(&oracle).enumerate() {
        let mut leaves = tree.leaves(n + step);
        leaves.sort();
        if leaves != *members || (merge.height - h).abs() > 1e-12 {
            return Err(format!("merge {step}: {leaves:?}@{} vs oracle {members:?}@{h}", merge.height));
        }
    }
    Ok(format!(
        "two-blob partition recovered; 4-point heights {:?} match oracle",
        tree.merges().iter().map(|m| m.height).collect::<Vec<_>>()
    ))
}

fn golden(name: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn prompt_fidelity() -> Outcome {
    let b = |pairs: &[(&'static str, &'static str)]| pairs.iter().copied().collect::<BTreeMap<_, _>>();
    let cases = [
        (Task::FeatureGeneration, b(&[("concept1", "Alligator")]), "feature_generation.txt"),
        (
            Task::FeatureVerification,
            b(&[("concept1", "alligators"), ("property1", "ectothermic")]),
            "feature_verification.txt",
        ),
        (
            Task::Triplet,
            b(&[("anchor", "Shovel"), ("concept1", "Alligator"), ("concept2", "Spanner")]),
            "triplet.txt",
        ),
        (Task::Pairwise, b(&[("concept1", "Alligator"), ("concept2", "Spanner")]), "pairwise.txt"),
    ];
    for (task, bindings, file) in &cases {
        let rendered = render_prompt(*task, bindings).map_err(|e| e.to_string())?;
        if rendered != golden(file) {
            return Err(format!("{task} differs from {file}: {rendered:?}"));
        }
    }
    // head, option 1, option 2, then four model responses
    let table: [[&str; 7]; 5] = [
        ["Shovel", "Alligator", "Spanner", "Alligator", "Alligator", "Spanner", "Spanner"],
        ["Anvil", "Caiman", "Tortoise", "Tortoise", "Caiman", "Caiman", "Caiman"],
        ["Nail", "Boa python", "Snake", "Snake", "Snake", "Boa Python", "Boa python"],
        ["Paint brush", "Chisel", "Toad", "Chisel", "Toad", "Chisel", "Chisel"],
        ["Shovel", "Caiman", "Crocodile", "Crocodile", "Dangerous", "Crocodile", "Crocodile"],
    ];
    let mut parsed = 0;
    let mut unparseable = Vec::new();
    for row in &table {
        let ctx = ResponseContext::Triplet { options: [row[1], row[2]] };
        for response in &row[3..] {
            match parse_response(ctx, response) {
                Ok(ParsedResponse::Choice(i)) if row[1 + i].eq_ignore_ascii_case(response) => parsed += 1,
                Ok(other) => return Err(format!("{response:?} for {row:?} parsed as {other:?}")),
                Err(_) => unparseable.push(*response),
            }
        }
    }
    check(
        parsed == 19 && unparseable == ["Dangerous"],
        format!("4 golden prompts byte-identical; {parsed}/20 responses parsed, unparseable {unparseable:?}"),
    )
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_concept-coherence"))
}

fn run_pipeline(dir: &Path) -> Result<(), String> {
    // `@name` is a file inside `dir`
    let steps = [
        "simulate planted --seed 11 --output @planted.json",
        "simulate features --planted @planted.json --seed 11 --output @lists.json",
        "ingest-features --input @lists.json --output @features.csv",
        "cosine --input @features.csv --output @features_d.csv",
        "mds --input @features_d.csv --dims 3 --output @features_emb.json",
        "simulate triplet --planted @planted.json --noise luce --self-consistency 0.9 --n-trials 1200 --seed 12 \
         --output @triplets.jsonl",
        "fit-triplets --input @triplets.jsonl --dims 3 --holdout 0.1 --seed 42 --epochs 300 \
         --output @triplet_emb.json --report @fit.json",
        "simulate pairwise --planted @planted.json --seed 13 --output @ratings.jsonl",
        "ratings-to-dissim --input @ratings.jsonl --output @ratings_d.csv",
        "procrustes --input @planted.json --other @triplet_emb.json --n-perm 199 --seed 3 --output @procrustes.json",
        "coherence-matrix --input @features_d.csv --input @triplet_emb.json --input @ratings_d.csv --n-perm 199 \
         --seed 5 --output @coherence.csv",
        "cluster --input @ratings_d.csv --output @tree.nwk",
        "cluster --input @features_d.csv --format json --output @tree.json",
    ];
    for step in steps {
        let args: Vec<String> = step
            .split_whitespace()
            .map(|a| match a.strip_prefix('@') {
                Some(name) => dir.join(name).to_string_lossy().into_owned(),
                None => a.to_string(),
            })
            .collect();
        let out = cli().args(&args).output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (PathBuf::from(p.file_name().unwrap()), std::fs::read(&p).unwrap()))
        .collect()
}

fn cli_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_pipeline(a.path())?;
    run_pipeline(b.path())?;
    let (fa, fb) = (files(a.path()), files(b.path()));
    let differing: Vec<_> = fa.iter().filter(|(k, v)| fb.get(*k) != Some(*v)).map(|(k, _)| k.clone()).collect();
    check(
        differing.is_empty() && fa.len() == 14 && fa.keys().eq(fb.keys()),
        format!("{} output files over two runs, differing: {differing:?}", fa.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("MDS recovery", mds_recovery),
        ("Gradient check", gradient_check),
        ("Triplet recovery at full scale", triplet_recovery),
        ("Noise calibration", noise_calibration),
        ("End-to-end coherence", end_to_end_coherence),
        ("Procrustes invariance", procrustes_invariance),
        ("Feature bookkeeping", feature_bookkeeping),
        ("Clustering", clustering),
        ("Prompt fidelity", prompt_fidelity),
        ("Determinism", cli_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|s| name.to_lowercase().contains(&s.to_lowercase())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.2}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.2}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
