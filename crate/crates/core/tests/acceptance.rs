//! Acceptance run: one PASS/FAIL line per criterion, with the measured values.
//!
//! Runs under `cargo test` and takes a while (the ordering experiment alone is
//! several minutes). Failing criteria are reported, not hidden; set
//! `ACCEPTANCE_STRICT=1` to turn any FAIL into a non-zero exit.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use challenger::corpus::{load_manifest, SyntheticConfig};
use challenger::metrics::{macro_scores, render_report, ReportSection, TableLayout, Triple};
use challenger::nn::{OutputKind, Target};
use challenger::participation::{build_pairs, train_participation, ParticipationConfig};
use challenger::pipeline::{BaselineSelection, Holdout, Run, TableSection};
use challenger::representations::{audit_no_leakage, RepresentationSet};
use challenger::store::EmbeddingStore;
use challenger::Error;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn criterion(results: &mut Vec<bool>, n: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> Duration {
    let start = Instant::now();
    let o = f();
    let took = start.elapsed();
    let in_time = took <= budget;
    let pass = o.pass && in_time;
    let timing = format!("{:.1}s of {}s", took.as_secs_f64(), budget.as_secs());
    println!(
        "{} criterion {n} ({name}): {}; {timing}{}",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        if in_time { "" } else { " (over budget)" }
    );
    results.push(pass);
    took
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir()
        .join(format!("challenger-acceptance-{}", std::process::id()))
        .join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=12);
        let cm = random_confusion(&mut rng, k);
        let got = macro_scores::<f64>(&cm).macro_avg;
        let want = exact_macro(&cm.counts);
        for (g, w) in [got.precision, got.recall, got.f1].into_iter().zip(want) {
            worst = worst.max((g - w).abs());
        }
    }
    outcome(worst <= 1e-12, format!("1000 matrices, max deviation {worst:.1e}"))
}

fn shape_suite() -> Outcome {
    let dir = scratch("shapes");
    let corpus = shape_corpus(&dir.join("corpus"));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = Vec::new();
    for case in 0..100u64 {
        let shape = Shape::random(&mut rng);
        failures.extend(shape_violations(&corpus, &dir.join("work"), shape, case));
    }
    let _ = fs::remove_dir_all(&dir);
    let detail = match failures.first() {
        None => "100 configurations, 0 failures".to_string(),
        Some(first) => format!("{} failures, first: {first}", failures.len()),
    };
    outcome(failures.is_empty(), detail)
}

fn gradient_checks() -> Outcome {
    let proxy = worst_over_inits(OutputKind::Softmax, 16, 8, 3, |r| Target::Class(r.gen_range(0..3)));
    let part = worst_over_inits(OutputKind::Sigmoid, 16, 8, 1, |r| {
        Target::Labels(vec![Some(r.gen_bool(0.5))])
    });
    outcome(
        proxy <= 1e-4 && part <= 1e-4,
        format!("20 initializations each, max relative error proxy {proxy:.1e}, participation {part:.1e}"),
    )
}

fn proxy_holdout(dir: &Path, synthetic: SyntheticConfig) -> Vec<Holdout> {
    let run = synth_run(dir, synthetic, 7);
    run.encode().unwrap();
    run.train_proxy().unwrap().holdout
}

fn proxy_learnability() -> Outcome {
    let dir = scratch("learnable");
    let holdout = proxy_holdout(&dir, small_corpus(1.0, 0.0));
    let _ = fs::remove_dir_all(&dir);
    let acc: Vec<f64> = holdout.iter().map(|h| h.accuracy.unwrap_or(0.0)).collect();
    outcome(
        acc.iter().all(|&a| a >= 0.95),
        format!(
            "held-out accuracy challenge {:.3}, user {:.3} (need >= 0.95)",
            acc[0], acc[1]
        ),
    )
}

fn chance_floor() -> Outcome {
    let dir = scratch("chance");
    let holdout = proxy_holdout(&dir, small_corpus(0.0, 0.0));
    let corpus = load_manifest(&dir.join("corpus/manifest.jsonl")).unwrap();
    let classes = [
        corpus.challenge_labels().len(),
        challenger::proxy::ProxyLabels::users(&corpus).classes.len(),
    ];
    let _ = fs::remove_dir_all(&dir);
    let mut pass = true;
    let mut parts = Vec::new();
    for (h, c) in holdout.iter().zip(classes) {
        let acc = h.accuracy.unwrap_or(f64::NAN);
        let (lo, hi) = binomial_band(h.test_videos, 1.0 / c as f64);
        pass &= lo <= acc && acc <= hi;
        parts.push(format!(
            "{} {acc:.3} in [{lo:.3}, {hi:.3}] (1/{c}, n={})",
            h.task.name(),
            h.test_videos
        ));
    }
    outcome(pass, parts.join(", "))
}

fn table2(run: &Run) -> TableSection {
    serde_json::from_str(&fs::read_to_string(run.path("evaluation/table2.json")).unwrap()).unwrap()
}

/// Planted-affinity corpus for the ordering experiment: large enough that
/// every user has participation evidence and the folds are not tiny.
fn ordering_corpus() -> SyntheticConfig {
    SyntheticConfig {
        challenges: 3,
        users: 240,
        videos_per_user: 8,
        videos_per_challenge: 100,
        signal_strength: 1.0,
        flip_rate: 0.1,
        seed: 1,
        ..Default::default()
    }
}

fn ordering() -> Outcome {
    let dir = scratch("ordering");
    let run = synth_run(&dir, ordering_corpus(), 1);
    run.run_all(&BaselineSelection::All).unwrap();
    let rows = table2(&run).rows;
    let _ = fs::remove_dir_all(&dir);
    let f1 = |r: &challenger::pipeline::TableRow| r.report.macro_f1;
    let (ours, baselines): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r.name == challenger::pipeline::MODEL_NAME);
    let ours = f1(ours[0]);
    let best = baselines.iter().map(|r| f1(r)).fold(f64::NEG_INFINITY, f64::max);
    let gap = ours - best;
    let listed: Vec<String> = baselines.iter().map(|r| format!("{} {:.3}", r.name, f1(r))).collect();
    outcome(
        gap >= 0.1 && ours >= 0.9,
        format!(
            "model macro-F1 {ours:.3} (need >= 0.9: {}), gap to best baseline {gap:.3} (need >= 0.1: {}); baselines {}",
            if ours >= 0.9 { "met" } else { "missed" },
            if gap >= 0.1 { "met" } else { "missed" },
            listed.join(", ")
        ),
    )
}

fn exclusion_audit() -> Outcome {
    let dir = scratch("audit");
    let run = synth_run(
        &dir,
        SyntheticConfig {
            users: 6,
            videos_per_challenge: 4,
            seed: 3,
            ..Default::default()
        },
        3,
    );
    run.encode().unwrap();
    run.train_proxy().unwrap();
    let audit = run.build_reprs().unwrap();

    let corpus = load_manifest(&dir.join("corpus/manifest.jsonl")).unwrap();
    let store = EmbeddingStore::open_existing(&run.path("reprs/store")).unwrap();
    let mut set = RepresentationSet::read(&store, &corpus).unwrap();
    let clean = audit_no_leakage(&set.users, &set.challenges).is_clean();
    let planted = set.challenges[0].contributing_ids[0].clone();
    set.users[0].contributing_ids[0] = planted.clone();
    let report = set.audit();
    let found = report.overlaps.iter().any(|o| o.shared_ids.contains(&planted));
    let pairs = build_pairs(&corpus, corpus.challenge_labels()).unwrap();
    let refs: Vec<_> = pairs.iter().collect();
    let blocked = matches!(
        train_participation::<f32>(&refs, &set, &ParticipationConfig::default(), "audit"),
        Err(Error::Leakage(_))
    );
    let _ = fs::remove_dir_all(&dir);
    outcome(
        audit.clean && clean && found && blocked,
        format!(
            "pipeline audit clean: {}, planted overlap found: {found}, training blocked: {blocked}",
            audit.clean && clean
        ),
    )
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    walk(root, root)
}

fn walk(root: &Path, dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(root, &path));
        } else {
            out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
        }
    }
    out
}

fn determinism() -> Outcome {
    let runs: Vec<BTreeMap<PathBuf, Vec<u8>>> = ["first", "second"]
        .iter()
        .map(|name| {
            let dir = scratch(&format!("determinism-{name}"));
            let run = synth_run(&dir, small_corpus(1.0, 0.1), 5);
            run.run_all(&BaselineSelection::All).unwrap();
            let snap = snapshot(&dir);
            let _ = fs::remove_dir_all(&dir);
            snap
        })
        .collect();
    let (a, b) = (&runs[0], &runs[1]);
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let kinds = [
        "embeddings/",
        "proxy/",
        "reprs/",
        "participation/",
        "evaluation/",
        "report/",
    ];
    let covered = kinds
        .iter()
        .all(|k| a.keys().any(|p| p.to_string_lossy().starts_with(k)));
    outcome(
        differing.is_empty() && covered,
        format!(
            "{} files compared, {} differ{}",
            a.len(),
            differing.len(),
            differing.first().map(|f| format!(", first {f}")).unwrap_or_default()
        ),
    )
}

fn triple(precision: f64, recall: f64, f1: f64) -> Triple {
    Triple { precision, recall, f1 }
}

fn golden_sections() -> (Vec<ReportSection>, Vec<ReportSection>) {
    let proxy = |title: &str, rows: [(&str, Triple); 4]| ReportSection {
        title: Some(title.into()),
        rows: rows.iter().map(|(n, t)| (n.to_string(), *t)).collect(),
    };
    let table1 = vec![
        proxy(
            "Challenge Representation Learning",
            [
                ("toy-a", triple(0.4125, 0.38, 0.36)),
                ("toy-a + toy-text", triple(0.5, 0.4944, 0.494)),
                ("toy-b", triple(0.25, 0.3333333, 0.2)),
                ("toy-b + toy-text", triple(0.49951, 0.41, 0.4936)),
            ],
        ),
        proxy(
            "User Representation Learning",
            [
                ("toy-a", triple(0.1, 0.1, 0.1)),
                ("toy-a + toy-text", triple(0.1, 0.2, 0.0)),
                ("toy-b", triple(1.0, 0.0, 0.05)),
                ("toy-b + toy-text", triple(0.0004, 0.0006, 0.9995)),
            ],
        ),
    ];
    let table2 = vec![ReportSection {
        title: None,
        rows: vec![
            ("toy-a".into(), triple(0.101, 0.9, 0.171)),
            ("toy-a + toy-text".into(), triple(0.188, 0.94, 0.188)),
            ("toy-b".into(), triple(0.12, 0.933, 0.15)),
            ("toy-b + toy-text".into(), triple(0.1, 0.5, 0.12)),
            (challenger::pipeline::MODEL_NAME.into(), triple(0.494, 0.933, 0.494)),
        ],
    }];
    (table1, table2)
}

fn report_fidelity() -> Outcome {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let (t1, t2) = golden_sections();
    let rendered = [
        ("table1.txt", render_report(&t1, TableLayout::ProxyTable).unwrap()),
        (
            "table2.txt",
            render_report(&t2, TableLayout::ParticipationTable).unwrap(),
        ),
    ];
    let mut mismatched = Vec::new();
    for (name, text) in &rendered {
        let want = fs::read_to_string(golden.join(name)).unwrap_or_default();
        if &want != text {
            mismatched.push(*name);
        }
    }
    outcome(
        mismatched.is_empty(),
        if mismatched.is_empty() {
            "both tables match their golden files".into()
        } else {
            format!("mismatch: {}", mismatched.join(", "))
        },
    )
}

fn main() {
    let mut results = Vec::new();
    criterion(&mut results, 1, "metric oracle", Duration::from_secs(10), metric_oracle);
    criterion(&mut results, 2, "shapes", Duration::from_secs(60), shape_suite);
    criterion(&mut results, 3, "gradients", Duration::from_secs(60), gradient_checks);
    criterion(
        &mut results,
        4,
        "proxy learnability",
        Duration::from_secs(300),
        proxy_learnability,
    );
    criterion(&mut results, 5, "chance floor", Duration::from_secs(300), chance_floor);
    let ordering_time = criterion(&mut results, 6, "ordering", Duration::from_secs(900), ordering);
    criterion(
        &mut results,
        7,
        "exclusion audit",
        Duration::from_secs(60),
        exclusion_audit,
    );
    criterion(&mut results, 8, "determinism", ordering_time * 2, determinism);
    criterion(
        &mut results,
        9,
        "report fidelity",
        Duration::from_secs(5),
        report_fidelity,
    );

    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    let _ = fs::remove_dir_all(std::env::temp_dir().join(format!("challenger-acceptance-{}", std::process::id())));
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
