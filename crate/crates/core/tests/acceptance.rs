//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when
//! any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde_json::{json, Value};

use msba_harness::arena::{self, plan_composition, trim_errors, GtTuning, TrimConfig};
use msba_harness::codefab::derive_dependencies;
use msba_harness::complexity;
use msba_harness::ledger::{self, ExperimentConfig, ExperimentContext, GatewayKind, ScheduleEntry};
use msba_harness::prompt_forge::{build_reflection_prompt_capped, LiveGateway, ReplayGateway};

use common::*;

const SMOKE_BUDGET: Duration = Duration::from_secs(300);
const SMOKE_COUNTS: [(&str, usize); 4] = [("Cardholders", 15), ("Books", 14), ("Borrows", 14), ("Logs", 7)];
const WORDS: [(&str, usize); 2] = [("library", 1399), ("restaurant", 1905)];
const DEPENDENCIES: [(&str, usize); 2] = [("library", 3), ("restaurant", 6)];
const WORD_TOLERANCE: f64 = 0.02;
const PACKAGES_TARGET: f64 = 4.0;
const PACKAGES_TOLERANCE: f64 = 1.0;
const DERIVATION_CASES: u32 = 1000;
const MUTATED_FINE: f64 = 0.75;
const AGGREGATION_CASES: u64 = 100;
const PCT_TOLERANCE: f64 = 1e-9;
const ADVERSARIAL_BYTES: usize = 1 << 20;
const TRIM_CAPS: [usize; 3] = [4 * 1024, 16 * 1024, 64 * 1024];

async fn criterion_smoke() -> Result<String> {
    let runtime = local_runtime();
    let (spec, suites) = suites("library");
    let started = Instant::now();
    let mut vectors = Vec::new();
    for round in 0..2 {
        let outcomes = arena::smoke(&runtime, &spec, &suites, &TrimConfig::default()).await?;
        let mut vector = Vec::new();
        for ((service, want), o) in SMOKE_COUNTS.iter().zip(&outcomes) {
            let v = o.verdict.as_ref().context("no verdict")?;
            ensure!(v.service == *service, "round {round}: unexpected suite order");
            ensure!(
                v.total() == *want && v.passed() == *want,
                "round {round}: {service} passed {}/{} (want {want}/{want}): {:?}",
                v.passed(),
                v.total(),
                v.failure_lines()
            );
            vector.push(v.vector());
        }
        vectors.push(vector);
    }
    let elapsed = started.elapsed();
    ensure!(vectors[0] == vectors[1], "verdict vectors differ between rounds");
    ensure!(elapsed < SMOKE_BUDGET, "took {elapsed:?}");
    Ok(format!("50/50 twice, identical vectors, {:.1}s for both rounds", elapsed.as_secs_f64()))
}

async fn criterion_complexity() -> Result<String> {
    let corpus = corpus();
    let profile = corpus.profile("python-flask")?;
    let mut parts = Vec::new();
    for ((app, words), (_, deps)) in WORDS.iter().zip(DEPENDENCIES) {
        let r = complexity::measure(&corpus, app, &profile)?;
        ensure!(r.dependency_total == deps, "{app}: {} dependencies, want {deps}", r.dependency_total);
        let drift = (r.size_words as f64 - *words as f64).abs() / *words as f64;
        if r.reconstructed {
            ensure!(drift <= WORD_TOLERANCE, "{app}: {} words vs {words}", r.size_words);
        } else {
            ensure!(r.size_words == *words, "{app}: {} words vs {words}", r.size_words);
        }
        ensure!(
            (r.avg_packages_per_service - PACKAGES_TARGET).abs() <= PACKAGES_TOLERANCE,
            "{app}: {:.2} packages per service",
            r.avg_packages_per_service
        );
        parts.push(format!(
            "{app} deps={} words={}{} packages={:.2}",
            r.dependency_total,
            r.size_words,
            if r.reconstructed { " (reconstructed)" } else { "" },
            r.avg_packages_per_service
        ));
    }
    Ok(parts.join("; "))
}

async fn run_stub(config: &ExperimentConfig, runs: &Path) -> Result<(ledger::BatchOutcome, Vec<String>)> {
    let ctx = ExperimentContext::from_config(config, corpus(), runs)?;
    let out = ledger::run_experiment(config, &ctx).await?;
    let tags = exchange_tags(&out.batch_dir);
    ensure!(tags.len() == 1, "expected one run, found {}", tags.len());
    let tags = tags.into_values().next().unwrap_or_default();
    Ok((out, tags))
}

async fn criterion_workflow() -> Result<String> {
    let dir = tempfile::tempdir()?;

    let failing = stub_config("logs_fail_then_fix.json", "canned-writable", 2);
    let (out, tags) = run_stub(&failing, dir.path()).await?;
    ensure!(count_kind(&tags, "generation") == 1, "generations: {tags:?}");
    ensure!(count_kind(&tags, "reflection") == 1, "reflections: {tags:?}");
    ensure!(count_kind(&tags, "regeneration") == 1, "regenerations: {tags:?}");
    let versions: Vec<u32> = out.records.iter().map(|r| r.version.0).collect();
    ensure!(versions == [0, 1], "versions {versions:?}");
    ensure!(!out.records[0].all_passed(), "canned V0 unexpectedly passed");

    let perfect = stub_config("logs_pass.json", "canned-correct", 2);
    let (out, tags) = run_stub(&perfect, dir.path()).await?;
    ensure!(tags.len() == 1 && count_kind(&tags, "generation") == 1, "perfect run exchanges: {tags:?}");
    ensure!(out.records.len() == 1 && out.records[0].all_passed(), "perfect run records");

    let single = stub_config("logs_fail_then_fix.json", "canned-writable-single", 1);
    let (out, tags) = run_stub(&single, dir.path()).await?;
    ensure!(count_kind(&tags, "reflection") == 0, "max_gen=1 reflected: {tags:?}");
    ensure!(out.records.len() == 1, "max_gen=1 records {}", out.records.len());

    Ok("failing V0: 1 reflection + 1 regeneration; perfect V0: no V1; max_gen=1: 0 reflections".into())
}

async fn criterion_dependencies() -> Result<String> {
    let profile = corpus().profile("python-flask")?;
    let fixture = "from flask import Flask, jsonify, request\nimport pymongo\nimport uuid\nimport json\nimport jwt\n";
    let got = derive_dependencies(fixture, &profile);
    ensure!(got == ["flask", "pymongo", "PyJWT"], "derived {got:?}");

    let standard: Vec<String> = profile.standard_modules.iter().cloned().collect();
    let third_party = ["flask", "pymongo", "jwt", "requests", "bson", "yaml", "flask_cors", "dateutil"];
    let pool: Vec<String> = standard
        .iter()
        .take(60)
        .cloned()
        .chain(third_party.iter().map(|s| s.to_string()))
        .collect();
    let strategy = (Just(pool).prop_shuffle(), 1usize..40, proptest::collection::vec(0u8..3, 40));
    let mut runner = TestRunner::new(PropConfig {
        cases: DERIVATION_CASES,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let std_set: BTreeSet<&str> = standard.iter().map(String::as_str).collect();
    runner
        .run(&strategy, |(modules, n, styles)| {
            let chosen = &modules[..n];
            let source: String = chosen
                .iter()
                .zip(&styles)
                .map(|(m, style)| match style {
                    0 => format!("import {m}\n"),
                    1 => format!("from {m} import thing\n"),
                    _ => format!("import {m}.sub as alias\n"),
                })
                .collect();
            let out = derive_dependencies(&source, &profile);
            prop_assert!(out.iter().all(|p| !std_set.contains(p.as_str())), "{out:?}");
            let unique: BTreeSet<&String> = out.iter().collect();
            prop_assert_eq!(unique.len(), out.len());
            prop_assert!(out.iter().all(|p| !profile.remap.contains_key(p)));
            Ok(())
        })
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(format!("[flask, pymongo, PyJWT]; {DERIVATION_CASES} random import permutations never hit the standard list"))
}

async fn criterion_isolation() -> Result<String> {
    let runtime = local_runtime();
    let (spec, suites) = suites("library");
    let plan = plan_composition(&spec, None, None)?.with_tuning(
        "Cardholders",
        GtTuning {
            fine_per_day: Some(MUTATED_FINE),
            ..GtTuning::default()
        },
    )?;
    let mut failed: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (suite, fixture) in &suites {
        let label = format!("mutant-{}", suite.service.to_lowercase());
        let o = arena::execute(&runtime, &plan, suite, fixture, &label, &TrimConfig::default()).await?;
        let v = o.verdict.context("no verdict")?;
        let ids: Vec<String> = v.cases.iter().filter(|c| !c.passed).map(|c| c.case_id.clone()).collect();
        if !ids.is_empty() {
            failed.insert(v.service.clone(), ids);
        }
    }
    let services: Vec<&String> = failed.keys().collect();
    ensure!(services == ["Cardholders"], "failures outside Cardholders: {failed:?}");
    let fine_cases = ["fine_sums_overdue_loans", "fine_ignores_returned_loans"];
    ensure!(failed["Cardholders"] == fine_cases, "Cardholders failures {:?}", failed["Cardholders"]);
    Ok(format!(
        "fine {MUTATED_FINE}/day fails only Cardholders {:?}; other suites all pass",
        failed["Cardholders"]
    ))
}

async fn criterion_aggregation() -> Result<String> {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut checked = 0;
    for case in 0..AGGREGATION_CASES {
        let records = synthetic_records(&mut rng);
        ensure!(ledger::check_version_invariant(&records).is_empty(), "case {case}: generator broke the V1 rule");
        for service in ["Cardholders", "Books", "Borrows", "Logs"] {
            let got = ledger::aggregate(&records, service);
            let want = brute_force(&records, service);
            ensure!(got.runs == want.runs, "case {case} {service}: runs");
            ensure!(got.v0_testable == want.v0_testable, "case {case} {service}: v0 testable");
            ensure!(got.v1_testable == want.v1_testable, "case {case} {service}: v1 testable");
            ensure!(got.highest_v0 == want.highest_v0, "case {case} {service}: highest v0");
            ensure!(got.highest_v1 == want.highest_v1, "case {case} {service}: highest v1");
            ensure!(got.v1_improved == want.improved, "case {case} {service}: improved");
            for (name, a, b) in [
                ("v0", got.pct_v0_passed, want.pct_v0),
                ("v1", got.pct_v1_passed, want.pct_v1),
                ("improved", got.pct_v1_improved, want.pct_improved),
            ] {
                match (a, b) {
                    (None, None) => {}
                    (Some(x), Some(y)) => ensure!((x - y).abs() <= PCT_TOLERANCE, "case {case} {service} {name}"),
                    _ => anyhow::bail!("case {case} {service} {name}: {a:?} vs {b:?}"),
                }
            }
            checked += 1;
        }
    }
    Ok(format!("{AGGREGATION_CASES} random record sets, {checked} service rows match brute force"))
}

/// Tracebacks and bare exception lines over many services, with huge
/// messages, deep stacks and heavy repetition.
fn adversarial_logs(types: &[String]) -> BTreeMap<String, String> {
    let mut logs = BTreeMap::new();
    for (s, service) in ["Cardholders", "Books", "Borrows", "Logs"].iter().enumerate() {
        let mut text = String::new();
        let mut k = 0usize;
        while text.len() < ADVERSARIAL_BYTES / 4 {
            let kind = &types[(k * 7 + s) % types.len()];
            match k % 4 {
                0 => {
                    text.push_str("Traceback (most recent call last):\n");
                    for f in 0..(k % 40) {
                        text.push_str(&format!("  File \"/app/app.py\", line {f}, in handler_{f}\n    step_{f}()\n"));
                    }
                    text.push_str(&format!("{kind}: {}\n", "x".repeat(k % 3000)));
                }
                1 => text.push_str(&format!("{kind}: ünïcödé → {}\n", "é".repeat(k % 500))),
                2 => text.push_str(&format!("127.0.0.1 - - \"GET /x HTTP/1.1\" 500 {}\n", "-".repeat(k % 200))),
                _ => {
                    text.push_str("Traceback (most recent call last):\n  File \"/app/app.py\", line 1, in f\n");
                    text.push_str(&format!("{kind}: same message\n"));
                }
            }
            k += 1;
        }
        logs.insert(service.to_string(), text);
    }
    logs
}

async fn criterion_trimming() -> Result<String> {
    let mut types: Vec<String> = (0..48).map(|i| format!("Custom{i}Error")).collect();
    types.extend(["KeyError", "TypeError", "pymongo.errors.ServerSelectionTimeoutError", "bson.errors.InvalidId"]
        .map(String::from));
    let logs = adversarial_logs(&types);
    let total: usize = logs.values().map(String::len).sum();
    ensure!(total >= ADVERSARIAL_BYTES, "adversarial input only {total} bytes");
    let present: BTreeSet<&String> = types.iter().filter(|t| logs.values().any(|l| l.contains(t.as_str()))).collect();
    for cap in TRIM_CAPS {
        let trimmed = trim_errors(&logs, None, &[], &TrimConfig { byte_cap: cap, frames: 5 });
        ensure!(trimmed.len() <= cap, "cap {cap}: {} bytes", trimmed.len());
        for t in &present {
            ensure!(
                trimmed.lines().any(|l| l.starts_with(&format!("{t}:")) || l.starts_with(&format!("{t} "))
                    || l == t.as_str()),
                "cap {cap}: {t} missing"
            );
        }
        let prompt = build_reflection_prompt_capped(&trimmed, cap)?;
        ensure!(prompt.starts_with(trimmed.trim_end()), "cap {cap}: report not embedded verbatim");
        let scaffold = prompt.find("For at most 5 errors").context("scaffold missing")?;
        ensure!(scaffold > trimmed.trim_end().len(), "cap {cap}: scaffold precedes report");
    }
    Ok(format!(
        "{} MiB of logs, {} exception types kept under caps {:?}",
        total >> 20,
        present.len(),
        TRIM_CAPS
    ))
}

#[derive(Clone)]
struct FakeModel {
    calls: Arc<AtomicUsize>,
    generations: Arc<AtomicUsize>,
    writable: Arc<String>,
    correct: Arc<String>,
    reflection: Arc<String>,
}

/// Chat-completions stand-in whose first-version answers alternate
/// between a faulty and a correct service.
async fn chat(State(m): State<FakeModel>, Json(body): Json<Value>) -> Json<Value> {
    m.calls.fetch_add(1, Ordering::SeqCst);
    let prompt = body.pointer("/messages/0/content").and_then(Value::as_str).unwrap_or("");
    let reply = if prompt.contains("Re-generate the code") {
        m.correct.as_str()
    } else if prompt.contains("Examine the error messages given above") {
        m.reflection.as_str()
    } else if m.generations.fetch_add(1, Ordering::SeqCst) % 2 == 0 {
        m.writable.as_str()
    } else {
        m.correct.as_str()
    };
    Json(json!({"choices": [{"message": {"role": "assistant", "content": reply}}]}))
}

async fn criterion_replay() -> Result<String> {
    let model = FakeModel {
        calls: Arc::default(),
        generations: Arc::default(),
        writable: Arc::new(read_stub("logs_writable.md")),
        correct: Arc::new(read_stub("logs_correct.md")),
        reflection: Arc::new(read_stub("reflection.md")),
    };
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let endpoint = format!("http://{}/v1/chat/completions", listener.local_addr()?);
    let app = Router::new().route("/v1/chat/completions", post(chat)).with_state(model.clone());
    let server = tokio::spawn(async move { axum::serve(listener, app).await });

    let mut config = ExperimentConfig::new("library", "fake-chat-model");
    config.services = vec!["Logs".into()];
    config.schedule = vec![
        ScheduleEntry {
            temperature: Some(0.2),
            repetitions: 2,
        },
        ScheduleEntry {
            temperature: None,
            repetitions: 1,
        },
    ];
    config.gateway.kind = GatewayKind::Live;
    config.gateway.endpoint = Some(endpoint.clone());

    let live_root = tempfile::tempdir()?;
    let live = ExperimentContext::new(
        corpus(),
        Arc::new(LiveGateway::new(&endpoint, "test-key".into(), Duration::from_secs(30))?),
        Arc::new(local_runtime()),
        live_root.path(),
    );
    let recorded = ledger::run_experiment(&config, &live).await?;
    let live_calls = model.calls.load(Ordering::SeqCst);
    ensure!(recorded.records.iter().any(|r| r.version.0 == 1), "recorded batch has no V1");

    let mut replay_config = config.clone();
    replay_config.gateway.kind = GatewayKind::Replay;
    replay_config.gateway.recordings = vec![recorded.batch_dir.clone()];
    let replay_root = tempfile::tempdir()?;
    let replay = ExperimentContext::new(
        corpus(),
        Arc::new(ReplayGateway::load(&replay_config.gateway.recordings)?),
        Arc::new(local_runtime()),
        replay_root.path(),
    );
    let replayed = ledger::run_experiment(&replay_config, &replay).await?;
    server.abort();

    ensure!(model.calls.load(Ordering::SeqCst) == live_calls, "replay reached the live endpoint");
    ensure!(replayed.batch_id == recorded.batch_id, "batch ids differ");
    for file in ["report.md", "report.csv"] {
        let a = std::fs::read(recorded.batch_dir.join(file))?;
        let b = std::fs::read(replayed.batch_dir.join(file))?;
        ensure!(a == b, "{file} differs between live and replay");
    }
    ensure!(recorded.records == replayed.records, "records differ between live and replay");
    Ok(format!(
        "published pass rates come from paid, stochastic, drifting models and are not reproduced here; \
         a recorded batch ({} runs, {live_calls} live exchanges) replays to byte-identical reports",
        recorded.executed_runs
    ))
}

async fn check<F: Future<Output = Result<String>>>(n: usize, name: &str, f: F) -> bool {
    let started = Instant::now();
    let (ok, detail) = match f.await {
        Ok(d) => (true, d),
        Err(e) => (false, format!("{e:#}")),
    };
    println!(
        "criterion {n} {name}: {} ({:.1}s) {detail}",
        if ok { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    ok
}

#[tokio::main]
async fn main() {
    let results = [
        check(1, "ground-truth smoke", criterion_smoke()).await,
        check(2, "complexity figures", criterion_complexity()).await,
        check(3, "workflow with stub gateway", criterion_workflow()).await,
        check(4, "dependency derivation", criterion_dependencies()).await,
        check(5, "isolation", criterion_isolation()).await,
        check(6, "aggregation oracle", criterion_aggregation()).await,
        check(7, "trimming", criterion_trimming()).await,
        check(8, "replay reproduces a recorded batch", criterion_replay()).await,
    ];
    let passed = results.iter().filter(|ok| **ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
