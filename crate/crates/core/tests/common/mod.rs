#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{NaiveDate, TimeDelta};
use rand::Rng;

use msba_harness::arena::{LocalRuntime, LocalSettings};
use msba_harness::codefab::Version;
use msba_harness::ledger::{ExperimentConfig, ExperimentRecord, GatewayKind};
use msba_harness::probe::{Fixture, Suite};
use msba_harness::reference_services::{BookLookup, StaticLookup};
use msba_harness::spec_model::AppSpec;
use msba_harness::Corpus;

pub const LOAN_DAYS: i64 = 14;
pub const FINE_PER_DAY: f64 = 0.5;

pub fn corpus() -> Corpus {
    Corpus::bundled()
}

pub fn local_runtime() -> LocalRuntime {
    let corpus = corpus();
    let profile = corpus.profile("python-flask").expect("bundled profile");
    let lookup: Arc<dyn BookLookup> =
        Arc::new(StaticLookup::load(&corpus.books_lookup_path()).expect("bundled lookup table"));
    LocalRuntime::new(LocalSettings::for_profile(&profile, lookup))
}

pub fn suites(app: &str) -> (AppSpec, Vec<(Suite, Fixture)>) {
    let corpus = corpus();
    let spec = corpus.load_spec(app).expect("bundled spec");
    let suites = spec
        .services
        .iter()
        .map(|s| {
            (
                corpus.load_suite(app, &s.name).expect("bundled suite"),
                corpus.load_fixture(app, &s.name).expect("bundled fixture"),
            )
        })
        .collect();
    (spec, suites)
}

pub fn stub_dir() -> PathBuf {
    corpus().app_dir("library").join("stubs")
}

/// A Logs-only batch served by one of the canned stub files.
pub fn stub_config(stub_file: &str, model_id: &str, max_gen: u32) -> ExperimentConfig {
    let mut c = ExperimentConfig::new("library", model_id);
    c.services = vec!["Logs".into()];
    c.max_gen = max_gen;
    c.gateway.kind = GatewayKind::Stub;
    c.gateway.stub_file = Some(stub_dir().join(stub_file));
    c
}

pub fn read_stub(name: &str) -> String {
    std::fs::read_to_string(stub_dir().join(name)).expect("stub reply file")
}

/// Tags of every exchange under a batch directory, per run directory.
pub fn exchange_tags(batch_dir: &Path) -> BTreeMap<String, Vec<String>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(batch_dir).expect("batch dir") {
        let path = entry.expect("dir entry").path();
        let file = path.join("transcripts.jsonl");
        if !file.is_file() {
            continue;
        }
        let tags = msba_harness::prompt_forge::TranscriptStore::read(&file)
            .expect("transcripts parse")
            .into_iter()
            .map(|e| e.tag.unwrap_or_default())
            .collect();
        out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), tags);
    }
    out
}

pub fn count_kind(tags: &[String], kind: &str) -> usize {
    tags.iter().filter(|t| t.ends_with(&format!("/{kind}"))).count()
}

// ---- fines and due dates, computed without the ground-truth code

#[derive(Debug, Clone, Copy)]
pub struct Loan {
    pub borrowed: NaiveDate,
    pub returned: Option<NaiveDate>,
}

pub fn due_date(borrowed: NaiveDate) -> NaiveDate {
    borrowed + TimeDelta::days(LOAN_DAYS)
}

/// Fine owed on `today`: every open loan past its due date costs the daily
/// rate for each day late, rounded to cents.
pub fn reference_fine(loans: &[Loan], today: NaiveDate, rate: f64) -> f64 {
    let mut days = 0i64;
    for l in loans {
        if l.returned.is_some() {
            continue;
        }
        let late = (today - due_date(l.borrowed)).num_days();
        if late > 0 {
            days += late;
        }
    }
    (days as f64 * rate * 100.0).round() / 100.0
}

pub fn date(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").expect("date literal")
}

// ---- aggregation oracle

#[derive(Debug, Clone, PartialEq)]
pub struct BruteRow {
    pub runs: usize,
    pub v0_testable: usize,
    pub v1_testable: usize,
    pub pct_v0: Option<f64>,
    pub pct_v1: Option<f64>,
    pub highest_v0: Option<usize>,
    pub highest_v1: Option<usize>,
    pub improved: usize,
    pub pct_improved: Option<f64>,
}

/// Straight-line recomputation of one service's summary.
pub fn brute_force(records: &[ExperimentRecord], service: &str) -> BruteRow {
    let mut runs = 0;
    let mut v0_testable = 0;
    let mut v1_testable = 0;
    let mut sum_v0 = 0.0;
    let mut sum_v1 = 0.0;
    let mut highest_v0: Option<usize> = None;
    let mut highest_v1: Option<usize> = None;
    let mut improved = 0;
    for r in records {
        if r.service != service {
            continue;
        }
        let pct = 100.0 * r.tests_passed as f64 / r.tests_total as f64;
        if r.version == Version(0) {
            runs += 1;
            if r.testable {
                v0_testable += 1;
                sum_v0 += pct;
                highest_v0 = Some(highest_v0.map_or(r.tests_passed, |h| h.max(r.tests_passed)));
            }
        } else if r.version == Version(1) && r.testable {
            v1_testable += 1;
            sum_v1 += pct;
            highest_v1 = Some(highest_v1.map_or(r.tests_passed, |h| h.max(r.tests_passed)));
            let mut before = 0;
            for p in records {
                if p.run_id == r.run_id && p.service == service && p.version == Version(0) && p.testable {
                    before = p.tests_passed;
                }
            }
            if r.tests_passed > before {
                improved += 1;
            }
        }
    }
    let mean = |sum: f64, n: usize| if n == 0 { None } else { Some(sum / n as f64) };
    BruteRow {
        runs,
        v0_testable,
        v1_testable,
        pct_v0: mean(sum_v0, v0_testable),
        pct_v1: mean(sum_v1, v1_testable),
        highest_v0,
        highest_v1,
        improved,
        pct_improved: mean(100.0 * improved as f64, v1_testable),
    }
}

fn record(run: &str, service: &str, version: u32, testable: bool, passed: usize, total: usize) -> ExperimentRecord {
    ExperimentRecord {
        run_id: run.into(),
        service: service.into(),
        temperature: None,
        repetition: 0,
        version: Version(version),
        testable,
        tests_passed: if testable { passed } else { 0 },
        tests_total: total,
        transcript_ids: vec![],
        outcome_ref: None,
        notes: vec![],
        failure_tags: vec![],
    }
}

/// Random records over a few services. A V1 follows only a V0 that did
/// not pass every test, and only sometimes (a run may stop early).
pub fn synthetic_records(rng: &mut impl Rng) -> Vec<ExperimentRecord> {
    let services = [("Cardholders", 15), ("Books", 14), ("Borrows", 14), ("Logs", 7)];
    let mut out = Vec::new();
    for (service, total) in services {
        let runs = rng.random_range(0..=20);
        for i in 0..runs {
            let run = format!("{}-r{i}", service.to_lowercase());
            let testable = rng.random_bool(0.8);
            let passed = rng.random_range(0..=total);
            out.push(record(&run, service, 0, testable, passed, total));
            let perfect = testable && passed == total;
            if !perfect && rng.random_bool(0.85) {
                let t1 = rng.random_bool(0.75);
                out.push(record(&run, service, 1, t1, rng.random_range(0..=total), total));
            }
        }
    }
    out
}
