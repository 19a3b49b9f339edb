//! Summary table over hand-written records.

use msba_harness::codefab::Version;
use msba_harness::ledger::{check_version_invariant, render_report, summarize, ExperimentRecord};

fn record(run: &str, version: u32, passed: usize) -> ExperimentRecord {
    ExperimentRecord {
        run_id: run.into(),
        service: "Borrows".into(),
        temperature: Some(0.2),
        repetition: 0,
        version: Version(version),
        testable: true,
        tests_passed: passed,
        tests_total: 14,
        transcript_ids: vec![],
        outcome_ref: None,
        notes: vec![],
        failure_tags: vec![],
    }
}

fn main() {
    let records = vec![
        record("a", 0, 9),
        record("a", 1, 12),
        record("b", 0, 14),
        record("c", 0, 4),
        record("c", 1, 4),
    ];
    assert!(check_version_invariant(&records).is_empty());
    let rows = summarize(&records, &["Borrows".to_string()]);
    let report = render_report("Borrows at 0.2", &rows);
    print!("{}\n{}", report.markdown, report.csv);
}
