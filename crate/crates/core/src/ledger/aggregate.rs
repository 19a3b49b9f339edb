use std::collections::BTreeMap;

use serde::Serialize;

use super::ExperimentRecord;
use crate::codefab::Version;

/// One row of the result table plus the raw counts behind it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub service: String,
    pub runs: usize,
    pub v0_testable: usize,
    pub v1_records: usize,
    pub v1_testable: usize,
    pub pct_v0_passed: Option<f64>,
    pub pct_v1_passed: Option<f64>,
    pub highest_v0: Option<usize>,
    pub highest_v1: Option<usize>,
    pub tests_total: Option<usize>,
    pub v1_improved: usize,
    pub pct_v1_improved: Option<f64>,
}

fn mean_pct(records: &[&ExperimentRecord]) -> Option<f64> {
    let testable: Vec<f64> = records
        .iter()
        .filter(|r| r.testable && r.tests_total > 0)
        .map(|r| 100.0 * r.tests_passed as f64 / r.tests_total as f64)
        .collect();
    (!testable.is_empty()).then(|| testable.iter().sum::<f64>() / testable.len() as f64)
}

/// Summary of one service's records. Percentages cover testable records
/// only; "% V1 improved" counts runs whose testable V1 passed strictly
/// more tests than V0 (a non-testable V0 counts as zero), over the runs
/// with a testable V1.
pub fn aggregate(records: &[ExperimentRecord], service: &str) -> SummaryRow {
    let mine: Vec<&ExperimentRecord> = records.iter().filter(|r| r.service == service).collect();
    let v0: Vec<&ExperimentRecord> = mine.iter().copied().filter(|r| r.version == Version::V0).collect();
    let v1: Vec<&ExperimentRecord> = mine.iter().copied().filter(|r| r.version == Version::V1).collect();
    let v0_by_run: BTreeMap<&str, &ExperimentRecord> = v0.iter().map(|r| (r.run_id.as_str(), *r)).collect();

    let highest = |rs: &[&ExperimentRecord]| rs.iter().filter(|r| r.testable).map(|r| r.tests_passed).max();
    let v1_testable: Vec<&&ExperimentRecord> = v1.iter().filter(|r| r.testable).collect();
    let improved = v1_testable
        .iter()
        .filter(|r| {
            let before = v0_by_run
                .get(r.run_id.as_str())
                .filter(|v| v.testable)
                .map_or(0, |v| v.tests_passed);
            r.tests_passed > before
        })
        .count();

    SummaryRow {
        service: service.to_string(),
        runs: v0.len(),
        v0_testable: v0.iter().filter(|r| r.testable).count(),
        v1_records: v1.len(),
        v1_testable: v1_testable.len(),
        pct_v0_passed: mean_pct(&v0),
        pct_v1_passed: mean_pct(&v1),
        highest_v0: highest(&v0),
        highest_v1: highest(&v1),
        tests_total: mine.iter().map(|r| r.tests_total).max(),
        v1_improved: improved,
        pct_v1_improved: (!v1_testable.is_empty())
            .then(|| 100.0 * improved as f64 / v1_testable.len() as f64),
    }
}

/// Rows for `services` in the given order.
pub fn summarize(records: &[ExperimentRecord], services: &[String]) -> Vec<SummaryRow> {
    services.iter().map(|s| aggregate(records, s)).collect()
}

/// Violations of the version rule: a version exists only when the
/// previous version of the same run exists and failed some test.
pub fn check_version_invariant(records: &[ExperimentRecord]) -> Vec<String> {
    let mut by_run: BTreeMap<(&str, u32), &ExperimentRecord> = BTreeMap::new();
    for r in records {
        by_run.insert((r.run_id.as_str(), r.version.0), r);
    }
    let mut problems = Vec::new();
    for r in records {
        if r.tests_passed > r.tests_total {
            problems.push(format!("{} {}: passed exceeds total", r.run_id, r.version));
        }
        if r.version.0 == 0 {
            continue;
        }
        match by_run.get(&(r.run_id.as_str(), r.version.0 - 1)) {
            None => problems.push(format!("{} {}: previous version missing", r.run_id, r.version)),
            Some(prev) if prev.testable && prev.tests_passed == prev.tests_total => problems.push(format!(
                "{} {}: previous version passed every test",
                r.run_id, r.version
            )),
            Some(_) => {}
        }
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(run: &str, version: u32, testable: bool, passed: usize) -> ExperimentRecord {
        ExperimentRecord {
            run_id: run.into(),
            service: "Books".into(),
            temperature: None,
            repetition: 0,
            version: Version(version),
            testable,
            tests_passed: passed,
            tests_total: 14,
            transcript_ids: vec![],
            outcome_ref: None,
            notes: vec![],
            failure_tags: vec![],
        }
    }

    #[test]
    fn hand_computed_mean() {
        let rs = [rec("a", 0, true, 5), rec("b", 0, true, 7), rec("c", 0, true, 14)];
        let row = aggregate(&rs, "Books");
        let want = (500.0 / 14.0 + 50.0 + 100.0) / 3.0;
        assert!((row.pct_v0_passed.unwrap() - want).abs() < 1e-9);
        assert_eq!(format!("{:.1}", row.pct_v0_passed.unwrap()), "61.9");
        assert_eq!(row.highest_v0, Some(14));
    }

    #[test]
    fn strict_improvement() {
        let rs = [
            rec("a", 0, true, 5),
            rec("a", 1, true, 6),
            rec("b", 0, true, 7),
            rec("b", 1, true, 7),
        ];
        let row = aggregate(&rs, "Books");
        assert_eq!(row.pct_v1_improved, Some(50.0));
        assert_eq!(row.v1_testable, 2);
    }

    #[test]
    fn all_pass_means_no_v1() {
        let rs = [rec("a", 0, true, 14)];
        let row = aggregate(&rs, "Books");
        assert_eq!(row.v1_testable, 0);
        assert_eq!(row.pct_v1_passed, None);
        assert_eq!(row.pct_v1_improved, None);
        assert!(check_version_invariant(&rs).is_empty());
        let bad = [rec("a", 0, true, 14), rec("a", 1, true, 14)];
        assert_eq!(check_version_invariant(&bad).len(), 1);
        assert_eq!(check_version_invariant(&[rec("z", 1, true, 3)]).len(), 1);
    }

    #[test]
    fn non_testable_excluded_from_means() {
        let rs = [rec("a", 0, false, 0), rec("b", 0, true, 7)];
        let row = aggregate(&rs, "Books");
        assert_eq!(row.v0_testable, 1);
        assert_eq!(row.pct_v0_passed, Some(50.0));
        assert_eq!(aggregate(&[rec("a", 0, false, 0)], "Books").pct_v0_passed, None);
    }
}
