use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCategory {
    PackageUsage,
    ApiMisunderstanding,
    DatatypeConversion,
    SpecDetail,
    Other,
}

impl FailureCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureCategory::PackageUsage => "package_usage",
            FailureCategory::ApiMisunderstanding => "api_misunderstanding",
            FailureCategory::DatatypeConversion => "datatype_conversion",
            FailureCategory::SpecDetail => "spec_detail",
            FailureCategory::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureTag {
    pub category: FailureCategory,
    pub evidence: String,
}

static RULES: LazyLock<Vec<(FailureCategory, Regex)>> = LazyLock::new(|| {
    [
        (
            FailureCategory::PackageUsage,
            r"ImportError|ModuleNotFoundError|No module named|cannot import name",
        ),
        (
            FailureCategory::DatatypeConversion,
            r"not JSON serializable|TypeError|ValueError|InvalidId|JSONDecodeError",
        ),
        (
            FailureCategory::ApiMisunderstanding,
            r"requests\.exceptions|HTTPError|MaxRetryError|NewConnectionError|AttributeError: '(?:Response|Request)' object",
        ),
        (FailureCategory::SpecDetail, r"expected (?:status )?\d{3} got \d{3}"),
    ]
    .into_iter()
    .map(|(c, p)| (c, Regex::new(p).expect("valid rule")))
    .collect()
});

const EVIDENCE_CHARS: usize = 200;

/// Advisory tags for a failed or non-testable run, one per category with
/// the first line that triggered it. Untagged failures become `other`.
pub fn classify_failures(report: &str) -> Vec<FailureTag> {
    let mut tags: Vec<FailureTag> = Vec::new();
    for (category, rule) in RULES.iter() {
        if let Some(line) = report.lines().find(|l| rule.is_match(l)) {
            tags.push(FailureTag {
                category: *category,
                evidence: line.trim().chars().take(EVIDENCE_CHARS).collect(),
            });
        }
    }
    if tags.is_empty() && !report.trim().is_empty() {
        let first = report.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        tags.push(FailureTag {
            category: FailureCategory::Other,
            evidence: first.trim().chars().take(EVIDENCE_CHARS).collect(),
        });
    }
    tags
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cats(s: &str) -> Vec<FailureCategory> {
        classify_failures(s).into_iter().map(|t| t.category).collect()
    }

    #[test]
    fn rules() {
        assert_eq!(
            cats("ImportError: cannot import name 'JSONEncoder' from 'flask.json'"),
            [FailureCategory::PackageUsage]
        );
        assert_eq!(
            cats("TypeError: Object of type ObjectId is not JSON serializable"),
            [FailureCategory::DatatypeConversion]
        );
        assert_eq!(
            cats("FAILED Profile::login - step 2 [POST /login] status_equals: expected 401 got 400"),
            [FailureCategory::SpecDetail]
        );
        assert_eq!(
            cats("requests.exceptions.ConnectionError: HTTPConnectionPool"),
            [FailureCategory::ApiMisunderstanding]
        );
        assert_eq!(cats("segfault"), [FailureCategory::Other]);
        assert!(cats("").is_empty());
    }
}
