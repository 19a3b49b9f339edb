//! Declarative REST test engine: suites, fixtures, the HTTP controller and
//! the assertion library.

mod assertions;
mod contract;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::LazyLock;
use std::time::Duration;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use assertions::{evaluate_assertion, json_eq, lookup_path, Assertion, Verdict};
pub use contract::{derive_contract_cases, suite_covers, ContractCase, ContractReason};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub service: String,
    pub cases: Vec<TestCase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    Common,
    Specific,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub kind: CaseKind,
    #[serde(default)]
    pub description: String,
    pub steps: Vec<Step>,
    /// Requests run after the case whatever its outcome; unresolved
    /// references skip the step and responses are not checked.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cleanup: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Request(RequestStep),
    Assert(Vec<Assertion>),
    Capture(Capture),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestStep {
    pub method: String,
    pub path: String,
    /// Service receiving the request; defaults to the suite's service.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<String>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub query: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub headers: IndexMap<String, String>,
    /// JSON payload, sent as `application/json` unless `content_type` says otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Value>,
    /// Payload sent verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_body: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capture {
    /// Dotted path into the last JSON body, e.g. `id` or `0.id`.
    pub path: String,
    pub into: String,
}

/// Named values for one service's suite.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub service: String,
    #[serde(default)]
    pub bindings: IndexMap<String, Value>,
    #[serde(default)]
    pub expected: IndexMap<String, Value>,
    #[serde(default)]
    pub auth: IndexMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseRecord {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl ResponseRecord {
    /// The body as JSON; an empty body is `null`.
    pub fn json(&self) -> Result<Value, serde_json::Error> {
        if self.body.trim().is_empty() {
            Ok(Value::Null)
        } else {
            serde_json::from_str(&self.body)
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
#[error("{method} {path}: {reason}")]
pub struct TransportFault {
    pub method: String,
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseVerdict {
    pub service: String,
    pub case_id: String,
    pub kind: CaseKind,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteVerdict {
    pub service: String,
    pub cases: Vec<CaseVerdict>,
}

impl SuiteVerdict {
    pub fn passed(&self) -> usize {
        self.cases.iter().filter(|c| c.passed).count()
    }

    pub fn total(&self) -> usize {
        self.cases.len()
    }

    pub fn all_passed(&self) -> bool {
        self.passed() == self.total()
    }

    /// Pass/fail flags in case order.
    pub fn vector(&self) -> Vec<bool> {
        self.cases.iter().map(|c| c.passed).collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.cases
            .iter()
            .map(|c| serde_json::to_string(c).expect("verdict serializes") + "\n")
            .collect()
    }

    /// One line per failed case, suitable for an error report.
    pub fn failure_lines(&self) -> Vec<String> {
        self.cases
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("FAILED {}::{} - {}", c.service, c.case_id, c.failures.join("; ")))
            .collect()
    }
}

/// Performs one HTTP exchange; never retries.
pub async fn http_call(
    client: &reqwest::Client,
    origin: &str,
    step: &RequestStep,
) -> Result<ResponseRecord, TransportFault> {
    let fault = |reason: &str| TransportFault {
        method: step.method.clone(),
        path: step.path.clone(),
        reason: reason.to_string(),
    };
    let method = reqwest::Method::from_bytes(step.method.to_ascii_uppercase().as_bytes())
        .map_err(|_| fault("invalid method"))?;
    let url = format!("{}{}", origin.trim_end_matches('/'), step.path);
    let mut req = client.request(method, &url);
    if !step.query.is_empty() {
        let pairs: Vec<(&String, &String)> = step.query.iter().collect();
        req = req.query(&pairs);
    }
    for (k, v) in &step.headers {
        req = req.header(k, v);
    }
    let payload = match (&step.raw_body, &step.body) {
        (Some(raw), _) => Some((raw.clone(), "text/plain")),
        (None, Some(body)) => Some((body.to_string(), "application/json")),
        (None, None) => None,
    };
    if let Some((text, default_type)) = payload {
        let ctype = step.content_type.as_deref().unwrap_or(default_type);
        req = req
            .header(reqwest::header::CONTENT_TYPE, ctype)
            .body(text);
    }
    let response = req.send().await.map_err(|e| {
        fault(if e.is_timeout() {
            "timed out"
        } else if e.is_connect() {
            "connection failed"
        } else {
            "request failed"
        })
    })?;
    let status = response.status().as_u16();
    let headers = response
        .headers()
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_str().unwrap_or("").to_string()))
        .collect();
    let body = response.text().await.map_err(|_| fault("body read failed"))?;
    Ok(ResponseRecord { status, headers, body })
}

static REFERENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\$\{([^}]+)\}").unwrap());

struct Env<'a> {
    captures: &'a HashMap<String, Value>,
    fixture: &'a Fixture,
}

/// `today`, `today+N` or `today-N` as a `YYYY-MM-DD` string in UTC.
fn date_builtin(reference: &str) -> Option<Value> {
    let rest = reference.strip_prefix("today")?;
    let offset: i64 = if rest.is_empty() { 0 } else { rest.parse().ok()? };
    let day = chrono::Utc::now()
        .date_naive()
        .checked_add_signed(chrono::TimeDelta::try_days(offset)?)?;
    Some(Value::String(day.format("%Y-%m-%d").to_string()))
}

impl Env<'_> {
    fn lookup(&self, reference: &str) -> Option<Value> {
        if let Some(v) = date_builtin(reference) {
            return Some(v);
        }
        let (root, rest) = reference.split_once('.').unwrap_or((reference, ""));
        let base = self
            .captures
            .get(root)
            .or_else(|| self.fixture.bindings.get(root))
            .or_else(|| self.fixture.expected.get(root))
            .or_else(|| self.fixture.auth.get(root))?;
        lookup_path(base, rest).cloned()
    }

    fn interpolate(&self, text: &str) -> Result<String, String> {
        let mut out = String::with_capacity(text.len());
        let mut last = 0;
        for c in REFERENCE.captures_iter(text) {
            let m = c.get(0).unwrap();
            out.push_str(&text[last..m.start()]);
            let v = self.lookup(&c[1]).ok_or_else(|| format!("unbound reference ${{{}}}", &c[1]))?;
            match v {
                Value::String(s) => out.push_str(&s),
                other => out.push_str(&other.to_string()),
            }
            last = m.end();
        }
        out.push_str(&text[last..]);
        Ok(out)
    }

    fn resolve(&self, value: &Value) -> Result<Value, String> {
        Ok(match value {
            Value::String(s) => match REFERENCE.captures(s) {
                Some(c) if c.get(0).unwrap().as_str() == s => self
                    .lookup(&c[1])
                    .ok_or_else(|| format!("unbound reference {s}"))?,
                _ => Value::String(self.interpolate(s)?),
            },
            Value::Array(a) => Value::Array(a.iter().map(|v| self.resolve(v)).collect::<Result<_, _>>()?),
            Value::Object(m) => Value::Object(
                m.iter()
                    .map(|(k, v)| Ok((k.clone(), self.resolve(v)?)))
                    .collect::<Result<_, String>>()?,
            ),
            other => other.clone(),
        })
    }

    fn resolve_request(&self, step: &RequestStep) -> Result<RequestStep, String> {
        let map = |m: &IndexMap<String, String>| -> Result<IndexMap<String, String>, String> {
            m.iter()
                .map(|(k, v)| Ok((k.clone(), self.interpolate(v)?)))
                .collect()
        };
        Ok(RequestStep {
            method: step.method.clone(),
            path: self.interpolate(&step.path)?,
            service: step.service.clone(),
            query: map(&step.query)?,
            headers: map(&step.headers)?,
            body: step.body.as_ref().map(|b| self.resolve(b)).transpose()?,
            raw_body: step.raw_body.as_deref().map(|b| self.interpolate(b)).transpose()?,
            content_type: step.content_type.clone(),
        })
    }

    fn resolve_assertion(&self, a: &Assertion) -> Result<Assertion, String> {
        Ok(match a {
            Assertion::StatusEquals(c) => Assertion::StatusEquals(*c),
            Assertion::BodyEquals(v) => Assertion::BodyEquals(self.resolve(v)?),
            Assertion::JsonArraySetEquals(items) => Assertion::JsonArraySetEquals(
                items.iter().map(|v| self.resolve(v)).collect::<Result<_, _>>()?,
            ),
            Assertion::FieldEquals { field, value } => Assertion::FieldEquals {
                field: field.clone(),
                value: self.resolve(value)?,
            },
            Assertion::FieldsContainsValue { field, value } => Assertion::FieldsContainsValue {
                field: field.clone(),
                value: self.resolve(value)?,
            },
            Assertion::NumericEquals { field, value, tolerance } => Assertion::NumericEquals {
                field: field.clone(),
                value: self.resolve(value)?,
                tolerance: *tolerance,
            },
        })
    }
}

/// Service name to origin (`http://host:port`) for every reachable service.
pub type Targets = BTreeMap<String, String>;

pub struct SuiteRunner {
    client: reqwest::Client,
}

impl SuiteRunner {
    pub fn new(timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client");
        Self { client }
    }

    /// Runs every case in order, strictly sequentially.
    pub async fn run_suite(&self, suite: &Suite, fixture: &Fixture, targets: &Targets) -> SuiteVerdict {
        let mut cases = Vec::with_capacity(suite.cases.len());
        for case in &suite.cases {
            cases.push(self.run_case(&suite.service, case, fixture, targets).await);
        }
        SuiteVerdict {
            service: suite.service.clone(),
            cases,
        }
    }

    async fn run_case(&self, service: &str, case: &TestCase, fixture: &Fixture, targets: &Targets) -> CaseVerdict {
        let mut captures = HashMap::new();
        let mut last: Option<(String, ResponseRecord)> = None;
        let mut failures = Vec::new();

        for (i, step) in case.steps.iter().enumerate() {
            let env = Env {
                captures: &captures,
                fixture,
            };
            let n = i + 1;
            match step {
                Step::Request(req) => {
                    let resolved = match env.resolve_request(req) {
                        Ok(r) => r,
                        Err(e) => {
                            failures.push(format!("step {n}: {e}"));
                            break;
                        }
                    };
                    let label = format!("{} {}", resolved.method.to_ascii_uppercase(), req.path);
                    let Some(origin) = targets.get(req.service.as_deref().unwrap_or(service)) else {
                        failures.push(format!("step {n}: no target for service {}", req.service.as_deref().unwrap_or(service)));
                        break;
                    };
                    match http_call(&self.client, origin, &resolved).await {
                        Ok(r) => last = Some((label, r)),
                        Err(f) => {
                            failures.push(format!("step {n} [{label}]: transport fault: {}", f.reason));
                            break;
                        }
                    }
                }
                Step::Assert(list) => {
                    let Some((label, response)) = &last else {
                        failures.push(format!("step {n}: assertion before any request"));
                        break;
                    };
                    let before = failures.len();
                    for a in list {
                        match env.resolve_assertion(a) {
                            Ok(resolved) => {
                                if let Verdict::Fail { expected, actual } = evaluate_assertion(&resolved, response) {
                                    failures.push(format!(
                                        "step {n} [{label}] {}: expected {expected} got {actual}",
                                        a.kind()
                                    ));
                                }
                            }
                            Err(e) => failures.push(format!("step {n}: {e}")),
                        }
                    }
                    if failures.len() > before {
                        break;
                    }
                }
                Step::Capture(c) => {
                    let value = last
                        .as_ref()
                        .and_then(|(_, r)| r.json().ok())
                        .and_then(|v| lookup_path(&v, &c.path).cloned());
                    match value {
                        Some(v) => {
                            captures.insert(c.into.clone(), v);
                        }
                        None => {
                            failures.push(format!("step {n}: nothing to capture at {}", c.path));
                            break;
                        }
                    }
                }
            }
        }

        for step in &case.cleanup {
            let Step::Request(req) = step else { continue };
            let env = Env {
                captures: &captures,
                fixture,
            };
            let Ok(resolved) = env.resolve_request(req) else { continue };
            if let Some(origin) = targets.get(req.service.as_deref().unwrap_or(service)) {
                let _ = http_call(&self.client, origin, &resolved).await;
            }
        }

        CaseVerdict {
            service: service.to_string(),
            case_id: case.id.clone(),
            kind: case.kind,
            passed: failures.is_empty(),
            failures,
        }
    }
}

impl Default for SuiteRunner {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

/// Static checks: unique ids, cases start with a request, and every
/// reference is bound by the fixture or captured earlier in its case.
pub fn check_suite(suite: &Suite, fixture: &Fixture) -> Vec<String> {
    let mut problems = Vec::new();
    let mut seen = BTreeSet::new();
    let fixture_names: BTreeSet<&str> = fixture
        .bindings
        .keys()
        .chain(fixture.expected.keys())
        .chain(fixture.auth.keys())
        .map(String::as_str)
        .collect();
    for case in &suite.cases {
        if !seen.insert(case.id.as_str()) {
            problems.push(format!("{}: duplicate case id", case.id));
        }
        if !matches!(case.steps.first(), Some(Step::Request(_))) {
            problems.push(format!("{}: first step is not a request", case.id));
        }
        let mut captured: BTreeSet<String> = BTreeSet::new();
        for (i, step) in case.steps.iter().enumerate() {
            let text = match step {
                Step::Capture(c) => {
                    captured.insert(c.into.clone());
                    continue;
                }
                other => serde_json::to_string(other).unwrap_or_default(),
            };
            for c in REFERENCE.captures_iter(&text) {
                let root = c[1].split('.').next().unwrap_or("");
                if !captured.contains(root) && !fixture_names.contains(root) && date_builtin(root).is_none() {
                    problems.push(format!("{}: step {} uses unbound {}", case.id, i + 1, root));
                }
            }
        }
        let negative = case.steps.iter().any(|s| match s {
            Step::Assert(list) => list
                .iter()
                .any(|a| matches!(a, Assertion::NumericEquals { tolerance, .. } if tolerance.is_nan() || *tolerance < 0.0)),
            _ => false,
        });
        if negative {
            problems.push(format!("{}: negative tolerance", case.id));
        }
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn references_resolve_in_order() {
        let mut fixture = Fixture::default();
        fixture.bindings.insert("X1".into(), json!({"name": "Ada", "n": 3}));
        fixture.expected.insert("X1".into(), json!("shadowed"));
        let mut captures = HashMap::new();
        captures.insert("c".into(), json!("abc"));
        let env = Env {
            captures: &captures,
            fixture: &fixture,
        };
        assert_eq!(env.resolve(&json!("${X1}")).unwrap(), json!({"name": "Ada", "n": 3}));
        assert_eq!(env.resolve(&json!("${X1.n}")).unwrap(), json!(3));
        assert_eq!(env.resolve(&json!("/a/${c}?n=${X1.n}")).unwrap(), json!("/a/abc?n=3"));
        assert!(env.resolve(&json!("${nope}")).is_err());
    }

    #[test]
    fn relative_dates() {
        let today = chrono::Utc::now().date_naive();
        let day = |v: Value| chrono::NaiveDate::parse_from_str(v.as_str().unwrap(), "%Y-%m-%d").unwrap();
        assert_eq!(day(date_builtin("today").unwrap()), today);
        assert_eq!((day(date_builtin("today-30").unwrap()) - today).num_days(), -30);
        assert_eq!((day(date_builtin("today+14").unwrap()) - today).num_days(), 14);
        assert!(date_builtin("todayx").is_none());
        assert!(date_builtin("tomorrow").is_none());
    }

    #[test]
    fn step_json_shape() {
        let step: Step = serde_json::from_value(json!({
            "request": {"method": "POST", "path": "/cardholders", "body": "${X1}"}
        }))
        .unwrap();
        assert!(matches!(step, Step::Request(_)));
        let step: Step = serde_json::from_value(json!({"assert": [{"status_equals": 201}]})).unwrap();
        assert_eq!(step, Step::Assert(vec![Assertion::StatusEquals(201)]));
    }

    #[test]
    fn static_check_catches_use_before_capture() {
        let suite: Suite = serde_json::from_value(json!({
            "service": "S",
            "cases": [
                {"id": "a", "kind": "common", "steps": [
                    {"request": {"method": "GET", "path": "/s/${id}"}},
                    {"capture": {"path": "id", "into": "id"}}
                ]},
                {"id": "a", "kind": "common", "steps": [{"assert": []}]}
            ]
        }))
        .unwrap();
        let problems = check_suite(&suite, &Fixture::default());
        assert_eq!(problems.len(), 3, "{problems:?}");
    }
}
