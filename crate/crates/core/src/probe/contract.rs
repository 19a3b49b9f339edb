use serde::Serialize;

use super::{Assertion, Step, Suite};
use crate::spec_model::{ServiceSpec, Verb};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractReason {
    NotFound,
    UnsupportedMediaType,
    MethodNotAllowed,
    MalformedPayload,
}

impl ContractReason {
    pub fn status(self) -> u16 {
        match self {
            ContractReason::NotFound => 404,
            ContractReason::UnsupportedMediaType => 415,
            ContractReason::MethodNotAllowed => 405,
            ContractReason::MalformedPayload => 400,
        }
    }
}

/// A status-code obligation implied by a service's request list.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct ContractCase {
    pub verb: Verb,
    pub path_template: String,
    pub reason: ContractReason,
}

fn is_internal(path: &str) -> bool {
    path.starts_with("/internal/")
}

/// Every 404 (unknown id), 415 and 400 (payload-carrying verbs) and 405
/// (undeclared verb on a public resource) obligation of `service`.
pub fn derive_contract_cases(service: &ServiceSpec) -> Vec<ContractCase> {
    let mut out = Vec::new();
    for r in service.requests.iter().filter(|r| !is_internal(&r.path_template)) {
        let case = |reason| ContractCase {
            verb: r.verb,
            path_template: r.path_template.clone(),
            reason,
        };
        if r.path_template.contains('{') {
            out.push(case(ContractReason::NotFound));
        }
        if r.payload_schema.is_some() {
            out.push(case(ContractReason::UnsupportedMediaType));
            out.push(case(ContractReason::MalformedPayload));
        }
    }
    for res in service.resources.iter().filter(|r| !is_internal(&r.path_template)) {
        for verb in Verb::ALL {
            if service.request(verb, &res.path_template).is_none() {
                out.push(ContractCase {
                    verb,
                    path_template: res.path_template.clone(),
                    reason: ContractReason::MethodNotAllowed,
                });
            }
        }
    }
    out.sort();
    out
}

fn path_matches(template: &str, path: &str) -> bool {
    let path = path.split('?').next().unwrap_or("");
    let t: Vec<&str> = template.trim_matches('/').split('/').collect();
    let p: Vec<&str> = path.trim_matches('/').split('/').collect();
    t.len() == p.len()
        && t.iter().zip(&p).all(|(ts, ps)| {
            (ts.starts_with('{') && ts.ends_with('}') && !ps.is_empty()) || ts == ps
        })
}

/// Obligations with no request step in `suite` that exercises them and
/// asserts the expected status.
pub fn suite_covers(suite: &Suite, obligations: &[ContractCase]) -> Vec<ContractCase> {
    let mut exercised = Vec::new();
    for case in &suite.cases {
        let mut pending: Option<(String, String)> = None;
        for step in &case.steps {
            match step {
                Step::Request(r) if r.service.as_deref().is_none_or(|s| s == suite.service) => {
                    pending = Some((r.method.to_ascii_uppercase(), r.path.clone()));
                }
                Step::Request(_) => pending = None,
                Step::Assert(list) => {
                    if let Some((method, path)) = &pending {
                        for a in list {
                            if let Assertion::StatusEquals(code) = a {
                                exercised.push((method.clone(), path.clone(), *code));
                            }
                        }
                    }
                }
                Step::Capture(_) => {}
            }
        }
    }
    obligations
        .iter()
        .filter(|o| {
            !exercised.iter().any(|(m, p, code)| {
                m == o.verb.as_str() && *code == o.reason.status() && path_matches(&o.path_template, p)
            })
        })
        .cloned()
        .collect()
}
