//! Application specifications in the six-field service template.
//!
//! A spec file holds one application: a name, a human title used in
//! prompts, a free-text preamble and an ordered list of services. Each
//! service object carries exactly the keys `Name`, `Description`,
//! `Resources`, `REST requests`, `Additional details` and `Deployment`.
//! The prose of every field is what the model sees; the structured
//! `items` next to it drive validation, contract tests and composition.

mod render;
mod validate;

use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use render::render_prompt_text;
pub use validate::{validate, Violation};

/// The five value kinds a representation field may have.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    String,
    Integer,
    Float,
    Array,
    Object,
}

impl ScalarKind {
    /// Whether a JSON value is an instance of this kind. `null` is accepted
    /// for every kind (fields such as `returnDate` start out unset).
    pub fn admits(self, value: &serde_json::Value) -> bool {
        use serde_json::Value;
        match (self, value) {
            (_, Value::Null) => true,
            (ScalarKind::String, Value::String(_)) => true,
            (ScalarKind::Integer, Value::Number(n)) => n.is_i64() || n.is_u64(),
            (ScalarKind::Float, Value::Number(_)) => true,
            (ScalarKind::Array, Value::Array(_)) => true,
            (ScalarKind::Object, Value::Object(_)) => true,
            _ => false,
        }
    }
}

/// Field name to kind, in declaration order.
pub type Representation = IndexMap<String, ScalarKind>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verb {
    Get,
    Post,
    Put,
    Delete,
}

impl Verb {
    pub const ALL: [Verb; 4] = [Verb::Get, Verb::Post, Verb::Put, Verb::Delete];

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Get => "GET",
            Verb::Post => "POST",
            Verb::Put => "PUT",
            Verb::Delete => "DELETE",
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSpec {
    #[serde(rename = "path")]
    pub path_template: String,
    #[serde(default)]
    pub representation: Representation,
}

impl ResourceSpec {
    /// Names of the `{param}` placeholders, in order of appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        placeholders(&self.path_template)
    }
}

pub(crate) fn placeholders(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else {
            break;
        };
        out.push(&rest[open + 1..open + close]);
        rest = &rest[open + close + 1..];
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSpec {
    pub verb: Verb,
    #[serde(rename = "path")]
    pub path_template: String,
    #[serde(rename = "query_filter", default, skip_serializing_if = "is_false")]
    pub accepts_query_filter: bool,
    #[serde(rename = "payload", default, skip_serializing_if = "Option::is_none")]
    pub payload_schema: Option<Representation>,
    pub success_status: u16,
    #[serde(default, skip_serializing_if = "is_false")]
    pub auth_required: bool,
    /// Explicit statement that the success response carries a body.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub returns_body: Option<bool>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub text: String,
    #[serde(rename = "container")]
    pub container_name: String,
    #[serde(rename = "port")]
    pub external_port: u16,
    #[serde(rename = "url")]
    pub internal_base_url: String,
}

impl Deployment {
    /// `http://<container>:<port>` without the resource path.
    pub fn internal_origin(&self) -> String {
        match url::Url::parse(&self.internal_base_url) {
            Ok(u) => {
                let mut origin = u.origin().ascii_serialization();
                if u.port().is_none() {
                    origin.push_str(&format!(":{}", self.external_port));
                }
                origin
            }
            Err(_) => format!("http://{}:{}", self.container_name, self.external_port),
        }
    }

    /// Path component of the internal URL, e.g. `/cardholders`.
    pub fn base_path(&self) -> String {
        url::Url::parse(&self.internal_base_url)
            .map(|u| u.path().to_string())
            .unwrap_or_else(|_| "/".to_string())
    }
}

/// One service of an application.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceSpec {
    /// Identity used everywhere else (`Cardholders`), derived from the
    /// `Name` field by dropping a trailing "microservice".
    pub name: String,
    /// The `Name` field exactly as written.
    pub display_name: String,
    pub description: String,
    pub resources_text: String,
    pub resources: Vec<ResourceSpec>,
    pub requests_text: String,
    pub requests: Vec<RequestSpec>,
    pub additional_details: String,
    pub deployment: Deployment,
}

impl ServiceSpec {
    pub fn request(&self, verb: Verb, path: &str) -> Option<&RequestSpec> {
        self.requests
            .iter()
            .find(|r| r.verb == verb && r.path_template == path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppSpec {
    pub name: String,
    /// Used in the generation prompt: "a description of the microservices
    /// for a <title> application".
    pub title: String,
    /// `published` or `reconstructed`.
    pub source: String,
    pub preamble: String,
    pub services: Vec<ServiceSpec>,
}

impl AppSpec {
    pub fn service(&self, name: &str) -> Option<&ServiceSpec> {
        self.services.iter().find(|s| s.name == name)
    }

    pub fn service_names(&self) -> Vec<&str> {
        self.services.iter().map(|s| s.name.as_str()).collect()
    }

    /// Resolves a URL host (`borrows`) to the service it names.
    pub fn service_for_host(&self, host: &str) -> Option<&ServiceSpec> {
        self.services.iter().find(|s| {
            s.name.eq_ignore_ascii_case(host) || s.deployment.container_name.eq_ignore_ascii_case(host)
        })
    }

    pub fn is_reconstructed(&self) -> bool {
        self.source != "published"
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("{path}: cannot read spec: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column} (field `{field}`): {message}")]
    Parse {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("spec has {} violation(s): {}", .0.len(), join_violations(.0))]
    Validation(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

// On-disk layout. Keys mirror the template verbatim.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AppDoc {
    name: String,
    #[serde(default)]
    title: String,
    #[serde(default = "default_source")]
    source: String,
    #[serde(default)]
    preamble: String,
    services: Vec<ServiceDoc>,
}

fn default_source() -> String {
    "published".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServiceDoc {
    #[serde(rename = "Name")]
    name: String,
    #[serde(rename = "Description")]
    description: String,
    #[serde(rename = "Resources")]
    resources: TextWithItems<ResourceSpec>,
    #[serde(rename = "REST requests")]
    requests: TextWithItems<RequestSpec>,
    #[serde(rename = "Additional details")]
    additional_details: String,
    #[serde(rename = "Deployment")]
    deployment: Deployment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Deserialize<'de>"))]
struct TextWithItems<T> {
    text: String,
    #[serde(default)]
    items: Vec<T>,
}

fn service_identity(display: &str) -> String {
    let trimmed = display.trim();
    let lower = trimmed.to_ascii_lowercase();
    match lower.strip_suffix("microservice") {
        Some(head) if !head.trim().is_empty() => trimmed[..head.trim_end().len()].to_string(),
        _ => trimmed.to_string(),
    }
}

impl From<AppDoc> for AppSpec {
    fn from(doc: AppDoc) -> Self {
        AppSpec {
            name: doc.name,
            title: doc.title,
            source: doc.source,
            preamble: doc.preamble,
            services: doc
                .services
                .into_iter()
                .map(|s| ServiceSpec {
                    name: service_identity(&s.name),
                    display_name: s.name,
                    description: s.description,
                    resources_text: s.resources.text,
                    resources: s.resources.items,
                    requests_text: s.requests.text,
                    requests: s.requests.items,
                    additional_details: s.additional_details,
                    deployment: s.deployment,
                })
                .collect(),
        }
    }
}

impl From<&AppSpec> for AppDoc {
    fn from(spec: &AppSpec) -> Self {
        AppDoc {
            name: spec.name.clone(),
            title: spec.title.clone(),
            source: spec.source.clone(),
            preamble: spec.preamble.clone(),
            services: spec
                .services
                .iter()
                .map(|s| ServiceDoc {
                    name: s.display_name.clone(),
                    description: s.description.clone(),
                    resources: TextWithItems {
                        text: s.resources_text.clone(),
                        items: s.resources.clone(),
                    },
                    requests: TextWithItems {
                        text: s.requests_text.clone(),
                        items: s.requests.clone(),
                    },
                    additional_details: s.additional_details.clone(),
                    deployment: s.deployment.clone(),
                })
                .collect(),
        }
    }
}

/// Parses a spec document without validating it.
pub fn parse_unchecked(document: &str) -> Result<AppSpec, SpecError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: AppDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        SpecError::Parse {
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })?;
    Ok(doc.into())
}

/// Parses and validates a spec document. All violations are reported at once.
pub fn parse_spec(document: &str) -> Result<AppSpec, SpecError> {
    let spec = parse_unchecked(document)?;
    let violations = validate(&spec);
    if violations.is_empty() {
        Ok(spec)
    } else {
        Err(SpecError::Validation(violations))
    }
}

pub fn load_spec(path: &Path) -> Result<AppSpec, SpecError> {
    let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_spec(&text)
}

/// Serializes a spec back into the on-disk document format.
pub fn to_document(spec: &AppSpec) -> String {
    let doc = AppDoc::from(spec);
    let mut out = serde_json::to_string_pretty(&doc).expect("spec documents always serialize");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_strips_microservice_suffix() {
        assert_eq!(service_identity("Cardholders microservice"), "Cardholders");
        assert_eq!(service_identity("Logs"), "Logs");
        assert_eq!(service_identity("microservice"), "microservice");
    }

    #[test]
    fn placeholders_in_order() {
        assert_eq!(placeholders("/a/{x}/b/{y}"), vec!["x", "y"]);
        assert!(placeholders("/a").is_empty());
    }

    #[test]
    fn malformed_document_reports_field_path() {
        let doc = r#"{"name": "x", "services": [{"Name": 3}]}"#;
        match parse_unchecked(doc) {
            Err(SpecError::Parse { field, line, .. }) => {
                assert!(field.contains("services[0]"), "{field}");
                assert_eq!(line, 1);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn kinds_admit_values() {
        use serde_json::json;
        assert!(ScalarKind::Integer.admits(&json!(3)));
        assert!(!ScalarKind::Integer.admits(&json!(3.5)));
        assert!(ScalarKind::Float.admits(&json!(3)));
        assert!(ScalarKind::String.admits(&json!(null)));
        assert!(!ScalarKind::Array.admits(&json!("a")));
    }
}
