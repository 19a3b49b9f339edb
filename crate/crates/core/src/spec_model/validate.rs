use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::{AppSpec, ServiceSpec, Verb};

/// One broken invariant. `service` is empty for application-level issues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub service: String,
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(service: &str, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            service: service.to_string(),
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.service.is_empty() {
            write!(f, "{}: {}", self.field, self.message)
        } else {
            write!(f, "{}.{}: {}", self.service, self.field, self.message)
        }
    }
}

/// Checks every type invariant and returns all violations found.
pub fn validate(spec: &AppSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if spec.services.is_empty() {
        out.push(Violation::new("", "services", "at least one service is required"));
    }

    let mut seen = HashSet::new();
    for s in &spec.services {
        if !seen.insert(s.name.as_str()) {
            out.push(Violation::new(&s.name, "Name", format!("duplicate service name `{}`", s.name)));
        }
    }

    for s in &spec.services {
        validate_service(spec, s, &mut out);
    }
    out
}

fn validate_service(spec: &AppSpec, s: &ServiceSpec, out: &mut Vec<Violation>) {
    let svc = s.name.as_str();

    let mut paths = HashSet::new();
    for (i, r) in s.resources.iter().enumerate() {
        let field = format!("Resources.items[{i}].path");
        if !r.path_template.starts_with('/') {
            out.push(Violation::new(svc, &field, format!("path `{}` must start with '/'", r.path_template)));
        }
        if !paths.insert(r.path_template.as_str()) {
            out.push(Violation::new(svc, &field, format!("duplicate resource path `{}`", r.path_template)));
        }
        let mut names = HashSet::new();
        for p in r.placeholders() {
            if !names.insert(p) {
                out.push(Violation::new(
                    svc,
                    &field,
                    format!("placeholder `{{{p}}}` repeated in `{}`", r.path_template),
                ));
            }
        }
    }

    let mut pairs: HashSet<(Verb, &str)> = HashSet::new();
    for (i, r) in s.requests.iter().enumerate() {
        let field = format!("REST requests.items[{i}]");
        if !s
            .resources
            .iter()
            .any(|res| same_template(&res.path_template, &r.path_template))
        {
            out.push(Violation::new(
                svc,
                format!("{field}.path"),
                format!("{} {} does not match any declared resource", r.verb, r.path_template),
            ));
        }
        if !pairs.insert((r.verb, r.path_template.as_str())) {
            out.push(Violation::new(
                svc,
                format!("{field}.path"),
                format!("{} {} declared more than once", r.verb, r.path_template),
            ));
        }
        if ![200, 201, 204].contains(&r.success_status) {
            out.push(Violation::new(
                svc,
                format!("{field}.success_status"),
                format!("success status {} is not one of 200, 201, 204", r.success_status),
            ));
        }
        if matches!(r.verb, Verb::Post | Verb::Put) && r.payload_schema.is_none() {
            out.push(Violation::new(
                svc,
                format!("{field}.payload"),
                format!("{} {} needs a payload schema", r.verb, r.path_template),
            ));
        }
        if r.verb == Verb::Delete && r.success_status == 204 && r.returns_body == Some(true) {
            out.push(Violation::new(
                svc,
                format!("{field}.returns_body"),
                "a 204 DELETE response has no body",
            ));
        }
    }

    let d = &s.deployment;
    if d.external_port < 1024 {
        out.push(Violation::new(
            svc,
            "Deployment.port",
            format!("port {} outside 1024-65535", d.external_port),
        ));
    }
    match url::Url::parse(&d.internal_base_url) {
        Ok(u) => {
            let host = u.host_str().unwrap_or_default();
            if spec.service_for_host(host).is_none() {
                out.push(Violation::new(
                    svc,
                    "Deployment.url",
                    format!("URL `{}` references undeclared service `{host}`", d.internal_base_url),
                ));
            }
            if !host.eq_ignore_ascii_case(&d.container_name) {
                out.push(Violation::new(
                    svc,
                    "Deployment.url",
                    format!("URL host `{host}` differs from container name `{}`", d.container_name),
                ));
            }
            if u.port() != Some(d.external_port) {
                out.push(Violation::new(
                    svc,
                    "Deployment.url",
                    format!("URL `{}` does not carry port {}", d.internal_base_url, d.external_port),
                ));
            }
        }
        Err(e) => out.push(Violation::new(
            svc,
            "Deployment.url",
            format!("invalid URL `{}`: {e}", d.internal_base_url),
        )),
    }
}

/// Two templates name the same resource when their literal segments agree
/// and placeholders line up, whatever the placeholder names.
fn same_template(a: &str, b: &str) -> bool {
    let norm = |t: &str| -> Vec<String> {
        t.trim_end_matches('/')
            .split('/')
            .map(|seg| {
                if seg.starts_with('{') && seg.ends_with('}') {
                    "{}".to_string()
                } else {
                    seg.to_string()
                }
            })
            .collect()
    };
    norm(a) == norm(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_matching_ignores_placeholder_names() {
        assert!(same_template("/books/{id}", "/books/{bookId}"));
        assert!(!same_template("/books/{id}", "/books"));
        assert!(same_template("/books/", "/books"));
    }
}
