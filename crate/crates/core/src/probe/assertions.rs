use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ResponseRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assertion {
    StatusEquals(u16),
    /// An empty body compares as `null`.
    BodyEquals(Value),
    /// Order-insensitive; an `id` on an actual element is ignored when the
    /// matching expected element has none.
    JsonArraySetEquals(Vec<Value>),
    FieldEquals { field: String, value: Value },
    /// Every element of the array body has an array `field` containing `value`.
    FieldsContainsValue { field: String, value: Value },
    NumericEquals {
        #[serde(default)]
        field: Option<String>,
        value: Value,
        tolerance: f64,
    },
}

impl Assertion {
    pub fn kind(&self) -> &'static str {
        match self {
            Assertion::StatusEquals(_) => "status_equals",
            Assertion::BodyEquals(_) => "body_equals",
            Assertion::JsonArraySetEquals(_) => "json_array_set_equals",
            Assertion::FieldEquals { .. } => "field_equals",
            Assertion::FieldsContainsValue { .. } => "fields_contains_value",
            Assertion::NumericEquals { .. } => "numeric_equals",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail { expected: String, actual: String },
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

const SHOWN: usize = 300;

fn show(v: &Value) -> String {
    clip(&v.to_string())
}

fn clip(s: &str) -> String {
    if s.len() <= SHOWN {
        return s.to_string();
    }
    let mut end = SHOWN;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}

fn fail(expected: impl Into<String>, actual: impl Into<String>) -> Verdict {
    Verdict::Fail {
        expected: expected.into(),
        actual: actual.into(),
    }
}

/// Structural equality with numbers compared by value.
pub fn json_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| json_eq(p, q)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| json_eq(v, w)))
        }
        _ => a == b,
    }
}

fn element_matches(expected: &Value, actual: &Value) -> bool {
    match (expected, actual) {
        (Value::Object(e), Value::Object(a)) if !e.contains_key("id") && a.contains_key("id") => {
            let mut stripped = a.clone();
            stripped.remove("id");
            json_eq(expected, &Value::Object(stripped))
        }
        _ => json_eq(expected, actual),
    }
}

/// Follows a dotted path; numeric segments index arrays.
pub fn lookup_path<'v>(value: &'v Value, path: &str) -> Option<&'v Value> {
    if path.is_empty() {
        return Some(value);
    }
    path.split('.').try_fold(value, |v, seg| match v {
        Value::Object(m) => m.get(seg),
        Value::Array(a) => seg.parse::<usize>().ok().and_then(|i| a.get(i)),
        _ => None,
    })
}

fn body_json(response: &ResponseRecord) -> Result<Value, Verdict> {
    response
        .json()
        .map_err(|e| fail("a JSON body", format!("unparsable body ({e}): {}", clip(&response.body))))
}

/// Pure evaluation of one resolved assertion against a response.
pub fn evaluate_assertion(assertion: &Assertion, response: &ResponseRecord) -> Verdict {
    match evaluate(assertion, response) {
        Ok(v) | Err(v) => v,
    }
}

fn evaluate(assertion: &Assertion, response: &ResponseRecord) -> Result<Verdict, Verdict> {
    Ok(match assertion {
        Assertion::StatusEquals(code) => {
            if response.status == *code {
                Verdict::Pass
            } else {
                fail(code.to_string(), response.status.to_string())
            }
        }
        Assertion::BodyEquals(expected) => {
            let actual = body_json(response)?;
            if json_eq(expected, &actual) {
                Verdict::Pass
            } else {
                fail(show(expected), show(&actual))
            }
        }
        Assertion::JsonArraySetEquals(expected) => {
            let actual = body_json(response)?;
            let Value::Array(items) = &actual else {
                return Err(fail("a JSON array", show(&actual)));
            };
            let shown = show(&Value::Array(expected.clone()));
            if items.len() != expected.len() {
                return Err(fail(shown, show(&actual)));
            }
            let mut used = vec![false; items.len()];
            for e in expected {
                let slot = (0..items.len()).find(|&i| !used[i] && element_matches(e, &items[i]));
                match slot {
                    Some(i) => used[i] = true,
                    None => return Err(fail(shown, show(&actual))),
                }
            }
            Verdict::Pass
        }
        Assertion::FieldEquals { field, value } => {
            let actual = body_json(response)?;
            match lookup_path(&actual, field) {
                Some(v) if json_eq(value, v) => Verdict::Pass,
                Some(v) => fail(format!("{field} = {}", show(value)), format!("{field} = {}", show(v))),
                None => fail(format!("{field} = {}", show(value)), format!("no field {field}")),
            }
        }
        Assertion::FieldsContainsValue { field, value } => {
            let actual = body_json(response)?;
            let Value::Array(items) = &actual else {
                return Err(fail("a JSON array", show(&actual)));
            };
            for (i, item) in items.iter().enumerate() {
                let ok = item
                    .get(field)
                    .and_then(Value::as_array)
                    .is_some_and(|arr| arr.iter().any(|x| json_eq(x, value)));
                if !ok {
                    return Err(fail(
                        format!("every {field} contains {}", show(value)),
                        format!("element {i} is {}", show(item)),
                    ));
                }
            }
            Verdict::Pass
        }
        Assertion::NumericEquals { field, value, tolerance } => {
            if tolerance.is_nan() || *tolerance < 0.0 {
                return Err(fail("a non-negative tolerance", tolerance.to_string()));
            }
            let Some(want) = value.as_f64() else {
                return Err(fail("a numeric expected value", show(value)));
            };
            let actual = body_json(response)?;
            let target = match field {
                Some(f) => lookup_path(&actual, f),
                None => Some(&actual),
            };
            match target.and_then(Value::as_f64) {
                Some(got) if (got - want).abs() <= *tolerance => Verdict::Pass,
                Some(got) => fail(format!("{want} ± {tolerance}"), got.to_string()),
                None => fail(format!("{want} ± {tolerance}"), "no number".to_string()),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn resp(status: u16, body: &str) -> ResponseRecord {
        ResponseRecord {
            status,
            headers: Vec::new(),
            body: body.to_string(),
        }
    }

    #[test]
    fn contains_value() {
        let a = Assertion::FieldsContainsValue {
            field: "authors".into(),
            value: json!("Kay"),
        };
        assert!(evaluate_assertion(&a, &resp(200, r#"[{"authors":["Kay"]}]"#)).is_pass());
        assert!(evaluate_assertion(&a, &resp(200, "[]")).is_pass());
        assert!(!evaluate_assertion(&a, &resp(200, r#"[{"authors":["Lee"]}]"#)).is_pass());
        assert!(!evaluate_assertion(&a, &resp(200, r#"[{"authors":"Kay"}]"#)).is_pass());
        assert!(!evaluate_assertion(&a, &resp(200, "not json")).is_pass());
    }

    #[test]
    fn numeric_tolerance() {
        let a = Assertion::NumericEquals {
            field: None,
            value: json!(2.0),
            tolerance: 1e-9,
        };
        assert!(evaluate_assertion(&a, &resp(200, "2.0000000001")).is_pass());
        assert!(!evaluate_assertion(&a, &resp(200, "2.1")).is_pass());
        let a = Assertion::NumericEquals {
            field: Some("fineAmount".into()),
            value: json!(2),
            tolerance: 0.0,
        };
        assert!(evaluate_assertion(&a, &resp(200, r#"{"fineAmount": 2.0}"#)).is_pass());
    }

    #[test]
    fn set_equality_ignores_unbound_ids() {
        let a = Assertion::JsonArraySetEquals(vec![json!({"name": "A"}), json!({"name": "C"})]);
        let body = r#"[{"id":"3","name":"C"},{"id":"1","name":"A"}]"#;
        assert!(evaluate_assertion(&a, &resp(200, body)).is_pass());
        let a = Assertion::JsonArraySetEquals(vec![json!({"id": "9", "name": "A"}), json!({"name": "C"})]);
        assert!(!evaluate_assertion(&a, &resp(200, body)).is_pass());
        let a = Assertion::JsonArraySetEquals(vec![json!({"name": "A"})]);
        assert!(!evaluate_assertion(&a, &resp(200, body)).is_pass());
    }

    #[test]
    fn status_and_body() {
        let v = evaluate_assertion(&Assertion::StatusEquals(404), &resp(200, ""));
        assert_eq!(
            v,
            Verdict::Fail {
                expected: "404".into(),
                actual: "200".into()
            }
        );
        assert!(evaluate_assertion(&Assertion::BodyEquals(Value::Null), &resp(204, "")).is_pass());
        assert!(evaluate_assertion(&Assertion::BodyEquals(json!([])), &resp(200, "[]")).is_pass());
    }

    #[test]
    fn paths() {
        let v = json!([{"id": "a", "tags": ["x"]}]);
        assert_eq!(lookup_path(&v, "0.id"), Some(&json!("a")));
        assert_eq!(lookup_path(&v, "0.tags.0"), Some(&json!("x")));
        assert_eq!(lookup_path(&v, "1.id"), None);
    }
}
