use std::collections::BTreeMap;
use std::sync::LazyLock;

use indexmap::IndexMap;
use regex::Regex;

use crate::probe::SuiteVerdict;

#[derive(Debug, Clone, PartialEq)]
pub struct TrimConfig {
    pub byte_cap: usize,
    /// Stack frames kept per exception, counted from the innermost.
    pub frames: usize,
}

impl Default for TrimConfig {
    fn default() -> Self {
        Self {
            byte_cap: 16 * 1024,
            frames: 5,
        }
    }
}

static EXCEPTION_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*([A-Za-z_][A-Za-z0-9_.]*(?:Error|Exception|Warning|Exit|Interrupt|Fault))(?::\s*(.*))?$")
        .unwrap()
});

/// Closing line of a traceback: any dotted name, e.g. `bson.errors.InvalidId`.
static TRACEBACK_TAIL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([A-Za-z_]\w*(?:\.[A-Za-z_]\w*)*)(?::\s*(.*))?$").unwrap());

const MESSAGE_CHARS: usize = 160;

struct Exception {
    count: usize,
    message: String,
}

/// Distils logs and verdicts into a report for reflection: failed tests
/// first, then one line per exception type with its count, then stack
/// excerpts. Identical blocks are merged with a `×N` counter and the
/// result never exceeds `config.byte_cap` bytes.
pub fn trim_errors(
    logs: &BTreeMap<String, String>,
    verdict: Option<&SuiteVerdict>,
    notes: &[String],
    config: &TrimConfig,
) -> String {
    let mut failures: Vec<String> = notes.to_vec();
    if let Some(v) = verdict {
        failures.extend(v.failure_lines());
    }

    let mut exceptions: IndexMap<String, Exception> = IndexMap::new();
    let mut blocks: IndexMap<String, usize> = IndexMap::new();
    for (service, text) in logs {
        scan_log(service, text, config.frames, &mut exceptions, &mut blocks);
    }

    if failures.is_empty() && exceptions.is_empty() {
        return String::new();
    }

    let cap = config.byte_cap;
    let summary = render_summary(&exceptions, true);
    let summary = if summary.len() <= cap / 2 {
        summary
    } else {
        let bare = render_summary(&exceptions, false);
        truncate_middle(&bare, cap)
    };

    let details: String = blocks
        .iter()
        .map(|(block, n)| {
            if *n > 1 {
                format!("{block} [×{n}]\n")
            } else {
                format!("{block}\n")
            }
        })
        .collect();
    let failures = failures.join("\n");

    let sep = 2;
    let mut budget = cap.saturating_sub(summary.len() + 2 * sep);
    let fail_budget = if details.is_empty() { budget } else { budget / 2 };
    let failures = truncate_middle(&failures, fail_budget.min(failures.len()));
    budget = budget.saturating_sub(failures.len());
    let details = truncate_middle(&details, budget);

    let out: Vec<&str> = [failures.as_str(), summary.as_str(), details.trim_end()]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect();
    let out = out.join("\n\n");
    truncate_middle(&out, cap)
}

fn render_summary(exceptions: &IndexMap<String, Exception>, with_messages: bool) -> String {
    if exceptions.is_empty() {
        return String::new();
    }
    let mut out = String::from("Exceptions:\n");
    for (kind, e) in exceptions {
        out.push_str(kind);
        if with_messages && !e.message.is_empty() {
            out.push_str(": ");
            out.push_str(&clip(&e.message, MESSAGE_CHARS));
        }
        if e.count > 1 {
            out.push_str(&format!(" [×{}]", e.count));
        }
        out.push('\n');
    }
    out.trim_end().to_string()
}

fn scan_log(
    service: &str,
    text: &str,
    frames: usize,
    exceptions: &mut IndexMap<String, Exception>,
    blocks: &mut IndexMap<String, usize>,
) {
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if line.trim_start().starts_with("Traceback (most recent call last)") {
            let start = i;
            i += 1;
            while i < lines.len() && (lines[i].starts_with(' ') || lines[i].starts_with('\t')) {
                i += 1;
            }
            let body = &lines[start + 1..i];
            let tail = lines.get(i).copied();
            let mut kept = format!("[{service}] Traceback (most recent call last):\n");
            let frame_starts: Vec<usize> = body
                .iter()
                .enumerate()
                .filter(|(_, l)| l.trim_start().starts_with("File "))
                .map(|(j, _)| j)
                .collect();
            let from = if frame_starts.len() > frames {
                kept.push_str(&format!("  ... {} earlier frames omitted\n", frame_starts.len() - frames));
                frame_starts
                    .get(frame_starts.len() - frames)
                    .copied()
                    .unwrap_or(body.len())
            } else {
                0
            };
            for l in &body[from..] {
                kept.push_str(l);
                kept.push('\n');
            }
            if let Some(t) = tail {
                record_exception(&TRACEBACK_TAIL, t, exceptions);
                kept.push_str(t);
                i += 1;
            }
            *blocks.entry(kept.trim_end().to_string()).or_insert(0) += 1;
            continue;
        }
        if EXCEPTION_LINE.is_match(line) {
            record_exception(&EXCEPTION_LINE, line, exceptions);
            *blocks.entry(format!("[{service}] {}", line.trim())).or_insert(0) += 1;
        }
        i += 1;
    }
}

fn record_exception(pattern: &Regex, line: &str, exceptions: &mut IndexMap<String, Exception>) {
    if let Some(c) = pattern.captures(line.trim_end()) {
        let kind = c[1].to_string();
        let message = c.get(2).map_or("", |m| m.as_str()).trim().to_string();
        exceptions
            .entry(kind)
            .and_modify(|e| e.count += 1)
            .or_insert(Exception { count: 1, message });
    }
}

fn clip(s: &str, chars: usize) -> String {
    if s.chars().count() <= chars {
        s.to_string()
    } else {
        let cut: String = s.chars().take(chars).collect();
        format!("{cut}...")
    }
}

fn floor_boundary(s: &str, mut i: usize) -> usize {
    i = i.min(s.len());
    while !s.is_char_boundary(i) {
        i -= 1;
    }
    i
}

fn ceil_boundary(s: &str, mut i: usize) -> usize {
    while i < s.len() && !s.is_char_boundary(i) {
        i += 1;
    }
    i
}

/// Keeps the head and tail of `s` around an omission marker so the
/// result fits in `cap` bytes.
pub(crate) fn truncate_middle(s: &str, cap: usize) -> String {
    if s.len() <= cap {
        return s.to_string();
    }
    let marker = format!("\n... [{} bytes omitted] ...\n", s.len());
    if cap <= marker.len() + 2 {
        return s[..floor_boundary(s, cap)].to_string();
    }
    let room = cap - marker.len();
    let head = floor_boundary(s, room / 2);
    let tail = ceil_boundary(s, s.len() - (room - room / 2));
    let marker = format!("\n... [{} bytes omitted] ...\n", tail - head);
    format!("{}{}{}", &s[..head], marker, &s[tail..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::{CaseKind, CaseVerdict};

    fn logs(text: &str) -> BTreeMap<String, String> {
        BTreeMap::from([("Logs".to_string(), text.to_string())])
    }

    #[test]
    fn empty_input_gives_empty_report() {
        assert_eq!(trim_errors(&BTreeMap::new(), None, &[], &TrimConfig::default()), "");
        assert_eq!(trim_errors(&logs("GET /logs 200\n"), None, &[], &TrimConfig::default()), "");
    }

    #[test]
    fn failure_line_survives_verbatim() {
        let verdict = SuiteVerdict {
            service: "Cardholders".into(),
            cases: vec![CaseVerdict {
                service: "Cardholders".into(),
                case_id: "get_after_delete".into(),
                kind: CaseKind::Common,
                passed: false,
                failures: vec!["GET after DELETE → expected 404 got 200".into()],
            }],
        };
        let out = trim_errors(&BTreeMap::new(), Some(&verdict), &[], &TrimConfig::default());
        assert!(out.contains("GET after DELETE → expected 404 got 200"));
    }

    #[test]
    fn tracebacks_keep_last_frames_and_dedupe() {
        let mut tb = String::from("Traceback (most recent call last):\n");
        for i in 0..8 {
            tb.push_str(&format!("  File \"app.py\", line {i}, in f{i}\n    call()\n"));
        }
        tb.push_str("TypeError: Object of type ObjectId is not JSON serializable\n");
        let text = format!("{tb}{tb}");
        let out = trim_errors(&logs(&text), None, &[], &TrimConfig::default());
        assert!(out.contains("TypeError: Object of type ObjectId is not JSON serializable [×2]"));
        assert!(out.contains("3 earlier frames omitted"));
        assert!(!out.contains("in f2\n"));
        assert!(out.contains("in f7"));
        assert!(out.contains("[×2]\n") || out.ends_with("[×2]"));
    }

    #[test]
    fn middle_truncation_respects_cap() {
        let s = "é".repeat(1000);
        for cap in [0, 1, 5, 40, 100, 1999, 2000] {
            let t = truncate_middle(&s, cap);
            assert!(t.len() <= cap, "cap {cap} gave {}", t.len());
        }
    }
}
