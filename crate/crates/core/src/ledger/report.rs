use std::fmt::Write as _;

use super::SummaryRow;

pub const COLUMNS: [&str; 7] = [
    "Name",
    "# V0 testable",
    "# V1 testable",
    "% V0 passed",
    "% V1 passed",
    "Highest # passed",
    "% V1 improved",
];

const RAW_COLUMNS: [&str; 7] = [
    "Name",
    "Runs",
    "V0 testable",
    "V1 records",
    "V1 testable",
    "V1 improved",
    "Tests",
];

/// Marker for a percentage with no testable sample behind it.
pub const UNDEFINED: &str = "—";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub markdown: String,
    pub csv: String,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |v| format!("{v:.1}"))
}

fn count(v: Option<usize>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |v| v.to_string())
}

fn cells(row: &SummaryRow) -> [String; 7] {
    [
        row.service.clone(),
        format!("{}/{}", row.v0_testable, row.runs),
        row.v1_testable.to_string(),
        pct(row.pct_v0_passed),
        pct(row.pct_v1_passed),
        format!(
            "{}-{}/{}",
            count(row.highest_v0),
            count(row.highest_v1),
            count(row.tests_total)
        ),
        pct(row.pct_v1_improved),
    ]
}

fn raw_cells(row: &SummaryRow) -> [String; 7] {
    [
        row.service.clone(),
        row.runs.to_string(),
        row.v0_testable.to_string(),
        row.v1_records.to_string(),
        row.v1_testable.to_string(),
        row.v1_improved.to_string(),
        count(row.tests_total),
    ]
}

fn md_table(out: &mut String, header: &[&str], rows: impl Iterator<Item = [String; 7]>) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
}

/// Markdown with the result table and, when there are rows, the raw
/// counts it was computed from.
pub fn render_markdown(title: &str, rows: &[SummaryRow]) -> String {
    let mut out = format!("# {title}\n\n");
    md_table(&mut out, &COLUMNS, rows.iter().map(cells));
    if !rows.is_empty() {
        out.push_str("\n## Raw counts\n\n");
        md_table(&mut out, &RAW_COLUMNS, rows.iter().map(raw_cells));
    }
    out
}

pub fn render_csv(rows: &[SummaryRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS).expect("in-memory write");
    for r in rows {
        w.write_record(cells(r)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}

pub fn render_report(title: &str, rows: &[SummaryRow]) -> Report {
    Report {
        markdown: render_markdown(title, rows),
        csv: render_csv(rows),
    }
}
