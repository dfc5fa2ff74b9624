//! Aggregate tables: HONEST@k per model, the category × gender heatmap and
//! per-gender toxicity, as CSV, Markdown and a JSON export.
//!
//! HONEST scores render with 4 decimals, percentages with 2. Every model in
//! the run appears in every table, either with values or as a `missing` row.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Category, Gender};
use crate::honest::{CategoryGenderMatrix, HonestScore};
use crate::toxicity::ToxicitySummary;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("report has no {0} results")]
    EmptyReport(&'static str),
    #[error("category matrices were computed at different k: {0:?}")]
    MixedK(Vec<usize>),
    #[error("unparseable table: {0}")]
    Parse(String),
}

pub type Result<T, E = ReportError> = std::result::Result<T, E>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of each template corpus file, by language.
    pub corpus_hashes: BTreeMap<String, String>,
    /// SHA-256 of each lexicon file, by language.
    pub lexicon_hashes: BTreeMap<String, String>,
    /// The run configuration as loaded. Never contains credentials.
    pub config_snapshot: serde_json::Value,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub run_id: String,
    /// Unix seconds.
    pub created_at: u64,
    /// Model ids in configuration order; tables follow this order.
    pub models: Vec<String>,
    pub honest_table: Vec<HonestScore>,
    pub category_matrices: BTreeMap<String, CategoryGenderMatrix>,
    pub toxicity_table: BTreeMap<String, ToxicitySummary>,
    pub provenance: Provenance,
}

impl AuditReport {
    /// Derives `run_id` from the provenance so identical inputs share an id.
    pub fn assign_run_id(&mut self) {
        let bytes = serde_json::to_vec(&self.provenance).expect("provenance serializes");
        self.run_id = hex::encode(&Sha256::digest(bytes)[..8]);
    }

    pub fn honest(&self, model_id: &str, k: usize) -> Option<&HonestScore> {
        self.honest_table.iter().find(|s| s.model_id == model_id && s.k == k)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ReportError::Parse(e.to_string()))
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: impl AsRef<Path>) -> std::io::Result<String> {
    Ok(hash_bytes(&std::fs::read(path)?))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableArtifact {
    pub csv: String,
    pub markdown: String,
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("in-memory CSV write");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV of UTF-8 fields is UTF-8")
}

fn md_cell(s: &str) -> String {
    s.replace('|', "\\|")
}

fn md_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    let line = |cells: &[String]| {
        let inner: Vec<String> = cells.iter().map(|c| md_cell(c)).collect();
        format!("| {} |\n", inner.join(" | "))
    };
    out.push_str(&line(header));
    out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

fn missing_footer(out: &mut String, missing: &[&str]) {
    if !missing.is_empty() {
        let _ = writeln!(out, "\nMissing: {}", missing.join(", "));
    }
}

fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

fn fmt2(x: f64) -> String {
    format!("{x:.2}")
}

/// A percentage rendered to 2 decimals, as an integer count of hundredths.
fn hundredths(x: f64) -> i64 {
    let s = fmt2(x);
    let negative = s.starts_with('-');
    let digits: String = s.chars().filter(char::is_ascii_digit).collect();
    let v: i64 = digits.parse().expect("formatted float has digits");
    if negative {
        -v
    } else {
        v
    }
}

fn fmt_hundredths(h: i64) -> String {
    let sign = if h < 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", h.abs() / 100, h.abs() % 100)
}

/// The k with the highest score; the smallest k wins ties.
pub fn flagged_k(scores: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(k, s) in scores {
        match best {
            Some((bk, bs)) if s < bs || (s == bs && k > bk) => {}
            _ => best = Some((k, s)),
        }
    }
    best.map(|(k, _)| k)
}

/// One row per model, one column per k, plus the flagged per-row maximum.
pub fn emit_honest_table(report: &AuditReport) -> Result<TableArtifact> {
    if report.honest_table.is_empty() {
        return Err(ReportError::EmptyReport("HONEST"));
    }
    let ks: Vec<usize> = report
        .honest_table
        .iter()
        .map(|s| s.k)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut header = vec!["model".to_string()];
    header.extend(ks.iter().map(|k| format!("k={k}")));
    header.push("max_k".into());
    let mut md_header = vec!["Model".to_string()];
    md_header.extend(ks.iter().map(|k| format!("k = {k}")));

    let mut csv_rows = vec![header];
    let mut md_rows = Vec::new();
    let mut missing = Vec::new();
    for model in &report.models {
        let row: Vec<(usize, f64)> = ks
            .iter()
            .filter_map(|k| report.honest(model, *k).map(|s| (*k, s.score)))
            .collect();
        if row.is_empty() {
            missing.push(model.as_str());
            let mut r = vec![model.clone()];
            r.extend(std::iter::repeat_n(String::new(), ks.len() + 1));
            csv_rows.push(r);
            continue;
        }
        let best = flagged_k(&row);
        let mut c = vec![model.clone()];
        let mut m = vec![model.clone()];
        for k in &ks {
            match report.honest(model, *k) {
                Some(s) => {
                    c.push(fmt4(s.score));
                    m.push(if Some(*k) == best {
                        format!("**{}**", fmt4(s.score))
                    } else {
                        fmt4(s.score)
                    });
                }
                None => {
                    c.push(String::new());
                    m.push("–".into());
                }
            }
        }
        c.push(best.map(|k| k.to_string()).unwrap_or_default());
        csv_rows.push(c);
        md_rows.push(m);
    }
    let mut markdown = md_table(&md_header, &md_rows);
    missing_footer(&mut markdown, &missing);
    Ok(TableArtifact {
        csv: csv_string(csv_rows),
        markdown,
    })
}

fn shared_k(report: &AuditReport) -> Result<Option<usize>> {
    let ks: BTreeSet<usize> = report.category_matrices.values().map(|m| m.k).collect();
    if ks.len() > 1 {
        return Err(ReportError::MixedK(ks.into_iter().collect()));
    }
    Ok(ks.into_iter().next())
}

/// Long-form heatmap: `model,category,gender,percentage`, 12 categories × 2
/// genders per model followed by one `Avg` row per gender.
pub fn emit_category_heatmap(report: &AuditReport) -> Result<String> {
    shared_k(report)?;
    let mut rows = vec![vec![
        "model".to_string(),
        "category".into(),
        "gender".into(),
        "percentage".into(),
    ]];
    for model in &report.models {
        let Some(m) = report.category_matrices.get(model) else {
            rows.push(vec![model.clone(), "missing".into(), String::new(), String::new()]);
            continue;
        };
        for c in Category::ANALYSIS {
            for g in Gender::ALL {
                rows.push(vec![
                    model.clone(),
                    c.code().into(),
                    g.as_str().into(),
                    fmt2(m.cell(c, g)),
                ]);
            }
        }
        for g in Gender::ALL {
            rows.push(vec![
                model.clone(),
                "Avg".into(),
                g.as_str().into(),
                fmt2(*m.avg_row.get(g)),
            ]);
        }
    }
    Ok(csv_string(rows))
}

/// Wide heatmap for reading: categories down, model × gender across.
pub fn emit_category_markdown(report: &AuditReport) -> Result<String> {
    let k = shared_k(report)?;
    let present: Vec<&CategoryGenderMatrix> = report
        .models
        .iter()
        .filter_map(|m| report.category_matrices.get(m))
        .collect();
    let missing: Vec<&str> = report
        .models
        .iter()
        .filter(|m| !report.category_matrices.contains_key(*m))
        .map(String::as_str)
        .collect();
    let mut header = vec![String::new()];
    for m in &present {
        header.push(format!("{} F", m.model_id));
        header.push(format!("{} M", m.model_id));
    }
    let mut rows: Vec<Vec<String>> = Category::ANALYSIS
        .iter()
        .map(|c| {
            let mut r = vec![c.code().to_string()];
            for m in &present {
                r.extend(Gender::ALL.map(|g| fmt2(m.cell(*c, g))));
            }
            r
        })
        .collect();
    let mut avg = vec!["Avg".to_string()];
    let mut other = vec!["other".to_string()];
    for m in &present {
        avg.extend(Gender::ALL.map(|g| fmt2(*m.avg_row.get(g))));
        other.extend(Gender::ALL.map(|g| fmt2(*m.other.get(g))));
    }
    rows.push(avg);
    rows.push(other);
    let mut out = String::new();
    if let Some(k) = k {
        let _ = writeln!(out, "Harmful completions (%) at k = {k}\n");
    }
    out.push_str(&md_table(&header, &rows));
    missing_footer(&mut out, &missing);
    Ok(out)
}

fn toxicity_rows(report: &AuditReport) -> (Vec<Vec<String>>, Vec<&str>) {
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for model in &report.models {
        match report.toxicity_table.get(model) {
            Some(s) => {
                let f = hundredths(s.pct.female);
                let m = hundredths(s.pct.male);
                rows.push(vec![
                    model.clone(),
                    fmt_hundredths(f),
                    fmt_hundredths(m),
                    fmt_hundredths(f + m),
                ]);
            }
            None => {
                missing.push(model.as_str());
                rows.push(vec![model.clone(), String::new(), String::new(), String::new()]);
            }
        }
    }
    (rows, missing)
}

fn render_toxicity(report: &AuditReport) -> TableArtifact {
    let (rows, missing) = toxicity_rows(report);
    let header: Vec<String> = ["model", "F", "M", "Total"].map(String::from).to_vec();
    let md_header: Vec<String> = ["Model", "F", "M", "Total"].map(String::from).to_vec();
    let md_rows: Vec<Vec<String>> = rows.iter().filter(|r| !r[1].is_empty()).cloned().collect();
    let mut markdown = md_table(&md_header, &md_rows);
    missing_footer(&mut markdown, &missing);
    let mut csv_rows = vec![header];
    csv_rows.extend(rows);
    TableArtifact {
        csv: csv_string(csv_rows),
        markdown,
    }
}

/// `model,F,M,Total` with 2 decimals. Total is the sum of the rendered F and M.
pub fn emit_toxicity_table(report: &AuditReport) -> Result<TableArtifact> {
    if report.toxicity_table.is_empty() {
        return Err(ReportError::EmptyReport("toxicity"));
    }
    Ok(render_toxicity(report))
}

/// Every artifact file for a report, by file name.
pub fn render_all(report: &AuditReport) -> Result<BTreeMap<&'static str, String>> {
    let honest = emit_honest_table(report)?;
    let toxicity = render_toxicity(report);
    Ok(BTreeMap::from([
        ("honest.csv", honest.csv),
        ("honest.md", honest.markdown),
        ("heatmap.csv", emit_category_heatmap(report)?),
        ("heatmap.md", emit_category_markdown(report)?),
        ("toxicity.csv", toxicity.csv),
        ("toxicity.md", toxicity.markdown),
        ("report.json", report.to_json()),
    ]))
}

fn read_rows(text: &str) -> Result<Vec<csv::StringRecord>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes())
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| ReportError::Parse(e.to_string()))
}

fn parse_num(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| ReportError::Parse(format!("not a number: {s:?}")))
}

/// Reads an HONEST CSV back into `(model, k, score)` triples.
pub fn parse_honest_csv(text: &str) -> Result<Vec<(String, usize, f64)>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| ReportError::Parse(e.to_string()))?.clone();
    let ks: Vec<usize> = header
        .iter()
        .skip(1)
        .take(header.len().saturating_sub(2))
        .map(|h| {
            h.strip_prefix("k=")
                .and_then(|k| k.parse().ok())
                .ok_or_else(|| ReportError::Parse(format!("bad column {h:?}")))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for row in read_rows(text)? {
        for (i, k) in ks.iter().enumerate() {
            let cell = &row[i + 1];
            if !cell.is_empty() {
                out.push((row[0].to_string(), *k, parse_num(cell)?));
            }
        }
    }
    Ok(out)
}

/// Reads a heatmap CSV back into `(model, category, gender, percentage)` rows.
pub fn parse_heatmap_csv(text: &str) -> Result<Vec<(String, String, String, f64)>> {
    read_rows(text)?
        .into_iter()
        .filter(|r| &r[1] != "missing")
        .map(|r| Ok((r[0].to_string(), r[1].to_string(), r[2].to_string(), parse_num(&r[3])?)))
        .collect()
}

/// Reads a toxicity CSV back into `(model, F, M, Total)` rows.
pub fn parse_toxicity_csv(text: &str) -> Result<Vec<(String, f64, f64, f64)>> {
    read_rows(text)?
        .into_iter()
        .filter(|r| !r[1].is_empty())
        .map(|r| {
            Ok((
                r[0].to_string(),
                parse_num(&r[1])?,
                parse_num(&r[2])?,
                parse_num(&r[3])?,
            ))
        })
        .collect()
}
