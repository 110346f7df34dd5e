//! CSV, plain-text and SVG artifacts.
//!
//! Every chart has a companion CSV holding the plotted values at full
//! precision; rounding only happens in SVG labels and text tables. Files are
//! written through a temporary file in the target directory and renamed into
//! place.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forest::ImportanceReport;
use crate::rules::{CaseResult, Rule};
use crate::schema::CrossTab;
use crate::transactions::ItemFrequency;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    RuleTable,
    RuleList,
    ItemFreq,
    Importance,
    RuleScatter,
    Crosstab,
    Summary,
    Selection,
    Metadata,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Artifact {
    pub kind: ArtifactKind,
    pub path: PathBuf,
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut name = stem.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(ext);
    stem.with_file_name(name)
}

fn csv_bytes<F>(fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    fill(&mut w)?;
    w.into_inner()
        .map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

fn emit(kind: ArtifactKind, path: PathBuf, bytes: &[u8]) -> Result<Artifact> {
    write_atomic(&path, bytes)?;
    Ok(Artifact { kind, path })
}

pub fn write_json<T: Serialize>(kind: ArtifactKind, path: &Path, value: &T) -> Result<Artifact> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    emit(kind, path.to_path_buf(), text.as_bytes())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Left-aligns the first columns, right-aligns numeric ones.
fn aligned_table(header: &[&str], rows: &[Vec<String>], numeric_from: usize) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                if i >= numeric_from {
                    format!("{c:>w$}")
                } else {
                    format!("{c:<w$}")
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    let rule_len = widths.iter().sum::<usize>() + 2 * (widths.len().saturating_sub(1));
    out.push_str(&"-".repeat(rule_len));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

/// Top-k rule table as `<stem>.csv` and `<stem>.txt`: support percent to
/// three decimals, confidence percent and lift to two.
pub fn emit_rule_table(
    result: &CaseResult,
    stem: &Path,
    allow_empty: bool,
) -> Result<Vec<Artifact>> {
    let top = result.top();
    if top.is_empty() && !allow_empty {
        return Err(Error::InvalidArgument(format!(
            "case `{}` produced no rules",
            result.case.name
        )));
    }
    let rows: Vec<Vec<String>> = top
        .iter()
        .map(|r| {
            vec![
                r.id.clone(),
                result.antecedent_label(r),
                format!("{:.3}", 100.0 * r.support),
                format!("{:.2}", 100.0 * r.confidence),
                format!("{:.2}", r.lift),
            ]
        })
        .collect();
    let csv = csv_bytes(|w| {
        w.write_record(["id", "antecedent", "support_pct", "confidence_pct", "lift"])?;
        for row in &rows {
            w.write_record(row)?;
        }
        Ok(())
    })?;
    let mut text = String::new();
    if let Some(c) = &result.case.consequent {
        writeln!(text, "{} -> {{{c}}}", result.case.name).unwrap();
    } else {
        writeln!(text, "{}", result.case.name).unwrap();
    }
    text.push_str(&aligned_table(
        &["ID", "Antecedent", "S (%)", "C (%)", "L"],
        &rows,
        2,
    ));
    Ok(vec![
        emit(ArtifactKind::RuleTable, with_ext(stem, "csv"), &csv)?,
        emit(
            ArtifactKind::RuleTable,
            with_ext(stem, "txt"),
            text.as_bytes(),
        )?,
    ])
}

/// Every ranked rule of a case in the export CSV layout.
pub fn emit_rule_list(result: &CaseResult, path: &Path) -> Result<Artifact> {
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    emit(ArtifactKind::RuleList, path.to_path_buf(), &buf)
}

const BAR_LEFT: f64 = 280.0;
const BAR_WIDTH: f64 = 500.0;
const BAR_HEIGHT: f64 = 16.0;
const BAR_GAP: f64 = 4.0;
const TOP: f64 = 40.0;

fn svg_open(out: &mut String, width: f64, height: f64, title: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    )
    .unwrap();
    writeln!(
        out,
        r#"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="white"/>"#
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{:.1}" y="22" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        width / 2.0,
        xml_escape(title)
    )
    .unwrap();
}

/// Horizontal bars, top to bottom in the given order, over the axis
/// `[lo, hi]`. Returns the SVG document.
fn bar_chart(
    title: &str,
    axis_label: &str,
    bars: &[(String, f64, String)],
    lo: f64,
    hi: f64,
) -> String {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x_of = |v: f64| BAR_LEFT + (v - lo) / span * BAR_WIDTH;
    let plot_h = bars.len() as f64 * (BAR_HEIGHT + BAR_GAP);
    let height = TOP + plot_h + 50.0;
    let width = BAR_LEFT + BAR_WIDTH + 80.0;
    let mut out = String::new();
    svg_open(&mut out, width, height, title);
    let zero = x_of(0.0_f64.clamp(lo, hi));
    for (i, (label, value, shown)) in bars.iter().enumerate() {
        let y = TOP + i as f64 * (BAR_HEIGHT + BAR_GAP);
        let (x0, x1) = if *value >= 0.0 {
            (zero, x_of(*value))
        } else {
            (x_of(*value), zero)
        };
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            BAR_LEFT - 6.0,
            y + BAR_HEIGHT - 4.0,
            xml_escape(label)
        )
        .unwrap();
        writeln!(
            out,
            r##"<rect class="bar" x="{x0:.3}" y="{y:.1}" width="{:.3}" height="{BAR_HEIGHT:.1}" fill="#4c72b0"/>"##,
            x1 - x0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10">{}</text>"#,
            x0.max(x1) + 4.0,
            y + BAR_HEIGHT - 4.0,
            xml_escape(shown)
        )
        .unwrap();
    }
    let axis_y = TOP + plot_h + 4.0;
    writeln!(
        out,
        r#"<line x1="{BAR_LEFT:.1}" y1="{axis_y:.1}" x2="{:.1}" y2="{axis_y:.1}" stroke="black"/>"#,
        BAR_LEFT + BAR_WIDTH
    )
    .unwrap();
    for step in 0..=4 {
        let v = lo + span * step as f64 / 4.0;
        let x = x_of(v);
        writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{axis_y:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#,
            axis_y + 4.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{v:.2}</text>"#,
            axis_y + 16.0
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        BAR_LEFT + BAR_WIDTH / 2.0,
        axis_y + 36.0,
        xml_escape(axis_label)
    )
    .unwrap();
    out.push_str("</svg>\n");
    out
}

/// Relative item frequencies as a bar chart on a 0..1 axis plus CSV.
pub fn emit_item_freq_chart(freqs: &[ItemFrequency], stem: &Path) -> Result<Vec<Artifact>> {
    if freqs.is_empty() {
        return Err(Error::InvalidArgument("no item frequencies to plot".into()));
    }
    let bars: Vec<(String, f64, String)> = freqs
        .iter()
        .map(|f| (f.label.clone(), f.relative, format!("{:.2}", f.relative)))
        .collect();
    let svg = bar_chart(
        "Relative item frequency",
        "relative frequency",
        &bars,
        0.0,
        1.0,
    );
    let csv = csv_bytes(|w| {
        w.write_record(["item", "count", "relative_frequency"])?;
        for f in freqs {
            w.write_record([f.label.clone(), f.count.to_string(), f.relative.to_string()])?;
        }
        Ok(())
    })?;
    Ok(vec![
        emit(
            ArtifactKind::ItemFreq,
            with_ext(stem, "svg"),
            svg.as_bytes(),
        )?,
        emit(ArtifactKind::ItemFreq, with_ext(stem, "csv"), &csv)?,
    ])
}

/// Mean decrease accuracy per variable, most important on top.
pub fn emit_importance_chart(report: &ImportanceReport, stem: &Path) -> Result<Vec<Artifact>> {
    if report.entries.is_empty() {
        return Err(Error::InvalidArgument("empty importance report".into()));
    }
    let bars: Vec<(String, f64, String)> = report
        .entries
        .iter()
        .map(|e| (e.variable.clone(), e.mda, format!("{:.4}", e.mda)))
        .collect();
    let lo = report.entries.iter().map(|e| e.mda).fold(0.0, f64::min);
    let hi = report.entries.iter().map(|e| e.mda).fold(0.0, f64::max);
    let svg = bar_chart(
        &format!("Variable importance ({})", report.response),
        "mean decrease accuracy",
        &bars,
        lo,
        hi,
    );
    let csv = csv_bytes(|w| {
        w.write_record(["variable", "mda", "sd", "rank"])?;
        for e in &report.entries {
            w.write_record([
                e.variable.clone(),
                e.mda.to_string(),
                e.sd.to_string(),
                e.rank.to_string(),
            ])?;
        }
        Ok(())
    })?;
    Ok(vec![
        emit(
            ArtifactKind::Importance,
            with_ext(stem, "svg"),
            svg.as_bytes(),
        )?,
        emit(ArtifactKind::Importance, with_ext(stem, "csv"), &csv)?,
        write_json(ArtifactKind::Importance, &with_ext(stem, "json"), report)?,
    ])
}

const LIGHT: (f64, f64, f64) = (253.0, 224.0, 221.0);
const DARK: (f64, f64, f64) = (122.0, 1.0, 119.0);

/// Fill for a lift value: the minimum maps to the light end, the maximum to
/// the dark end.
pub fn lift_shade(lift: f64, min: f64, max: f64) -> String {
    let t = if max > min {
        ((lift - min) / (max - min)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!(
        "rgb({},{},{})",
        mix(LIGHT.0, DARK.0),
        mix(LIGHT.1, DARK.1),
        mix(LIGHT.2, DARK.2)
    )
}

/// Support (x) against confidence (y), shaded by lift, plus CSV.
pub fn emit_rule_scatter(rules: &[Rule], stem: &Path) -> Result<Vec<Artifact>> {
    if rules.is_empty() {
        return Err(Error::InvalidArgument("no rules to plot".into()));
    }
    let (left, top, w, h) = (70.0, 40.0, 500.0, 360.0);
    let x_max = rules.iter().map(|r| r.support).fold(0.0, f64::max);
    let x_max = if x_max > 0.0 { x_max } else { 1.0 };
    let lift_min = rules.iter().map(|r| r.lift).fold(f64::INFINITY, f64::min);
    let lift_max = rules
        .iter()
        .map(|r| r.lift)
        .fold(f64::NEG_INFINITY, f64::max);
    let px = |s: f64| left + s / x_max * w;
    let py = |c: f64| top + (1.0 - c) * h;

    let mut out = String::new();
    svg_open(
        &mut out,
        left + w + 140.0,
        top + h + 60.0,
        "Rules by support, confidence and lift",
    );
    writeln!(
        out,
        r#"<rect x="{left:.1}" y="{top:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for step in 0..=4 {
        let f = step as f64 / 4.0;
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{:.4}</text>"#,
            px(f * x_max),
            top + h + 16.0,
            f * x_max
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{f:.2}</text>"#,
            left - 6.0,
            py(f) + 3.0
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">support</text>"#,
        left + w / 2.0,
        top + h + 40.0
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="18" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 18 {:.1})">confidence</text>"#,
        top + h / 2.0,
        top + h / 2.0
    )
    .unwrap();
    for r in rules {
        writeln!(
            out,
            r#"<circle class="rule" cx="{:.3}" cy="{:.3}" r="3" fill="{}" data-lift="{}"/>"#,
            px(r.support),
            py(r.confidence),
            lift_shade(r.lift, lift_min, lift_max),
            r.lift
        )
        .unwrap();
    }
    let lx = left + w + 20.0;
    for (i, (label, value)) in [("min lift", lift_min), ("max lift", lift_max)]
        .iter()
        .enumerate()
    {
        let y = top + 20.0 + i as f64 * 24.0;
        writeln!(
            out,
            r#"<rect class="legend" x="{lx:.1}" y="{y:.1}" width="14" height="14" fill="{}"/>"#,
            lift_shade(*value, lift_min, lift_max)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10">{label} {value:.2}</text>"#,
            lx + 20.0,
            y + 11.0
        )
        .unwrap();
    }
    out.push_str("</svg>\n");

    let csv = csv_bytes(|w| {
        w.write_record(["id", "support", "confidence", "lift"])?;
        for r in rules {
            w.write_record([
                r.id.clone(),
                r.support.to_string(),
                r.confidence.to_string(),
                r.lift.to_string(),
            ])?;
        }
        Ok(())
    })?;
    Ok(vec![
        emit(
            ArtifactKind::RuleScatter,
            with_ext(stem, "svg"),
            out.as_bytes(),
        )?,
        emit(ArtifactKind::RuleScatter, with_ext(stem, "csv"), &csv)?,
    ])
}

/// Counts as CSV (with a total row) and a text table of
/// `count (column %)` cells.
pub fn emit_crosstab(ct: &CrossTab, stem: &Path) -> Result<Vec<Artifact>> {
    let csv = csv_bytes(|w| {
        let mut header = vec![ct.row_variable.clone()];
        header.extend(ct.col_categories.iter().cloned());
        w.write_record(&header)?;
        for (r, cat) in ct.row_categories.iter().enumerate() {
            let mut row = vec![cat.clone()];
            row.extend(ct.cells[r].iter().map(u64::to_string));
            w.write_record(&row)?;
        }
        let mut total = vec!["total".to_string()];
        total.extend(ct.column_totals.iter().map(u64::to_string));
        w.write_record(&total)
    })?;

    let mut header = vec![ct.row_variable.as_str()];
    header.extend(ct.col_categories.iter().map(String::as_str));
    let mut rows: Vec<Vec<String>> = ct
        .row_categories
        .iter()
        .enumerate()
        .map(|(r, cat)| {
            let mut row = vec![cat.clone()];
            row.extend(
                (0..ct.col_categories.len()).map(|c| match ct.column_percent(r, c) {
                    Some(p) => format!("{} ({p:.2}%)", ct.cells[r][c]),
                    None => "0".to_string(),
                }),
            );
            row
        })
        .collect();
    let mut total = vec!["total".to_string()];
    total.extend(ct.column_totals.iter().map(u64::to_string));
    rows.push(total);
    let text = format!(
        "{} by {}\n{}",
        ct.row_variable,
        ct.col_variable,
        aligned_table(&header, &rows, 1)
    );
    Ok(vec![
        emit(ArtifactKind::Crosstab, with_ext(stem, "csv"), &csv)?,
        emit(
            ArtifactKind::Crosstab,
            with_ext(stem, "txt"),
            text.as_bytes(),
        )?,
    ])
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub kind: ArtifactKind,
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

/// Run metadata plus every artifact written. The timestamp is the only
/// field that differs between identical runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportBundle {
    pub timestamp: u64,
    pub config_hash: String,
    pub dataset_hash: String,
    pub artifacts: Vec<ManifestEntry>,
}

impl ReportBundle {
    pub fn new(config_hash: String, dataset_hash: String) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        ReportBundle {
            timestamp,
            config_hash,
            dataset_hash,
            artifacts: Vec::new(),
        }
    }

    pub fn add(
        &mut self,
        out_dir: &Path,
        artifacts: impl IntoIterator<Item = Artifact>,
    ) -> Result<()> {
        for a in artifacts {
            let bytes = fs::read(&a.path).map_err(|e| Error::io(&a.path, e))?;
            let rel = a.path.strip_prefix(out_dir).unwrap_or(&a.path);
            self.artifacts.push(ManifestEntry {
                kind: a.kind,
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: sha256_hex(&bytes),
            });
        }
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join("manifest.json");
        write_json(ArtifactKind::Metadata, &path, self)?;
        Ok(path)
    }
}
