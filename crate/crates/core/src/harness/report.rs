use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::aggregate::ReportCell;
use super::config::MetricKind;
use crate::error::{Error, Result};
use crate::io_util::{write_atomic, write_json};
use crate::models::Calibration;

pub const WHISKER_CONVENTION: &str =
    "quartiles by linear interpolation; whiskers at the most extreme scores within 1.5 IQR of the box (Tukey); scores beyond are outliers";

/// A file the report was computed from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

/// A pipeline cell that did not finish.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub stage: String,
    pub cell: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub dataset: String,
    pub calibration: Calibration,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub convention: String,
    pub cells: Vec<ReportCell>,
    pub calibrations: Vec<CalibrationEntry>,
    /// Score files and checkpoints behind every number, relative to the
    /// output root.
    pub artifacts: Vec<ArtifactRef>,
    pub failures: Vec<CellFailure>,
    pub notes: Vec<String>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `aggregate.csv`: one row per (cell, metric).
pub fn report_csv(report: &BenchmarkReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dataset", "scenario", "background", "arch", "method", "metric", "n", "median", "q1", "q3", "whisker_low",
        "whisker_high", "outliers", "status",
    ])
    .expect("in-memory write");
    for c in &report.cells {
        let s = c.stats.as_ref();
        w.write_record([
            c.dataset.clone(),
            c.scenario.clone(),
            c.background.clone(),
            c.arch.clone(),
            c.method.clone(),
            c.metric.id().to_string(),
            s.map_or(0, |s| s.n).to_string(),
            fmt_opt(s.map(|s| s.median)),
            fmt_opt(s.map(|s| s.q1)),
            fmt_opt(s.map(|s| s.q3)),
            fmt_opt(s.map(|s| s.whisker_low)),
            fmt_opt(s.map(|s| s.whisker_high)),
            s.map_or(0, |s| s.outliers).to_string(),
            if s.is_some() { "ok" } else { "missing" }.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 40.0;
const BACKGROUND_ORDER: [&str; 3] = ["WHITE", "CORR", "IMAGENET"];
const SHADES: [&str; 3] = ["#f4f4f4", "#e2e8f0", "#fdf2e9"];
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Boxplot panels, one per (scenario, metric), with one box per
/// (architecture, method) inside shaded background groups.
pub fn report_svg(report: &BenchmarkReport) -> String {
    let mut panels: BTreeMap<(String, MetricKind), Vec<&ReportCell>> = BTreeMap::new();
    for c in &report.cells {
        panels.entry((c.scenario.clone(), c.metric)).or_default().push(c);
    }
    let scenarios: Vec<String> = {
        let mut s: Vec<String> = panels.keys().map(|k| k.0.clone()).collect();
        s.dedup();
        s
    };
    let metrics: Vec<MetricKind> = {
        let mut m: Vec<MetricKind> = panels.keys().map(|k| k.1).collect();
        m.sort();
        m.dedup();
        m
    };
    let width = MARGIN + metrics.len().max(1) as f64 * (PANEL_W + MARGIN);
    let height = MARGIN + scenarios.len().max(1) as f64 * (PANEL_H + 2.0 * MARGIN);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    for (row, scenario) in scenarios.iter().enumerate() {
        for (col, &metric) in metrics.iter().enumerate() {
            let Some(cells) = panels.get(&(scenario.clone(), metric)) else { continue };
            let x0 = MARGIN + col as f64 * (PANEL_W + MARGIN);
            let y0 = MARGIN + row as f64 * (PANEL_H + 2.0 * MARGIN);
            draw_panel(&mut out, cells, x0, y0, &format!("{scenario} / {}", metric.id()));
        }
    }
    out.push_str("</svg>\n");
    out
}

fn draw_panel(out: &mut String, cells: &[&ReportCell], x0: f64, y0: f64, title: &str) {
    let y_of = |v: f64| y0 + PANEL_H - v.clamp(0.0, 1.0) * PANEL_H;
    let _ = writeln!(out, r#"<text x="{x0}" y="{}" font-size="12">{}</text>"#, y0 - 8.0, esc(title));
    let mut groups: Vec<(usize, Vec<&ReportCell>)> = Vec::new();
    for c in cells {
        let rank = BACKGROUND_ORDER.iter().position(|b| *b == c.background).unwrap_or(BACKGROUND_ORDER.len());
        match groups.iter_mut().find(|(r, g)| *r == rank && g[0].background == c.background) {
            Some((_, g)) => g.push(c),
            None => groups.push((rank, vec![c])),
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0).then(a.1[0].background.cmp(&b.1[0].background)));
    let total: usize = groups.iter().map(|(_, g)| g.len()).sum::<usize>().max(1);
    let slot = PANEL_W / total as f64;
    let mut labels: Vec<String> = cells.iter().map(|c| format!("{} {}", c.arch, c.method)).collect();
    labels.sort();
    labels.dedup();
    let mut x = x0;
    for (gi, (_, group)) in groups.iter().enumerate() {
        let w = slot * group.len() as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{y0}" width="{w}" height="{PANEL_H}" fill="{}"/>"#,
            SHADES[gi % SHADES.len()]
        );
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, x + 2.0, y0 + PANEL_H + 12.0, esc(&group[0].background));
        let mut members = group.clone();
        members.sort_by(|a, b| (&a.arch, &a.method).cmp(&(&b.arch, &b.method)));
        for (k, c) in members.iter().enumerate() {
            let cx = x + slot * (k as f64 + 0.5);
            let label = format!("{} {}", c.arch, c.method);
            let color = PALETTE[labels.iter().position(|l| *l == label).unwrap_or(0) % PALETTE.len()];
            let Some(s) = &c.stats else {
                let _ = writeln!(out, r#"<text x="{}" y="{}" fill="grey">n/a</text>"#, cx - 8.0, y0 + PANEL_H / 2.0);
                continue;
            };
            let half = (slot * 0.3).min(12.0);
            let _ = writeln!(
                out,
                r#"<line x1="{cx}" y1="{}" x2="{cx}" y2="{}" stroke="black"/>"#,
                y_of(s.whisker_low),
                y_of(s.whisker_high)
            );
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}" stroke="black"><title>{}</title></rect>"#,
                cx - half,
                y_of(s.q3),
                2.0 * half,
                (y_of(s.q1) - y_of(s.q3)).max(0.5),
                esc(&format!("{label}: median {:.3}, n {}", s.median, s.n))
            );
            let _ = writeln!(
                out,
                r#"<line x1="{}" y1="{m}" x2="{}" y2="{m}" stroke="black" stroke-width="2"/>"#,
                cx - half,
                cx + half,
                m = y_of(s.median)
            );
        }
        x += w;
    }
    let _ = writeln!(
        out,
        r#"<rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/>"#
    );
    for t in [0.0, 0.5, 1.0] {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{t}</text>"#, x0 - 4.0, y_of(t) + 3.0);
    }
    for (i, l) in labels.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let ly = y0 + PANEL_H + 24.0 + 10.0 * (i / 3) as f64;
        let lx = x0 + (i % 3) as f64 * (PANEL_W / 3.0);
        let _ = writeln!(out, r#"<rect x="{lx}" y="{}" width="8" height="8" fill="{color}"/>"#, ly - 7.0);
        let _ = writeln!(out, r#"<text x="{}" y="{ly}">{}</text>"#, lx + 10.0, esc(l));
    }
}

/// Writes `aggregate.csv`, `report.json`, `boxplots.svg` and
/// `failures.json` under `dir`.
pub fn emit_report(report: &BenchmarkReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join("aggregate.csv"), report_csv(report).as_bytes())?;
    write_json(&dir.join("report.json"), report)?;
    write_atomic(&dir.join("boxplots.svg"), report_svg(report).as_bytes())?;
    write_json(&dir.join("failures.json"), &report.failures)
}
