use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::MetricKind;
use crate::error::{Error, Result};

/// One line of a score CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub scenario: String,
    pub background: String,
    pub arch: String,
    pub method: String,
    pub sample_id: usize,
    pub emd: f64,
    pub ima: f64,
    pub precision: f64,
    pub degenerate_flag: bool,
}

impl ScoreRow {
    pub fn metric(&self, metric: MetricKind) -> f64 {
        match metric {
            MetricKind::Emd => self.emd,
            MetricKind::Ima => self.ima,
            MetricKind::Precision => self.precision,
        }
    }
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["scenario", "background", "arch", "method", "sample_id", "emd", "ima", "precision", "degenerate_flag"])
        .map_err(|e| Error::io(path, e.into()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::io(path, e.into()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    crate::io_util::write_atomic(path, &bytes)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<ScoreRow>, _>>()
        .map_err(|e| Error::Config(format!("{} is not a valid score file: {e}", path.display())))
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Box-and-whisker summary. Whiskers reach the most extreme observations
/// within 1.5 IQR of the box; anything beyond counts as an outlier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: usize,
    pub min: f64,
    pub max: f64,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<BoxStats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = v.iter().copied().filter(|x| (lo_fence..=hi_fence).contains(x)).collect();
        Some(BoxStats {
            n: v.len(),
            median,
            q1,
            q3,
            whisker_low: inside.first().copied().unwrap_or(q1),
            whisker_high: inside.last().copied().unwrap_or(q3),
            outliers: v.len() - inside.len(),
            min: v[0],
            max: v[v.len() - 1],
        })
    }
}

/// Summary of one metric for one (dataset, architecture, method).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub dataset: String,
    pub scenario: String,
    pub background: String,
    pub arch: String,
    pub method: String,
    pub metric: MetricKind,
    /// `None` when no sample was scored; missing is not zero.
    pub stats: Option<BoxStats>,
}

/// Expected cell identity: dataset plus the CSV labels.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellKey {
    pub dataset: String,
    pub scenario: String,
    pub background: String,
    pub arch: String,
    pub method: String,
}

/// Groups rows by cell and summarises each requested metric. Every key in
/// `expected` yields cells even if no row matches it.
pub fn aggregate(rows: &[(String, ScoreRow)], expected: &[CellKey], metrics: &[MetricKind]) -> Vec<ReportCell> {
    let mut groups: BTreeMap<CellKey, Vec<&ScoreRow>> = expected.iter().map(|k| (k.clone(), Vec::new())).collect();
    for (dataset, row) in rows {
        let key = CellKey {
            dataset: dataset.clone(),
            scenario: row.scenario.clone(),
            background: row.background.clone(),
            arch: row.arch.clone(),
            method: row.method.clone(),
        };
        groups.entry(key).or_default().push(row);
    }
    let mut cells = Vec::new();
    for (key, members) in &groups {
        for &metric in metrics {
            let values: Vec<f64> = members.iter().map(|r| r.metric(metric)).collect();
            cells.push(ReportCell {
                dataset: key.dataset.clone(),
                scenario: key.scenario.clone(),
                background: key.background.clone(),
                arch: key.arch.clone(),
                method: key.method.clone(),
                metric,
                stats: BoxStats::from_values(&values),
            });
        }
    }
    cells
}
