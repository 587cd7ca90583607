//! Report files.
//!
//! * `cells.csv`: one row per (model, horizon, iteration).
//! * `summary.json`: boxplot statistics per model, horizon and metric.
//! * `best.csv`: per horizon, the best value of each metric and the model
//!   that reached it (earliest model in config order on ties).
//! * `trend.csv`: per model, the least-squares slope of median accuracy
//!   against horizon.
//! * `attribution.csv`: ICA component to channel pairing.
//! * `stages.log`: pipeline stages in execution order.
//! * `failures.json`: cells or stages that failed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result};
use crate::classifiers::ModelKind;
use crate::ica::ChannelAttribution;
use crate::metrics::{summarize, ConfusionCounts, DistributionSummary, MetricsRecord, METRIC_NAMES};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportCell {
    pub model: ModelKind,
    pub horizon_s: i64,
    pub iteration: usize,
    pub counts: ConfusionCounts,
    pub metrics: MetricsRecord,
    pub wall_time_s: f64,
    pub ica_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub model: Option<ModelKind>,
    pub horizon_s: Option<i64>,
    pub iteration: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub cells: Vec<ReportCell>,
    pub failures: Vec<Failure>,
    pub attribution: Option<ChannelAttribution>,
    pub ica_converged: Option<bool>,
    pub stages: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    model: ModelKind,
    horizon_s: i64,
    iteration: usize,
    tp: u64,
    fp: u64,
    tn: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    precision: f64,
    accuracy: f64,
    specificity: f64,
    sensitivity: f64,
    f1: f64,
    mcc: f64,
    degenerate_flags: String,
    wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummaries {
    pub precision: DistributionSummary,
    pub accuracy: DistributionSummary,
    pub specificity: DistributionSummary,
    pub sensitivity: DistributionSummary,
    pub f1: DistributionSummary,
    pub mcc: DistributionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub model: ModelKind,
    pub horizon_s: i64,
    pub n: usize,
    pub metrics: MetricSummaries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestEntry {
    pub horizon_s: i64,
    pub metric: String,
    pub value: f64,
    pub model: ModelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub model: ModelKind,
    pub n_horizons: usize,
    pub accuracy_slope_per_hour: f64,
    pub trend: String,
}

fn first_appearance<T: PartialEq + Copy>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for x in items {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// Distribution of every metric per (model, horizon), in order of first
/// appearance.
pub fn summarize_cells(cells: &[ReportCell]) -> Vec<GroupSummary> {
    let models = first_appearance(cells.iter().map(|c| c.model));
    let horizons = first_appearance(cells.iter().map(|c| c.horizon_s));
    let mut out = Vec::new();
    for &model in &models {
        for &horizon_s in &horizons {
            let group: Vec<&ReportCell> = cells.iter().filter(|c| c.model == model && c.horizon_s == horizon_s).collect();
            if group.is_empty() {
                continue;
            }
            let stat = |name: &str| {
                let values: Vec<f64> = group.iter().map(|c| c.metrics.get(name).unwrap()).collect();
                summarize(&values).expect("group is nonempty")
            };
            out.push(GroupSummary {
                model,
                horizon_s,
                n: group.len(),
                metrics: MetricSummaries {
                    precision: stat("precision"),
                    accuracy: stat("accuracy"),
                    specificity: stat("specificity"),
                    sensitivity: stat("sensitivity"),
                    f1: stat("f1"),
                    mcc: stat("mcc"),
                },
            });
        }
    }
    out
}

pub fn best_table(cells: &[ReportCell]) -> Vec<BestEntry> {
    let horizons = first_appearance(cells.iter().map(|c| c.horizon_s));
    let mut out = Vec::new();
    for &h in &horizons {
        for name in METRIC_NAMES {
            let mut best: Option<(f64, ModelKind)> = None;
            for c in cells.iter().filter(|c| c.horizon_s == h) {
                let v = c.metrics.get(name).unwrap();
                if best.is_none_or(|(b, _)| v > b) {
                    best = Some((v, c.model));
                }
            }
            let (value, model) = best.expect("horizon has cells");
            out.push(BestEntry {
                horizon_s: h,
                metric: name.to_string(),
                value,
                model,
            });
        }
    }
    out
}

pub fn trend_table(cells: &[ReportCell]) -> Vec<TrendRow> {
    let summaries = summarize_cells(cells);
    let models = first_appearance(cells.iter().map(|c| c.model));
    models
        .into_iter()
        .map(|model| {
            let pts: Vec<(f64, f64)> = summaries
                .iter()
                .filter(|g| g.model == model)
                .map(|g| (g.horizon_s as f64 / 3600.0, g.metrics.accuracy.median))
                .collect();
            let n = pts.len();
            let (slope, trend) = if n < 2 {
                (0.0, "n/a")
            } else {
                let mx = pts.iter().map(|p| p.0).sum::<f64>() / n as f64;
                let my = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
                let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
                let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
                let slope = sxy / sxx;
                let trend = if slope < -1e-12 {
                    "decline"
                } else if slope > 1e-12 {
                    "rise"
                } else {
                    "flat"
                };
                (slope, trend)
            };
            TrendRow {
                model,
                n_horizons: n,
                accuracy_slope_per_hour: slope,
                trend: trend.to_string(),
            }
        })
        .collect()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| ExperimentError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> ExperimentError {
    ExperimentError::io(path, std::io::Error::other(e))
}

fn write_cells_csv(cells: &[ReportCell], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for c in cells {
        let m = &c.metrics;
        w.serialize(CsvRow {
            model: c.model,
            horizon_s: c.horizon_s,
            iteration: c.iteration,
            tp: c.counts.tp,
            fp: c.counts.fp,
            tn: c.counts.tn,
            fn_: c.counts.fn_,
            precision: m.precision,
            accuracy: m.accuracy,
            specificity: m.specificity,
            sensitivity: m.sensitivity,
            f1: m.f1,
            mcc: m.mcc,
            degenerate_flags: m.degenerate_flags.join(";"),
            wall_time_s: c.wall_time_s,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| ExperimentError::io(path, e))
}

pub fn read_cells_csv(path: &Path) -> Result<Vec<ReportCell>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut cells = Vec::new();
    for row in r.deserialize() {
        let row: CsvRow = row.map_err(|e| ExperimentError::data("report", format!("{}: {e}", path.display())))?;
        cells.push(ReportCell {
            model: row.model,
            horizon_s: row.horizon_s,
            iteration: row.iteration,
            counts: ConfusionCounts {
                tp: row.tp,
                fp: row.fp,
                tn: row.tn,
                fn_: row.fn_,
            },
            metrics: MetricsRecord {
                precision: row.precision,
                accuracy: row.accuracy,
                specificity: row.specificity,
                sensitivity: row.sensitivity,
                f1: row.f1,
                mcc: row.mcc,
                degenerate_flags: row
                    .degenerate_flags
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect(),
            },
            wall_time_s: row.wall_time_s,
            ica_converged: true,
        });
    }
    Ok(cells)
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    ica_converged: Option<bool>,
    groups: &'a [GroupSummary],
}

/// `summary.json`, `best.csv` and `trend.csv`.
pub fn write_summary_files(cells: &[ReportCell], ica_converged: Option<bool>, out: &Path) -> Result<()> {
    if cells.is_empty() {
        return Err(ExperimentError::NoCells);
    }
    std::fs::create_dir_all(out).map_err(|e| ExperimentError::io(out, e))?;
    let groups = summarize_cells(cells);
    let json = serde_json::to_string_pretty(&SummaryFile {
        ica_converged,
        groups: &groups,
    })
    .expect("summary serializes");
    write(&out.join("summary.json"), json + "\n")?;

    let mut best = String::from("horizon_s");
    for name in METRIC_NAMES {
        best.push_str(&format!(",{name},{name}_model"));
    }
    best.push('\n');
    let table = best_table(cells);
    for row in table.chunks(METRIC_NAMES.len()) {
        best.push_str(&row[0].horizon_s.to_string());
        for e in row {
            best.push_str(&format!(",{},{}", e.value, e.model));
        }
        best.push('\n');
    }
    write(&out.join("best.csv"), best)?;

    let mut trend = String::from("model,n_horizons,accuracy_slope_per_hour,trend\n");
    for t in trend_table(cells) {
        trend.push_str(&format!(
            "{},{},{},{}\n",
            t.model, t.n_horizons, t.accuracy_slope_per_hour, t.trend
        ));
    }
    write(&out.join("trend.csv"), trend)
}

/// Writes every report file. Stage log and failures are written even when
/// no cell succeeded.
pub fn emit_report(report: &ExperimentReport, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| ExperimentError::io(out, e))?;
    let stages: String = report.stages.iter().map(|s| format!("{s}\n")).collect();
    write(&out.join("stages.log"), stages)?;
    let failures = serde_json::to_string_pretty(&report.failures).expect("failures serialize");
    write(&out.join("failures.json"), failures + "\n")?;
    if let Some(att) = &report.attribution {
        let mut text = String::from("component,channel,similarity\n");
        for c in &att.components {
            text.push_str(&format!("{},{},{}\n", c.component, c.channel, c.similarity));
        }
        write(&out.join("attribution.csv"), text)?;
    }
    if report.cells.is_empty() {
        return Err(ExperimentError::NoCells);
    }
    write_cells_csv(&report.cells, &out.join("cells.csv"))?;
    write_summary_files(&report.cells, report.ica_converged, out)
}
