//! Metrics and ablation CSV files and a self-contained SVG line chart.

use std::fmt::Write as _;
use std::path::Path;

use beamvlm_core::eval::{AblationReport, MetricsTable};
use serde::{Deserialize, Serialize};

use crate::{write_file, Error, Result};

/// K values with a fixed column in the metrics CSV.
pub const CSV_KS: [usize; 4] = [1, 2, 3, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub predictor: String,
    pub horizon: usize,
    pub top1: f64,
    pub top2: f64,
    pub top3: f64,
    pub top5: f64,
    pub n: usize,
    pub invalid_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCsvRow {
    pub variant: String,
    pub horizon: usize,
    pub top1: f64,
    pub delta_top1_vs_full: f64,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

pub fn metrics_rows(tables: &[(String, MetricsTable)]) -> Result<Vec<MetricsRow>> {
    if tables.is_empty() {
        return Err(Error::EmptyReport);
    }
    let mut rows = Vec::new();
    for (name, t) in tables {
        for step in 1..=t.horizon() {
            let top = |k| t.top(k, step).ok_or_else(|| Error::Config(format!("metrics for {name} lack Top-{k}")));
            rows.push(MetricsRow {
                predictor: name.clone(),
                horizon: step,
                top1: top(1)?,
                top2: top(2)?,
                top3: top(3)?,
                top5: top(5)?,
                n: t.n,
                invalid_rate: t.invalid_rate,
            });
        }
    }
    Ok(rows)
}

pub fn write_metrics_csv(path: &Path, tables: &[(String, MetricsTable)]) -> Result<()> {
    let rows = metrics_rows(tables)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_file(path, bytes)
}

/// Parses a metrics CSV back into per-predictor tables (K = 1, 2, 3, 5).
pub fn read_metrics_csv(path: &Path) -> Result<Vec<(String, MetricsTable)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out: Vec<(String, MetricsTable)> = Vec::new();
    for row in r.deserialize::<MetricsRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let acc = vec![row.top1, row.top2, row.top3, row.top5];
        match out.iter_mut().find(|(n, _)| *n == row.predictor) {
            Some((_, t)) => t.accuracy.push(acc),
            None => out.push((
                row.predictor.clone(),
                MetricsTable { ks: CSV_KS.to_vec(), accuracy: vec![acc], n: row.n, invalid_rate: row.invalid_rate },
            )),
        }
    }
    Ok(out)
}

pub fn write_ablation_csv(path: &Path, report: &AblationReport) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &report.rows {
        for step in 1..=row.metrics.horizon() {
            w.serialize(AblationCsvRow {
                variant: row.variant.clone(),
                horizon: step,
                top1: row.metrics.top(1, step).unwrap_or(f64::NAN),
                delta_top1_vs_full: row.delta_top1[step - 1],
            })
            .map_err(|e| csv_err(path, e))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_file(path, bytes)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line chart of Top-`k` against the horizon step, one series per table,
/// in an 800×500 view box with a legend and a 0.1-step y axis.
pub fn render_svg(tables: &[(String, MetricsTable)], k: usize) -> Result<String> {
    if tables.is_empty() {
        return Err(Error::EmptyReport);
    }
    let horizon = tables.iter().map(|(_, t)| t.horizon()).max().unwrap_or(1).max(2);
    let (left, right, top, bottom) = (70.0, 610.0, 40.0, 440.0);
    let x = |step: usize| left + (right - left) * (step - 1) as f64 / (horizon - 1) as f64;
    let y = |v: f64| bottom - (bottom - top) * v.clamp(0.0, 1.0);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 800 500" width="800" height="500">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="800" height="500" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="340" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">Top-{k} accuracy</text>"#
    );
    for i in 0..=10 {
        let v = i as f64 / 10.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{yy:.1}" x2="{right}" y2="{yy:.1}" stroke="#dddddd"/><text x="{tx}" y="{ty:.1}" font-family="sans-serif" font-size="12" text-anchor="end">{v:.1}</text>"##,
            yy = y(v),
            tx = left - 8.0,
            ty = y(v) + 4.0
        );
    }
    for step in 1..=horizon {
        let _ = writeln!(
            s,
            r#"<text x="{xx:.1}" y="{ty}" font-family="sans-serif" font-size="12" text-anchor="middle">t+{step}</text>"#,
            xx = x(step),
            ty = bottom + 20.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/><line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>"#
    );
    for (i, (name, t)) in tables.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = (1..=t.horizon())
            .filter_map(|step| t.top(k, step).map(|v| format!("{:.1},{:.1}", x(step), y(v))))
            .collect();
        let _ =
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, points.join(" "));
        for p in &points {
            let (px, py) = p.split_once(',').expect("point");
            let _ = writeln!(s, r#"<circle cx="{px}" cy="{py}" r="3" fill="{color}"/>"#);
        }
        let ly = top + 10.0 + 22.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="630" y1="{ly:.1}" x2="655" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="662" y="{ty:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
            escape(name),
            ty = ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_svg(path: &Path, tables: &[(String, MetricsTable)], k: usize) -> Result<()> {
    write_file(path, render_svg(tables, k)?)
}
