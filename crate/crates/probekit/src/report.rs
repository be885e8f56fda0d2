// SPDX-License-Identifier: MIT OR Apache-2.0

//! EvalReport serialisation: flat CSV, JSON nested by setting and layer,
//! and an SVG line chart of one metric against normalized depth.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use probekit_core::pipeline::{EvalReport, ReportRow};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, WithPath};
use crate::store::{read_json, write_bytes, write_json};

pub const CSV_HEADER: [&str; 8] = [
    "setting",
    "layer",
    "normalized_layer",
    "probe",
    "metric",
    "value",
    "ci_low",
    "ci_high",
];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn csv_string(report: &EvalReport) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    let here = Path::new("<csv>");
    w.write_record(CSV_HEADER).map_err(|e| csv_err(here, e))?;
    for r in &report.sorted().rows {
        w.serialize(r).map_err(|e| csv_err(here, e))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(here, e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv(path: &Path, report: &EvalReport) -> Result<()> {
    report.validate().at(path)?;
    write_bytes(path, csv_string(report)?.as_bytes())
}

/// Reads a report CSV, checking the header against the schema.
pub fn read_csv(path: &Path) -> Result<EvalReport> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::parse(
            path,
            format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        ));
    }
    let mut report = EvalReport::new();
    for row in r.deserialize::<ReportRow>() {
        report.push(row.map_err(|e| csv_err(path, e))?).at(path)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricEntry {
    pub probe: String,
    pub metric: String,
    pub value: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub normalized_layer: f64,
    pub metrics: Vec<MetricEntry>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportJson {
    pub provenance: BTreeMap<String, String>,
    pub settings: BTreeMap<String, BTreeMap<u32, LayerEntry>>,
}

impl ReportJson {
    pub fn from_report(report: &EvalReport) -> Self {
        let mut settings: BTreeMap<String, BTreeMap<u32, LayerEntry>> = BTreeMap::new();
        for r in report.sorted().rows {
            settings
                .entry(r.setting)
                .or_default()
                .entry(r.layer)
                .or_insert_with(|| LayerEntry {
                    normalized_layer: r.normalized_layer,
                    metrics: Vec::new(),
                })
                .metrics
                .push(MetricEntry {
                    probe: r.probe,
                    metric: r.metric,
                    value: r.value,
                    ci_low: r.ci_low,
                    ci_high: r.ci_high,
                });
        }
        Self {
            provenance: report.provenance.clone(),
            settings,
        }
    }

    pub fn into_report(self) -> probekit_core::Result<EvalReport> {
        let mut report = EvalReport::new();
        report.provenance = self.provenance;
        for (setting, layers) in self.settings {
            for (layer, entry) in layers {
                for m in entry.metrics {
                    report.push(ReportRow {
                        setting: setting.clone(),
                        layer,
                        normalized_layer: entry.normalized_layer,
                        probe: m.probe,
                        metric: m.metric,
                        value: m.value,
                        ci_low: m.ci_low,
                        ci_high: m.ci_high,
                    })?;
                }
            }
        }
        Ok(report)
    }
}

pub fn write_report_json(path: &Path, report: &EvalReport) -> Result<()> {
    report.validate().at(path)?;
    write_json(path, &ReportJson::from_report(report))
}

pub fn read_report_json(path: &Path) -> Result<EvalReport> {
    let j: ReportJson = read_json(path)?;
    j.into_report().at(path)
}

/// Dispatches on the extension: `.csv` or `.json`.
pub fn read_report(path: &Path) -> Result<EvalReport> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(path),
        _ => read_report_json(path),
    }
}

const PROBE_COLORS: [(&str, &str); 3] = [
    ("diffmean", "#1b9e77"),
    ("logistic", "#d95f02"),
    ("hinge", "#7570b3"),
];
const EXTRA_COLORS: [&str; 4] = ["#e7298a", "#66a61e", "#e6ab02", "#666666"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One polyline per probe for `metric` across normalized layers.
///
/// Without a `setting` filter the first setting (in sort order) that
/// reports `metric` is drawn.
pub fn render_svg(report: &EvalReport, metric: &str, setting: Option<&str>) -> Option<String> {
    let rows: Vec<&ReportRow> = report.rows.iter().filter(|r| r.metric == metric).collect();
    let chosen = match setting {
        Some(s) => s.to_string(),
        None => rows.iter().map(|r| r.setting.as_str()).min()?.to_string(),
    };
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.setting == chosen) {
        series
            .entry(r.probe.as_str())
            .or_default()
            .push((r.normalized_layer, r.value));
    }
    if series.is_empty() {
        return None;
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let (mut lo, mut hi) = series
        .values()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| {
            (l.min(p.1), h.max(p.1))
        });
    if lo >= 0.0 && hi <= 1.0 {
        (lo, hi) = (0.0, 1.0);
    } else if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }

    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + x.clamp(0.0, 1.0) * pw;
    let sy = |y: f64| top + (1.0 - (y - lo) / (hi - lo)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle">{} / {}</text>"#,
        left + pw / 2.0,
        xml_escape(&chosen),
        xml_escape(metric)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>"##
    );
    for i in 0..=4 {
        let f = f64::from(i) / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{f:.2}</text>"#,
            sx(f),
            top + ph + 18.0
        );
        let v = lo + f * (hi - lo);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            left - 6.0,
            sy(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">normalized layer</text>"#,
        left + pw / 2.0,
        h - 10.0
    );

    let mut extra = EXTRA_COLORS.iter().cycle();
    for (i, (probe, pts)) in series.iter().enumerate() {
        let color = PROBE_COLORS
            .iter()
            .find(|(p, _)| p == probe)
            .map(|(_, c)| *c)
            .unwrap_or_else(|| extra.next().expect("cycle"));
        let points: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline data-probe="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            xml_escape(probe),
            points.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let ly = top + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            w - right + 10.0,
            w - right + 30.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            w - right + 36.0,
            ly + 4.0,
            xml_escape(probe)
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignRow {
    pub model: String,
    pub layer: u32,
    pub normalized_layer: f64,
    pub geodesic: f64,
    pub mean_cosine: f64,
}

pub fn align_csv(rows: &[AlignRow]) -> Result<String> {
    let here = Path::new("<csv>");
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record([
        "model",
        "layer",
        "normalized_layer",
        "geodesic",
        "mean_cosine",
    ])
    .map_err(|e| csv_err(here, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(here, e))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(here, e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
