//! Experiment artifacts: metrics table, run record and dependency-free SVG
//! charts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::Metrics;

pub const METRICS_HEADER: &str = "variant,rmse,mae,mape";

/// Render `variant,rmse,mae,mape` rows; a missing MAPE prints as `NA`.
pub fn metrics_csv(rows: &[(String, Metrics)]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for (name, m) in rows {
        let mape = m
            .mape
            .map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{}",
            csv_field(name),
            m.rmse,
            m.mae,
            mape
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::contract(format!("json encoding failed: {e}")))?;
    text.push('\n');
    write_text(path, &text)
}

/// One named line in a time-series chart.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

/// A chart panel holding several series on a shared y-axis.
#[derive(Clone, Debug)]
pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
}

/// Citywide (node-summed) truth and forecast per channel at one horizon
/// step, over consecutive windows. Inputs are `[W, horizon, N, C]`.
pub fn citywide_panels(
    pred: &Tensor,
    truth: &Tensor,
    step: usize,
    channel_names: &[String],
) -> Result<Vec<Panel>> {
    if pred.shape() != truth.shape() || pred.ndim() != 4 {
        return Err(Error::shape("citywide_panels", pred.shape(), truth.shape()));
    }
    let [w, h, n, c] = [
        pred.shape()[0],
        pred.shape()[1],
        pred.shape()[2],
        pred.shape()[3],
    ];
    if step >= h {
        return Err(Error::contract(format!(
            "horizon step {step} out of range 0..{h}"
        )));
    }
    let sum = |t: &Tensor, wi: usize, ch: usize| {
        (0..n).map(|node| t.at(&[wi, step, node, ch])).sum::<f64>()
    };
    Ok((0..c)
        .map(|ch| {
            let name = channel_names
                .get(ch)
                .cloned()
                .unwrap_or_else(|| format!("channel {ch}"));
            Panel {
                title: name,
                series: vec![
                    Series {
                        label: "truth".into(),
                        values: (0..w).map(|wi| sum(truth, wi, ch)).collect(),
                    },
                    Series {
                        label: "forecast".into(),
                        values: (0..w).map(|wi| sum(pred, wi, ch)).collect(),
                    },
                ],
            }
        })
        .collect())
}

const PALETTE: [&str; 6] = [
    "#1f3b73", "#d1495b", "#00798c", "#edae49", "#66a182", "#8d96a3",
];
const PANEL_W: f64 = 760.0;
const PANEL_H: f64 = 170.0;
const MARGIN: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Stacked panels, one `<polyline>` per series. Optional shaded spans mark
/// index ranges such as scripted events.
pub fn timeseries_svg(title: &str, panels: &[Panel], shaded: &[std::ops::Range<usize>]) -> String {
    let height = MARGIN + panels.len() as f64 * (PANEL_H + MARGIN);
    let width = PANEL_W + 2.0 * MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="22" font-size="14">{}</text>"#,
        escape(title)
    );
    for (pi, panel) in panels.iter().enumerate() {
        let top = MARGIN + pi as f64 * (PANEL_H + MARGIN);
        let len = panel
            .series
            .iter()
            .map(|s| s.values.len())
            .max()
            .unwrap_or(0);
        let finite = panel
            .series
            .iter()
            .flat_map(|s| s.values.iter().copied())
            .filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
        let (lo, hi) = if lo.is_finite() {
            (lo.min(0.0), hi.max(lo + 1e-9))
        } else {
            (0.0, 1.0)
        };
        let x = |i: usize| MARGIN + PANEL_W * i as f64 / (len.max(2) - 1) as f64;
        let y = |v: f64| top + PANEL_H * (1.0 - (v - lo) / (hi - lo));
        let _ = writeln!(
            svg,
            r#"<g class="panel" data-title="{}">"#,
            escape(&panel.title)
        );
        for span in shaded {
            if span.start < len {
                let end = span.end.min(len).max(span.start + 1) - 1;
                let _ = writeln!(
                    svg,
                    r##"<rect class="event" x="{:.2}" y="{top:.2}" width="{:.2}" height="{PANEL_H}" fill="#f2d7d5"/>"##,
                    x(span.start),
                    (x(end) - x(span.start)).max(1.0)
                );
            }
        }
        let _ = writeln!(
            svg,
            r##"<rect x="{MARGIN}" y="{top:.2}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#999"/>"##
        );
        let _ = writeln!(
            svg,
            r#"<text x="{MARGIN}" y="{:.2}">{}</text>"#,
            top - 6.0,
            escape(&panel.title)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{hi:.1}</text>"#,
            MARGIN - 4.0,
            top + 10.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{lo:.1}</text>"#,
            MARGIN - 4.0,
            top + PANEL_H
        );
        for (si, series) in panel.series.iter().enumerate() {
            let points: Vec<String> = series
                .values
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_finite())
                .map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v)))
                .collect();
            let colour = PALETTE[si % PALETTE.len()];
            let _ = writeln!(
                svg,
                r#"<polyline data-series="{}" fill="none" stroke="{colour}" stroke-width="1.2" points="{}"/>"#,
                escape(&series.label),
                points.join(" ")
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" fill="{colour}">{}</text>"#,
                MARGIN + PANEL_W - 120.0 + 60.0 * si as f64,
                top - 6.0,
                escape(&series.label)
            );
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    svg
}

/// Average consecutive attention rows into at most `max_columns` columns.
/// Each output column is a mean of probability vectors, so it still sums to
/// one. Returns the pooled `[cols, m]` tensor and the source range of each
/// column.
pub fn pool_attention(
    attention: &Tensor,
    max_columns: usize,
) -> Result<(Tensor, Vec<std::ops::Range<usize>>)> {
    if attention.ndim() != 2 || max_columns == 0 {
        return Err(Error::contract(
            "attention must be [time, slots] with a positive column budget",
        ));
    }
    let (t, m) = (attention.shape()[0], attention.shape()[1]);
    let cols = t.min(max_columns);
    let ranges: Vec<_> = (0..cols)
        .map(|c| c * t / cols..(c + 1) * t / cols)
        .collect();
    let mut data = Vec::with_capacity(cols * m);
    for r in &ranges {
        for j in 0..m {
            data.push(r.clone().map(|i| attention.at(&[i, j])).sum::<f64>() / r.len() as f64);
        }
    }
    Ok((Tensor::new(&[cols, m], data)?, ranges))
}

/// Heatmap of attention with memory records on rows and time on columns.
/// `attention` is `[time, m]`; each cell carries its weight in `data-w`.
/// `marked` flags columns (such as event windows) drawn in a strip below.
pub fn attention_svg(title: &str, attention: &Tensor, marked: &[bool]) -> Result<String> {
    if attention.ndim() != 2 {
        return Err(Error::contract("attention must be [time, slots]"));
    }
    let (t, m) = (attention.shape()[0], attention.shape()[1]);
    if !marked.is_empty() && marked.len() != t {
        return Err(Error::contract(format!(
            "{} column marks for {t} columns",
            marked.len()
        )));
    }
    let cell_w = (PANEL_W / t.max(1) as f64).max(0.5);
    let cell_h = (240.0 / m.max(1) as f64).clamp(4.0, 24.0);
    let grid_w = cell_w * t as f64;
    let grid_h = cell_h * m as f64;
    let width = grid_w + 2.0 * MARGIN;
    let height = grid_h + 2.0 * MARGIN + 20.0;
    let peak = attention
        .data()
        .iter()
        .copied()
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.2}" height="{height:.2}" viewBox="0 0 {width:.2} {height:.2}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="22" font-size="14">{}</text>"#,
        escape(title)
    );
    for j in 0..m {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{j}</text>"#,
            MARGIN - 4.0,
            MARGIN + (j as f64 + 0.8) * cell_h
        );
    }
    svg.push_str("<g class=\"heatmap\">\n");
    for i in 0..t {
        let _ = writeln!(svg, r#"<g class="column" data-t="{i}">"#);
        for j in 0..m {
            let w = attention.at(&[i, j]);
            let shade = (255.0 * (1.0 - (w / peak).clamp(0.0, 1.0))).round() as u8;
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{cell_h:.2}" fill="rgb({shade},{shade},255)" data-w="{w:e}"/>"#,
                MARGIN + i as f64 * cell_w,
                MARGIN + j as f64 * cell_h,
                cell_w
            );
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("</g>\n");
    for (i, _) in marked.iter().enumerate().filter(|(_, &b)| b) {
        let _ = writeln!(
            svg,
            r##"<rect class="event" x="{:.2}" y="{:.2}" width="{cell_w:.2}" height="8" fill="#d1495b"/>"##,
            MARGIN + i as f64 * cell_w,
            MARGIN + grid_h + 6.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="{:.2}">time (windows); red strip marks event windows</text>"#,
        MARGIN + grid_h + 32.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}
