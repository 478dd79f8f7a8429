//! Deterministic static SVG line charts of run and sweep outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::cli::{usage, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Accuracy of every task after each training task.
    Accuracy,
    /// Mean FAA/FRF/ALA per swept value.
    Sweep,
    /// Per-batch feature drift.
    Drift,
    /// Per-batch parameter cosines with fuse-back markers.
    Cosine,
}

impl PlotKind {
    fn file_name(self) -> &'static str {
        match self {
            PlotKind::Accuracy => "accuracy_matrix.csv",
            PlotKind::Sweep => "sweep.csv",
            PlotKind::Drift => "drift.csv",
            PlotKind::Cosine => "cosine.csv",
        }
    }

    fn columns(self) -> &'static [&'static str] {
        match self {
            PlotKind::Accuracy => &["l", "j", "a"],
            PlotKind::Sweep => &["kind", "param", "value", "faa", "frf", "ala"],
            PlotKind::Drift => &["batch", "drift"],
            PlotKind::Cosine => &["batch", "cos_s1_s2", "cos_s1_gwm", "cos_s2_gwm", "fused"],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Categorical tick labels at integer x positions.
    pub x_categories: Option<Vec<String>>,
    /// Highlighted points, drawn with a dashed guide line.
    pub markers: Vec<(f64, f64)>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Fixed-precision label; the number of decimals follows the tick step.
fn tick_label(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10()).ceil().clamp(0.0, 6.0) as usize };
    let s = format!("{v:.decimals$}");
    if s == "-0" || s.chars().all(|c| c == '-' || c == '0' || c == '.') && s.starts_with('-') {
        s[1..].to_string()
    } else {
        s
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 { lo.abs() * 0.05 } else { 0.5 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let all = || self.series.iter().flat_map(|s| s.points.iter()).chain(self.markers.iter());
        let (x0, x1) = match &self.x_categories {
            Some(c) => (-0.5, c.len().max(1) as f64 - 0.5),
            None => range(all().map(|p| p.0)),
        };
        let (y0, y1) = range(all().map(|p| p.1));
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );

        // y ticks
        let ystep = (y1 - y0) / 5.0;
        for i in 0..=5 {
            let v = y0 + ystep * i as f64;
            let y = sy(v);
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
                LEFT - 5.0,
                LEFT + pw
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 8.0,
                y + 4.0,
                tick_label(v, ystep)
            );
        }
        // x ticks
        let xticks: Vec<(f64, String)> = match &self.x_categories {
            Some(c) => c.iter().enumerate().map(|(i, l)| (i as f64, l.clone())).collect(),
            None => {
                let step = (x1 - x0) / 5.0;
                (0..=5).map(|i| x0 + step * i as f64).map(|v| (v, tick_label(v, step))).collect()
            }
        };
        let base = TOP + ph;
        for (v, label) in &xticks {
            let x = sx(*v);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{base:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
                base + 5.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                base + 20.0,
                escape(label)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for (m, &(x, y)) in self.markers.iter().enumerate() {
            let _ = writeln!(
                s,
                r##"<line class="fuse-line" x1="{:.2}" y1="{TOP}" x2="{:.2}" y2="{base:.2}" stroke="#888888" stroke-dasharray="4 3"/>"##,
                sx(x),
                sx(x)
            );
            let _ = writeln!(
                s,
                r#"<circle class="fuse-marker" data-index="{m}" cx="{:.2}" cy="{:.2}" r="4" fill="black"/>"#,
                sx(x),
                sy(y)
            );
        }

        for (k, series) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<String> = series
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            if pts.len() > 1 {
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    pts.join(" ")
                );
            }
            if pts.len() <= 30 {
                for p in &pts {
                    let (cx, cy) = p.split_once(',').expect("formatted as x,y");
                    let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
                }
            }
            let ly = TOP + 10.0 + 18.0 * k as f64;
            let lx = LEFT + pw + 15.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                lx + 20.0,
                lx + 26.0,
                ly + 4.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn col(&self, name: &str) -> usize {
        self.header.iter().position(|h| h == name).expect("columns checked on load")
    }
}

fn resolve(input: &Path, kind: PlotKind) -> PathBuf {
    if input.is_dir() {
        input.join(kind.file_name())
    } else {
        input.to_path_buf()
    }
}

fn load(path: &Path, kind: PlotKind) -> Result<Table, CliError> {
    let schema = || format!("expected columns: {}", kind.columns().join(","));
    let mut r = csv::Reader::from_path(path).map_err(|e| usage(format!("{}: {e}; {}", path.display(), schema())))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| usage(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let missing: Vec<&str> = kind.columns().iter().copied().filter(|c| !header.iter().any(|h| h == c)).collect();
    if !missing.is_empty() {
        return Err(usage(format!(
            "{}: missing column(s) {}; {}",
            path.display(),
            missing.join(","),
            schema()
        )));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| usage(format!("{}: {e}", path.display())))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(Table { header, rows })
}

fn num(path: &Path, cell: &str) -> Result<Option<f64>, CliError> {
    if cell.trim().is_empty() {
        return Ok(None);
    }
    cell.trim()
        .parse::<f64>()
        .map(Some)
        .map_err(|_| usage(format!("{}: `{cell}` is not a number", path.display())))
}

fn chart_for(path: &Path, kind: PlotKind, t: &Table) -> Result<Chart, CliError> {
    let get = |row: &Vec<String>, c: &str| num(path, &row[t.col(c)]);
    match kind {
        PlotKind::Accuracy => {
            let mut by_task: Vec<Series> = Vec::new();
            for row in &t.rows {
                let (Some(l), Some(j), Some(a)) = (get(row, "l")?, get(row, "j")?, get(row, "a")?) else {
                    continue;
                };
                let j = j as usize;
                while by_task.len() <= j {
                    by_task.push(Series {
                        name: format!("task {}", by_task.len()),
                        points: Vec::new(),
                    });
                }
                by_task[j].points.push((l, a));
            }
            Ok(Chart {
                title: "Accuracy per task".into(),
                x_label: "after training task l".into(),
                y_label: "accuracy".into(),
                series: by_task,
                ..Chart::default()
            })
        }
        PlotKind::Sweep => {
            let (kind_c, value_c) = (t.col("kind"), t.col("value"));
            let param = t.rows.first().map(|r| r[t.col("param")].clone()).unwrap_or_default();
            let agg: Vec<&Vec<String>> = t.rows.iter().filter(|r| r[kind_c] == "mean").collect();
            let categories: Vec<String> = agg.iter().map(|r| r[value_c].clone()).collect();
            let mut series = Vec::new();
            for (col, name) in [("faa", "FAA"), ("frf", "FRF"), ("ala", "ALA")] {
                let mut points = Vec::new();
                for (i, r) in agg.iter().enumerate() {
                    if let Some(v) = get(r, col)? {
                        points.push((i as f64, v));
                    }
                }
                series.push(Series {
                    name: name.into(),
                    points,
                });
            }
            Ok(Chart {
                title: format!("Sweep over {param}"),
                x_label: param,
                y_label: "mean over seeds".into(),
                series,
                x_categories: Some(categories),
                ..Chart::default()
            })
        }
        PlotKind::Drift => {
            let mut points = Vec::new();
            for row in &t.rows {
                if let (Some(b), Some(d)) = (get(row, "batch")?, get(row, "drift")?) {
                    points.push((b, d));
                }
            }
            Ok(Chart {
                title: "Feature drift".into(),
                x_label: "batch".into(),
                y_label: "feature drift".into(),
                series: vec![Series {
                    name: "drift".into(),
                    points,
                }],
                ..Chart::default()
            })
        }
        PlotKind::Cosine => {
            let cols = [("cos_s1_s2", "s1 vs s2"), ("cos_s1_gwm", "s1 vs GWM"), ("cos_s2_gwm", "s2 vs GWM")];
            let mut series: Vec<Series> = cols
                .iter()
                .map(|(_, n)| Series {
                    name: n.to_string(),
                    points: Vec::new(),
                })
                .collect();
            let mut markers = Vec::new();
            for row in &t.rows {
                let Some(b) = get(row, "batch")? else { continue };
                for (k, (c, _)) in cols.iter().enumerate() {
                    if let Some(v) = get(row, c)? {
                        series[k].points.push((b, v));
                    }
                }
                if get(row, "fused")? == Some(1.0) {
                    markers.push((b, get(row, "cos_s1_s2")?.unwrap_or(1.0)));
                }
            }
            series.retain(|s| !s.points.is_empty());
            Ok(Chart {
                title: "Parameter cosine similarity".into(),
                x_label: "batch".into(),
                y_label: "cosine".into(),
                series,
                markers,
                ..Chart::default()
            })
        }
    }
}

/// Reads `input` (a run directory, a sweep directory or the CSV itself) and
/// renders the chart for `kind`.
pub fn render(input: &Path, kind: PlotKind) -> Result<String, CliError> {
    let path = resolve(input, kind);
    let table = load(&path, kind)?;
    Ok(chart_for(&path, kind, &table)?.to_svg())
}
