//! Static SVG plots read back from emitted result files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::training::TRIANGLE_CORNERS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    PathTriangle,
    Line,
    Bar,
    Scatter,
}

/// Columns of a CSV or JSON result file.
///
/// * line/scatter: `[x, y]`, one series per `group_by` value
/// * bar: `[label, value]`
/// * path-triangle: three probability columns, one path per `group_by` value
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataRef {
    pub file: PathBuf,
    pub columns: Vec<String>,
    pub group_by: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub kind: PlotKind,
    pub data: DataRef,
    pub title: String,
    /// Axis labels (x then y), or the three corner labels of a triangle plot.
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PlotData {
    Series(Vec<Series>),
    Bars(Vec<(String, f64)>),
    Paths(Vec<Vec<[f64; 3]>>),
}

impl PlotData {
    pub fn is_empty(&self) -> bool {
        match self {
            PlotData::Series(s) => s.iter().all(|s| s.points.is_empty()),
            PlotData::Bars(b) => b.is_empty(),
            PlotData::Paths(p) => p.iter().all(|p| p.is_empty()),
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Rows of the referenced file as string cells keyed by the header.
fn read_table(file: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let unresolved = |e: &dyn std::fmt::Display| LabError::Config(format!("cannot resolve plot data {}: {e}", file.display()));
    if file.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(file).map_err(|e| unresolved(&e))?;
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = serde_json::from_str(&text).map_err(|e| unresolved(&e))?;
        let header: Vec<String> = rows.first().map(|r| r.keys().cloned().collect()).unwrap_or_default();
        let cells = rows
            .iter()
            .map(|r| {
                header
                    .iter()
                    .map(|h| match &r[h] {
                        serde_json::Value::String(s) => s.clone(),
                        v => v.to_string(),
                    })
                    .collect()
            })
            .collect();
        return Ok((header, cells));
    }
    let mut reader = csv::Reader::from_path(file).map_err(|e| unresolved(&e))?;
    let header = reader.headers().map_err(|e| unresolved(&e))?.iter().map(String::from).collect();
    let mut cells = Vec::new();
    for rec in reader.records() {
        cells.push(rec.map_err(|e| unresolved(&e))?.iter().map(String::from).collect());
    }
    Ok((header, cells))
}

fn column(header: &[String], name: &str) -> Result<usize> {
    header.iter().position(|h| h == name).ok_or_else(|| LabError::Config(format!("plot data has no column {name:?}")))
}

fn number(cell: &str) -> Result<f64> {
    cell.trim().parse().map_err(|_| LabError::Config(format!("plot cell {cell:?} is not a number")))
}

/// Values of `rows` grouped by the key column, in order of first appearance.
fn grouped<T>(rows: Vec<(String, T)>) -> Vec<(String, Vec<T>)> {
    let mut out: Vec<(String, Vec<T>)> = Vec::new();
    for (key, v) in rows {
        match out.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.1.push(v),
            None => out.push((key, vec![v])),
        }
    }
    out
}

pub fn load_plot_data(spec: &PlotSpec) -> Result<PlotData> {
    let (header, rows) = read_table(&spec.data.file)?;
    let want = match spec.kind {
        PlotKind::PathTriangle => 3,
        _ => 2,
    };
    if spec.data.columns.len() != want {
        return Err(LabError::Config(format!("{:?} plots take {want} columns, got {}", spec.kind, spec.data.columns.len())));
    }
    let cols = spec.data.columns.iter().map(|c| column(&header, c)).collect::<Result<Vec<_>>>()?;
    let group = spec.data.group_by.as_deref().map(|g| column(&header, g)).transpose()?;
    let key = |r: &Vec<String>| group.map_or_else(String::new, |g| r[g].clone());
    Ok(match spec.kind {
        PlotKind::Bar => PlotData::Bars(rows.iter().map(|r| Ok((r[cols[0]].clone(), number(&r[cols[1]])?))).collect::<Result<_>>()?),
        PlotKind::PathTriangle => {
            let pts = rows.iter().map(|r| Ok((key(r), [number(&r[cols[0]])?, number(&r[cols[1]])?, number(&r[cols[2]])?]))).collect::<Result<_>>()?;
            PlotData::Paths(grouped(pts).into_iter().map(|g| g.1).collect())
        }
        PlotKind::Line | PlotKind::Scatter => {
            let pts = rows.iter().map(|r| Ok((key(r), (number(&r[cols[0]])?, number(&r[cols[1]])?)))).collect::<Result<_>>()?;
            PlotData::Series(grouped(pts).into_iter().map(|(name, points)| Series { name, points }).collect())
        }
    })
}

/// Linear map from a data interval onto a pixel interval; a degenerate
/// interval is widened so constant data lands mid-axis.
#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, px_lo: f64, px_hi: f64) -> Self {
        let (mut lo, mut hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        } else if hi - lo < 1e-12 {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        Self { lo, hi, px_lo, px_hi }
    }

    fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Frame, ticks and labels. Categorical plots pass no x axis.
fn axes(svg: &mut String, x: Option<&Axis>, y: &Axis, labels: &[String]) {
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(svg, r##"<path class="axes" d="M{x0:.2} {y1:.2} V{y0:.2} H{x1:.2}" stroke="#000" fill="none"/>"##);
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        if let Some(x) = x {
            let xv = x.lo + t * (x.hi - x.lo);
            let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#, x.map(xv), y0 + 14.0, tick(xv));
        }
        let yv = y.lo + t * (y.hi - y.lo);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#, x0 - 4.0, y.map(yv) + 3.0, tick(yv));
    }
    if let Some(l) = labels.first() {
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, HEIGHT - 10.0, escape(l));
    }
    if let Some(l) = labels.get(1) {
        let cy = (y0 + y1) / 2.0;
        let _ = writeln!(svg, r#"<text x="15" y="{cy:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 15 {cy:.2})">{}</text>"#, escape(l));
    }
}

/// Blue at the first epoch to red at the last.
fn epoch_color(t: f64) -> String {
    let r = (255.0 * t).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    format!("#{r:02x}40{b:02x}")
}

fn triangle(svg: &mut String, paths: &[Vec<[f64; 3]>], labels: &[String]) {
    let size = (WIDTH - 2.0 * MARGIN).min((HEIGHT - 2.0 * MARGIN) / TRIANGLE_CORNERS[2].1);
    let left = (WIDTH - size) / 2.0;
    let base = HEIGHT - MARGIN;
    let px = |w: &[f64; 3]| {
        let (mut x, mut y) = (0.0, 0.0);
        for (wi, c) in w.iter().zip(TRIANGLE_CORNERS) {
            x += wi * c.0;
            y += wi * c.1;
        }
        (left + x * size, base - y * size)
    };
    let corners: Vec<(f64, f64)> = (0..3)
        .map(|i| {
            let mut w = [0.0; 3];
            w[i] = 1.0;
            px(&w)
        })
        .collect();
    let pts: Vec<String> = corners.iter().map(|c| format!("{:.2},{:.2}", c.0, c.1)).collect();
    let _ = writeln!(svg, r##"<polygon class="simplex" points="{}" stroke="#000" fill="none"/>"##, pts.join(" "));
    let offsets = [(-8.0, 16.0, "end"), (8.0, 16.0, "start"), (0.0, -8.0, "middle")];
    for (i, (c, o)) in corners.iter().zip(offsets).enumerate() {
        let name = labels.get(i).cloned().unwrap_or_else(|| format!("class {}", i + 1));
        let _ = writeln!(svg, r#"<text class="corner" x="{:.2}" y="{:.2}" font-size="12" text-anchor="{}">{}</text>"#, c.0 + o.0, c.1 + o.1, o.2, escape(&name));
    }
    for path in paths {
        let n = path.len();
        if n == 1 {
            let (x, y) = px(&path[0]);
            let _ = writeln!(svg, r##"<circle class="point" cx="{x:.2}" cy="{y:.2}" r="3" fill="#1f77b4"/>"##);
            continue;
        }
        let _ = writeln!(svg, r#"<g class="path">"#);
        for (t, w) in path.windows(2).enumerate() {
            let (a, b) = (px(&w[0]), px(&w[1]));
            let color = epoch_color((t + 1) as f64 / (n - 1) as f64);
            let _ = writeln!(svg, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1"/>"#, a.0, a.1, b.0, b.1);
        }
        let _ = writeln!(svg, "</g>");
    }
}

pub fn render_svg(spec: &PlotSpec, data: &PlotData) -> Result<String> {
    if data.is_empty() {
        return Err(LabError::Domain("nothing to plot".into()));
    }
    let kind_matches = matches!(
        (spec.kind, data),
        (PlotKind::PathTriangle, PlotData::Paths(_)) | (PlotKind::Bar, PlotData::Bars(_)) | (PlotKind::Line | PlotKind::Scatter, PlotData::Series(_))
    );
    if !kind_matches {
        return Err(LabError::Config(format!("{:?} plot given mismatched data", spec.kind)));
    }
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#fff"/>"##);
    let _ = writeln!(svg, r#"<text x="{:.2}" y="24" font-size="14" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(&spec.title));
    match data {
        PlotData::Paths(paths) => triangle(&mut svg, paths, &spec.labels),
        PlotData::Series(series) => {
            let all = || series.iter().flat_map(|s| s.points.iter());
            let x = Axis::new(all().map(|p| p.0), MARGIN, WIDTH - MARGIN);
            let y = Axis::new(all().map(|p| p.1), HEIGHT - MARGIN, MARGIN);
            axes(&mut svg, Some(&x), &y, &spec.labels);
            for (i, s) in series.iter().enumerate() {
                let color = PALETTE[i % PALETTE.len()];
                let finite = s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite());
                if spec.kind == PlotKind::Line {
                    let pts: Vec<String> = finite.map(|p| format!("{:.2},{:.2}", x.map(p.0), y.map(p.1))).collect();
                    let _ = writeln!(svg, r#"<polyline points="{}" stroke="{color}" fill="none"><title>{}</title></polyline>"#, pts.join(" "), escape(&s.name));
                } else {
                    for p in finite {
                        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, x.map(p.0), y.map(p.1));
                    }
                }
            }
        }
        PlotData::Bars(bars) => {
            let y = Axis::new(bars.iter().map(|b| b.1).chain([0.0]), HEIGHT - MARGIN, MARGIN);
            axes(&mut svg, None, &y, &spec.labels);
            let slot = (WIDTH - 2.0 * MARGIN) / bars.len() as f64;
            for (i, (label, v)) in bars.iter().enumerate() {
                let (top, bottom) = (y.map(v.max(0.0)), y.map(v.min(0.0)));
                let left = MARGIN + i as f64 * slot + 0.15 * slot;
                let _ = writeln!(
                    svg,
                    r#"<rect class="bar" x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{}</title></rect>"#,
                    0.7 * slot,
                    bottom - top,
                    PALETTE[i % PALETTE.len()],
                    escape(label)
                );
                let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#, left + 0.35 * slot, HEIGHT - MARGIN + 16.0, escape(label));
            }
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes the plot to `path`. Nothing is written when rendering fails.
pub fn emit_svg(spec: &PlotSpec, data: &PlotData, path: &Path) -> Result<()> {
    let svg = render_svg(spec, data)?;
    std::fs::write(path, svg)?;
    Ok(())
}

/// Resolves the plot's data reference and writes the plot.
pub fn plot_to_file(spec: &PlotSpec, path: &Path) -> Result<()> {
    emit_svg(spec, &load_plot_data(spec)?, path)
}
