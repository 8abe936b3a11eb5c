//! CSV, TOML and SVG emission.
//!
//! Every writer is a pure function of its input: numbers are formatted
//! with fixed rules, maps are ordered, and nothing depends on time or
//! environment, so identical inputs give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::cayley::SweepRow;
use crate::master::ReducedDensityMatrix;
use crate::stats::WorkHistogram;
use crate::trajectory::{TimeGrid, Trajectory};
use crate::work::WorkRecord;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Toml { path: PathBuf, source: toml::ser::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

/// Create the parent directory of `path` if needed.
fn ensure_parent(path: &Path) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(io_err(path))
}

fn write_rows<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<(), IoError> {
    ensure_parent(path)?;
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// One line of a trajectory trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub pop_e: f64,
    pub jump_flag: u8,
    /// `emission`, `absorption` or empty.
    pub jump_kind: &'static str,
}

/// Samples of `trajectory` with jumps attached to the sample at the jump time.
pub fn trace_rows(trajectory: &Trajectory<f64>) -> Vec<TraceRow> {
    let mut jumps = trajectory.jumps.iter().peekable();
    trajectory
        .samples
        .iter()
        .map(|&(t, pop_e)| {
            let tol = 1e-9 * t.abs().max(1.0);
            match jumps.peek() {
                Some(j) if (j.time - t).abs() <= tol => {
                    let kind = jumps.next().expect("peeked").kind;
                    TraceRow { t, pop_e, jump_flag: 1, jump_kind: kind.label() }
                }
                _ => TraceRow { t, pop_e, jump_flag: 0, jump_kind: "" },
            }
        })
        .collect()
}

pub fn write_trace_csv(path: &Path, trajectory: &Trajectory<f64>) -> Result<(), IoError> {
    write_rows(path, trace_rows(trajectory))
}

#[derive(Serialize)]
struct EnsembleRow {
    index: u64,
    initial: &'static str,
    #[serde(rename = "final")]
    final_state: &'static str,
    n_emit: u32,
    n_absorb: u32,
    #[serde(rename = "Q_over_hw0")]
    q: i64,
    #[serde(rename = "W_over_hw0")]
    w: i64,
}

pub fn write_ensemble_csv(path: &Path, records: &[WorkRecord]) -> Result<(), IoError> {
    write_rows(
        path,
        records.iter().map(|r| EnsembleRow {
            index: r.index,
            initial: r.initial.label(),
            final_state: r.final_state.label(),
            n_emit: r.n_emissions,
            n_absorb: r.n_absorptions,
            q: r.heat_quanta,
            w: r.work_quanta,
        }),
    )
}

#[derive(Serialize)]
struct MasterRow {
    t: f64,
    sigma_ee: f64,
    #[serde(rename = "Re sigma_ge")]
    re: f64,
    #[serde(rename = "Im sigma_ge")]
    im: f64,
}

pub fn write_master_csv(path: &Path, grid: &TimeGrid<f64>, sigma: &[ReducedDensityMatrix<f64>]) -> Result<(), IoError> {
    write_rows(
        path,
        sigma.iter().enumerate().map(|(k, s)| MasterRow {
            t: grid.time(k),
            sigma_ee: s.sigma_ee(),
            re: s.sigma_ge.re,
            im: s.sigma_ge.im,
        }),
    )
}

#[derive(Serialize)]
struct SweepCsvRow {
    lambda0: f64,
    gamma_down: f64,
    #[serde(rename = "P0")]
    p0: f64,
    #[serde(rename = "P1")]
    p1: f64,
    #[serde(rename = "W1_mean")]
    w1_mean: f64,
    #[serde(rename = "W2_mean")]
    w2_mean: f64,
    ratio: f64,
    jarzynski_lhs: f64,
    jarzynski_rhs: f64,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), IoError> {
    write_rows(
        path,
        rows.iter().map(|r| SweepCsvRow {
            lambda0: r.lambda0,
            gamma_down: r.gamma_down,
            p0: r.p0,
            p1: r.p1,
            w1_mean: r.w1_mean,
            w2_mean: r.w2_mean,
            ratio: r.ratio,
            jarzynski_lhs: r.jarzynski_lhs,
            jarzynski_rhs: r.jarzynski_rhs,
        }),
    )
}

#[derive(Serialize)]
struct HistogramRow {
    #[serde(rename = "W_over_hw0")]
    w: i64,
    count: u64,
    probability: f64,
}

pub fn write_histogram_csv(path: &Path, hist: &WorkHistogram) -> Result<(), IoError> {
    let n = hist.total().max(1) as f64;
    write_rows(path, hist.bins().map(|(w, count)| HistogramRow { w, count, probability: count as f64 / n }))
}

/// Serialize `value` as TOML to `path`.
pub fn write_toml<S: Serialize>(path: &Path, value: &S) -> Result<(), IoError> {
    let text = toml::to_string(value).map_err(|source| IoError::Toml { path: path.to_path_buf(), source })?;
    write_text(path, &text)
}

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Linear map from data to the plot area.
#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let widen = |a: f64, b: f64| if (b - a).abs() < 1e-300 { (a - 0.5, b + 0.5) } else { (a, b) };
        let (x0, x1) = widen(x0, x1);
        let (y0, y1) = widen(y0, y1);
        Self { x0, x1, y0, y1 }
    }

    fn x(&self, v: f64) -> f64 {
        LEFT + (v - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

fn svg_open(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (TOP + HEIGHT - BOTTOM) / 2.0,
        (TOP + HEIGHT - BOTTOM) / 2.0,
        escape(y_label)
    );
    s
}

fn axes(s: &mut String, f: &Frame, x_ticks: &[f64], y_ticks: &[f64]) {
    let (bx, by) = (LEFT, HEIGHT - BOTTOM);
    let _ = writeln!(s, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(s, r#"<line x1="{bx:.1}" y1="{by:.1}" x2="{:.1}" y2="{by:.1}"/>"#, WIDTH - RIGHT);
    let _ = writeln!(s, r#"<line x1="{bx:.1}" y1="{by:.1}" x2="{bx:.1}" y2="{TOP:.1}"/>"#);
    let _ = writeln!(s, "</g>");
    for &v in x_ticks {
        let x = f.x(v);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{by:.1}" x2="{x:.2}" y2="{:.1}" stroke="black"/>"#, by + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.1}" text-anchor="middle">{}</text>"#, by + 19.0, tick_label(v));
    }
    for &v in y_ticks {
        let y = f.y(v);
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{y:.2}" x2="{bx:.1}" y2="{y:.2}" stroke="black"/>"#, bx - 5.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{}</text>"#, bx - 8.0, y + 4.0, tick_label(v));
    }
}

/// Evenly spaced "nice" ticks covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

/// Bar chart of a work histogram: one `<rect class="bar">` per occupied bin.
pub fn histogram_svg(hist: &WorkHistogram, title: &str) -> String {
    let bins: Vec<(i64, u64)> = hist.bins().collect();
    let n = hist.total().max(1) as f64;
    let (wmin, wmax) = bins.iter().fold((-1, 1), |(lo, hi), (w, _)| (lo.min(*w), hi.max(*w)));
    let pmax = bins.iter().map(|(_, c)| *c as f64 / n).fold(0.0, f64::max).max(1e-3);
    let f = Frame::new(wmin as f64 - 0.7, wmax as f64 + 0.7, 0.0, pmax * 1.1);
    let mut s = svg_open(title, "W / ħω₀", "probability");
    let xt: Vec<f64> = (wmin..=wmax).map(|w| w as f64).collect();
    axes(&mut s, &f, &xt, &ticks(0.0, pmax * 1.1, 5));
    let _ = writeln!(s, r#"<g class="bars" fill="{}">"#, PALETTE[0]);
    for (w, c) in bins {
        let p = c as f64 / n;
        let (xa, xb) = (f.x(w as f64 - 0.35), f.x(w as f64 + 0.35));
        let (ya, yb) = (f.y(p), f.y(0.0));
        let _ = writeln!(
            s,
            r#"<rect class="bar" x="{xa:.2}" y="{ya:.2}" width="{:.2}" height="{:.2}"><title>W={w} p={p:.6}</title></rect>"#,
            xb - xa,
            yb - ya
        );
    }
    let _ = writeln!(s, "</g>\n</svg>");
    s
}

/// |b(t)|² of a trace, jump markers, and the drive window shaded.
pub fn trace_svg(trajectory: &Trajectory<f64>, drive_window: (f64, f64), title: &str) -> String {
    let (t0, t1) = match (trajectory.samples.first(), trajectory.samples.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => (0.0, 1.0),
    };
    let f = Frame::new(t0, t1, 0.0, 1.0);
    let mut s = svg_open(title, "ω₀ t", "|b(t)|²");
    let (da, db) = (f.x(drive_window.0.max(t0)), f.x(drive_window.1.min(t1)));
    if db > da {
        let _ = writeln!(
            s,
            r##"<rect class="drive" x="{da:.2}" y="{TOP:.1}" width="{:.2}" height="{:.1}" fill="#f2f2f2"/>"##,
            db - da,
            HEIGHT - TOP - BOTTOM
        );
    }
    axes(&mut s, &f, &ticks(t0, t1, 8), &ticks(0.0, 1.0, 5));
    // Thin the polyline to at most ~4000 points; keep jump neighbourhoods.
    let stride = (trajectory.samples.len() / 4000).max(1);
    let mut pts = String::new();
    for (k, (t, p)) in trajectory.samples.iter().enumerate() {
        if k % stride == 0 || k + 1 == trajectory.samples.len() {
            let _ = write!(pts, "{:.2},{:.2} ", f.x(*t), f.y(*p));
        }
    }
    let _ = writeln!(s, r#"<polyline class="pop" fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#, PALETTE[0], pts.trim_end());
    for j in &trajectory.jumps {
        let color = if j.kind == crate::trajectory::JumpKind::Emission { PALETTE[1] } else { PALETTE[2] };
        let x = f.x(j.time);
        let _ = writeln!(
            s,
            r#"<line class="jump" x1="{x:.2}" y1="{TOP:.1}" x2="{x:.2}" y2="{:.1}" stroke="{color}" stroke-dasharray="4 3"><title>{} at t={:.4}</title></line>"#,
            HEIGHT - BOTTOM,
            j.kind.label(),
            j.time
        );
    }
    let _ = writeln!(s, "</svg>");
    s
}

/// Style of a series in [`line_plot_svg`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Line,
    DashedLine,
    /// Points with symmetric error bars.
    Points,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub mark: Mark,
    /// `(x, y, error)`; the error is drawn only for [`Mark::Points`].
    pub points: Vec<(f64, f64, f64)>,
    /// Index into the palette, to tie related series together.
    pub color: usize,
}

/// Multi-series x–y plot with a legend.
pub fn line_plot_svg(series: &[Series], title: &str, x_label: &str, y_label: &str) -> String {
    let finite = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y, e) in finite {
        let e = if e.is_finite() { e } else { 0.0 };
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y - e);
        y1 = y1.max(y + e);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = 0.05 * (y1 - y0).max(1e-6);
    let f = Frame::new(x0, x1, y0 - pad, y1 + pad);
    let mut s = svg_open(title, x_label, y_label);
    axes(&mut s, &f, &ticks(f.x0, f.x1, 6), &ticks(f.y0, f.y1, 6));
    for (i, se) in series.iter().enumerate() {
        let color = PALETTE[se.color % PALETTE.len()];
        let pts: Vec<_> = se.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
        match se.mark {
            Mark::Line | Mark::DashedLine => {
                let dash = if se.mark == Mark::DashedLine { r#" stroke-dasharray="6 4""# } else { "" };
                let coords: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", f.x(p.0), f.y(p.1))).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                    coords.join(" ")
                );
            }
            Mark::Points => {
                let _ = writeln!(s, r#"<g class="series" fill="{color}" stroke="{color}">"#);
                for p in pts {
                    let (x, y) = (f.x(p.0), f.y(p.1));
                    if p.2.is_finite() && p.2 > 0.0 {
                        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}"/>"#, f.y(p.1 - p.2), f.y(p.1 + p.2));
                    }
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3"/>"#);
                }
                let _ = writeln!(s, "</g>");
            }
        }
        let ly = TOP + 14.0 + 16.0 * i as f64;
        let lx = WIDTH - RIGHT - 190.0;
        let _ = writeln!(s, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&se.label));
    }
    let _ = writeln!(s, "</svg>");
    s
}
