//! Static SVG figures for a sweep report.
//!
//! Three figures are produced: TV against `T` on log-log axes (one series per
//! `k`, with the bound `(k + log d) log³T / T + (ε_score + ε_Jacobi) log T`
//! at `c = 1` overlaid and dashed where it exceeds one), TV against `δ` at a
//! fixed `T`, and the covering-slope estimate `k̂` against nominal `k`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flowlab_core::metrics::theorem_bound;

use crate::sweep::RunRow;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

/// Data-to-pixel map along one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub log: bool,
    /// Pixel coordinates of `lo` and `hi` (`hi` may map below `lo`, as for
    /// the y axis).
    pub pixel_lo: f64,
    pub pixel_hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool, pixel_lo: f64, pixel_hi: f64) -> Self {
        let (mut lo, mut hi) = values
            .filter(|v| v.is_finite() && (!log || *v > 0.0))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = if log { (0.1, 1.0) } else { (0.0, 1.0) };
        }
        if log {
            let pad = ((hi / lo).ln() * 0.05).max(0.05).exp();
            (lo, hi) = (lo / pad, hi * pad);
        } else {
            let pad = ((hi - lo) * 0.05).max(if hi == lo { 0.5 * hi.abs().max(1.0) } else { 0.0 });
            (lo, hi) = (lo - pad, hi + pad);
        }
        Axis { lo, hi, log, pixel_lo, pixel_hi }
    }

    fn unit(&self, v: f64) -> f64 {
        if self.log {
            (v.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln())
        } else {
            (v - self.lo) / (self.hi - self.lo)
        }
    }

    pub fn map(&self, v: f64) -> f64 {
        self.pixel_lo + self.unit(v) * (self.pixel_hi - self.pixel_lo)
    }

    /// Tick values inside the range: 1-2-5 multiples of powers of ten on a
    /// log axis, a 1-2-5 step on a linear one.
    pub fn ticks(&self) -> Vec<f64> {
        let inside = |v: &f64| *v >= self.lo * (1.0 - 1e-12) && *v <= self.hi * (1.0 + 1e-12);
        if self.log {
            let (e0, e1) = (self.lo.log10().floor() as i32, self.hi.log10().ceil() as i32);
            let mut ticks: Vec<f64> = (e0..=e1)
                .flat_map(|e| [1.0, 2.0, 5.0].map(|m| m * 10f64.powi(e)))
                .filter(inside)
                .collect();
            if ticks.len() > 9 {
                ticks.retain(|v| (v.log10() - v.log10().round()).abs() < 1e-9);
            }
            ticks
        } else {
            let step = linear_step(self.hi - self.lo);
            let first = (self.lo / step).ceil() as i64;
            let last = (self.hi / step).floor() as i64;
            (first..=last).map(|i| i as f64 * step).collect()
        }
    }

    fn label(&self, v: f64) -> String {
        let step = if self.log { v } else { linear_step(self.hi - self.lo) };
        let decimals = (-step.log10().floor()).max(0.0) as usize;
        format!("{v:.decimals$}")
    }
}

fn linear_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let m = raw / mag;
    mag * if m < 1.5 { 1.0 } else if m < 3.5 { 2.0 } else if m < 7.5 { 5.0 } else { 10.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    /// Measured values: solid polyline with markers.
    Data,
    /// Convergence bound at `c = 1`; segments touching a vacuous value are dashed.
    Bound,
    /// Reference line such as `k̂ = k`.
    Reference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub kind: SeriesKind,
    pub points: Vec<(f64, f64)>,
    /// One flag per point (bound series only).
    pub vacuous: Vec<bool>,
}

impl Series {
    fn data(label: String, mut points: Vec<(f64, f64)>) -> Self {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        Series { label, kind: SeriesKind::Data, points, vacuous: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub name: String,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x: Axis,
    pub y: Axis,
    pub series: Vec<Series>,
}

impl Figure {
    fn new(name: &str, title: String, labels: (&str, &str), log: bool, series: Vec<Series>) -> Self {
        let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
        Figure {
            name: name.into(),
            title,
            x_label: labels.0.into(),
            y_label: labels.1.into(),
            x: Axis::fit(xs, log, LEFT, WIDTH - RIGHT),
            y: Axis::fit(ys.collect::<Vec<_>>().into_iter(), log, HEIGHT - BOTTOM, TOP),
            series,
        }
    }

    pub fn series(&self, kind: SeriesKind) -> impl Iterator<Item = &Series> {
        self.series.iter().filter(move |s| s.kind == kind)
    }

    fn px(&self, p: (f64, f64)) -> String {
        format!("{:.2},{:.2}", self.x.map(p.0), self.y.map(p.1))
    }

    fn visible(&self, p: &(f64, f64)) -> bool {
        p.0.is_finite() && p.1.is_finite() && (!self.x.log || p.0 > 0.0) && (!self.y.log || p.1 > 0.0)
    }

    pub fn to_svg(&self) -> String {
        let mut s = String::new();
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (x0 + x1) / 2.0, escape(&self.title));
        let _ = writeln!(s, r##"<rect class="frame" x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="#333"/>"##, x1 - x0, y0 - y1);

        for v in self.x.ticks() {
            let px = self.x.map(v);
            let _ = writeln!(
                s,
                r##"<g class="xtick" data-value="{v}"><line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{}" stroke="#333"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text></g>"##,
                y0 + 5.0,
                y0 + 18.0,
                self.x.label(v)
            );
        }
        for v in self.y.ticks() {
            let py = self.y.map(v);
            let _ = writeln!(
                s,
                r##"<g class="ytick" data-value="{v}"><line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="#333"/><text x="{}" y="{:.2}" text-anchor="end">{}</text></g>"##,
                x0 - 5.0,
                x0 - 8.0,
                py + 4.0,
                self.y.label(v)
            );
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, HEIGHT - 15.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(&self.y_label)
        );

        let _ = writeln!(s, r#"<svg x="{x0}" y="{y1}" width="{}" height="{}" viewBox="{x0} {y1} {} {}" overflow="hidden">"#, x1 - x0, y0 - y1, x1 - x0, y0 - y1);
        let mut colour = 0;
        let mut legend = Vec::new();
        for series in &self.series {
            let pts: Vec<(f64, f64)> = series.points.iter().copied().filter(|p| self.visible(p)).collect();
            match series.kind {
                SeriesKind::Data => {
                    let c = PALETTE[colour % PALETTE.len()];
                    colour += 1;
                    let path: Vec<String> = pts.iter().map(|&p| self.px(p)).collect();
                    let _ = writeln!(s, r#"<polyline class="series" fill="none" stroke="{c}" stroke-width="1.8" points="{}"/>"#, path.join(" "));
                    for &p in &pts {
                        let (x, y) = (self.x.map(p.0), self.y.map(p.1));
                        let _ = writeln!(s, r#"<circle class="marker" cx="{x:.2}" cy="{y:.2}" r="3" fill="{c}"/>"#);
                    }
                    legend.push((series.label.clone(), c, false));
                }
                SeriesKind::Bound => {
                    let c = PALETTE[(colour + PALETTE.len() - 1) % PALETTE.len()];
                    let flags: Vec<bool> = series
                        .points
                        .iter()
                        .zip(&series.vacuous)
                        .filter(|(p, _)| self.visible(p))
                        .map(|(_, &v)| v)
                        .collect();
                    for (i, w) in pts.windows(2).enumerate() {
                        let dashed = flags[i] || flags[i + 1];
                        let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
                        let _ = writeln!(
                            s,
                            r#"<polyline class="bound{}" fill="none" stroke="{c}" stroke-width="1.2"{dash} points="{} {}"/>"#,
                            if dashed { " vacuous" } else { "" },
                            self.px(w[0]),
                            self.px(w[1])
                        );
                    }
                    legend.push((series.label.clone(), c, true));
                }
                SeriesKind::Reference => {
                    let path: Vec<String> = pts.iter().map(|&p| self.px(p)).collect();
                    let _ = writeln!(s, r##"<polyline class="reference" fill="none" stroke="#888" stroke-dasharray="2 3" points="{}"/>"##, path.join(" "));
                    legend.push((series.label.clone(), "#888", true));
                }
            }
        }
        let _ = writeln!(s, "</svg>");

        for (i, (label, c, dashed)) in legend.iter().enumerate() {
            let y = TOP + 10.0 + 18.0 * i as f64;
            let lx = x1 + 15.0;
            let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                s,
                r#"<g class="legend"><line x1="{lx}" y1="{y}" x2="{}" y2="{y}" stroke="{c}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text></g>"#,
                lx + 24.0,
                lx + 30.0,
                y + 4.0,
                escape(label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn usable(row: &RunRow) -> Option<f64> {
    row.tv.filter(|_| row.ok())
}

fn distinct<T: PartialOrd + Copy>(values: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).expect("comparable"));
    out
}

fn bound_series(label: String, k: f64, d: usize, rows: &[(usize, f64, f64)]) -> Series {
    let mut points = Vec::new();
    let mut vacuous = Vec::new();
    let mut rows = rows.to_vec();
    rows.sort_by_key(|r| r.0);
    for (steps, eps_s, eps_j) in rows {
        let b = theorem_bound(k, d, steps, eps_s, eps_j, 1.0);
        points.push((steps as f64, b.value));
        vacuous.push(b.vacuous);
    }
    Series { label, kind: SeriesKind::Bound, points, vacuous }
}

fn unperturbed(row: &RunRow) -> bool {
    row.kind == "none" || row.delta == 0.0
}

/// TV against `T` for the unperturbed rows of the first coefficient, one
/// series per nominal `k`, each with its bound overlay.
pub fn tv_vs_steps(rows: &[RunRow]) -> Result<Figure> {
    let Some(coeff) = rows.iter().find(|r| unperturbed(r) && usable(r).is_some()).map(|r| r.coeff.clone()) else {
        bail!("empty report: no successful unperturbed runs to plot against T");
    };
    let selected: Vec<&RunRow> = rows
        .iter()
        .filter(|r| unperturbed(r) && r.coeff == coeff && usable(r).is_some())
        .collect();
    let mut series = Vec::new();
    for k in distinct(selected.iter().map(|r| r.k_nominal)) {
        let mut by_t: Vec<&RunRow> = Vec::new();
        for r in selected.iter().filter(|r| r.k_nominal == k) {
            if !by_t.iter().any(|b| b.steps == r.steps) {
                by_t.push(r);
            }
        }
        let d = by_t[0].d;
        series.push(Series::data(format!("k = {k}"), by_t.iter().map(|r| (r.steps as f64, r.tv.unwrap_or(0.0))).collect()));
        let eps: Vec<(usize, f64, f64)> = by_t
            .iter()
            .map(|r| (r.steps, r.eps_score.unwrap_or(0.0), r.eps_jacobi.unwrap_or(0.0)))
            .collect();
        series.push(bound_series(format!("bound k = {k}"), k as f64, d, &eps));
    }
    Ok(Figure::new(
        "tv_vs_T",
        format!("TV vs T ({coeff})"),
        ("T", "TV(p_X1, p_Y1)"),
        true,
        series,
    ))
}

/// TV against `δ` at the largest `T` where some perturbation kind was swept
/// over at least two magnitudes.
pub fn tv_vs_delta(rows: &[RunRow]) -> Result<Figure> {
    let perturbed = |r: &&RunRow| r.kind != "none" && usable(r).is_some();
    let mut best = None;
    for steps in distinct(rows.iter().filter(perturbed).map(|r| r.steps)) {
        let deltas = distinct(rows.iter().filter(perturbed).filter(|r| r.steps == steps).map(|r| r.delta));
        if deltas.len() >= 2 {
            best = Some(steps);
        }
    }
    let Some(steps) = best else {
        bail!("empty report: no perturbation swept over two or more magnitudes");
    };
    let selected: Vec<&RunRow> = rows.iter().filter(perturbed).filter(|r| r.steps == steps).collect();
    let mut keys: Vec<(usize, String, String)> = Vec::new();
    for r in &selected {
        let key = (r.k_nominal, r.kind.clone(), r.coeff.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut series = Vec::new();
    for (k, kind, coeff) in keys {
        let group: Vec<&&RunRow> = selected.iter().filter(|r| r.k_nominal == k && r.kind == kind && r.coeff == coeff).collect();
        let label = format!("k = {k}, {kind}, {coeff}");
        series.push(Series::data(label, group.iter().map(|r| (r.delta, r.tv.unwrap_or(0.0))).collect()));
    }
    Ok(Figure::new("tv_vs_delta", format!("TV vs δ at T = {steps}"), ("δ", "TV(p_X1, p_Y1)"), false, series))
}

/// Covering-slope estimate against nominal `k`, with the line `k̂ = k`.
pub fn k_hat_vs_k(rows: &[RunRow]) -> Result<Figure> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        if let Some(k_hat) = r.k_hat {
            let p = (r.k_nominal as f64, k_hat);
            if !pts.contains(&p) {
                pts.push(p);
            }
        }
    }
    if pts.is_empty() {
        bail!("empty report: no dimension estimates");
    }
    let ks = distinct(pts.iter().map(|p| p.0));
    let reference = Series {
        label: "k̂ = k".into(),
        kind: SeriesKind::Reference,
        points: vec![(ks[0], ks[0]), (ks[ks.len() - 1], ks[ks.len() - 1])],
        vacuous: Vec::new(),
    };
    Ok(Figure::new(
        "k_hat_vs_k",
        "Covering-number slope vs nominal k".into(),
        ("nominal k", "k̂"),
        false,
        vec![Series::data("k̂".into(), pts), reference],
    ))
}

/// Writes every figure the rows support into `dir`. Figures without data are
/// skipped; an empty report is an error.
pub fn emit_plots(rows: &[RunRow], dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        bail!("empty report: nothing to plot");
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    for figure in [tv_vs_steps(rows), tv_vs_delta(rows), k_hat_vs_k(rows)].into_iter().flatten() {
        let path = dir.join(format!("{}.svg", figure.name));
        fs::write(&path, figure.to_svg()).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    if written.is_empty() {
        bail!("empty report: no figure has data");
    }
    Ok(written)
}
