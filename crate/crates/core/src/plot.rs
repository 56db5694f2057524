//! Static SVG convergence charts: objective against iteration, one polyline
//! per run, kill iterations marked with dots.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{GmmError, Result};
use crate::trace::{FitTrace, SolutionChoice};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 90.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum XScale {
    #[default]
    Linear,
    /// `log10(iter + 1)`.
    Log,
}

#[derive(Debug, Clone)]
pub struct PlotOptions {
    pub title: String,
    pub x_scale: XScale,
    pub y_label: String,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self { title: String::new(), x_scale: XScale::Linear, y_label: "penalized log-likelihood".into() }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    scale: XScale,
}

impl Frame {
    fn xv(&self, iter: usize) -> f64 {
        match self.scale {
            XScale::Linear => iter as f64,
            XScale::Log => ((iter + 1) as f64).log10(),
        }
    }

    fn px(&self, v: f64) -> f64 {
        MARGIN_L + (v - self.x0) / (self.x1 - self.x0) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - MARGIN_B - (v - self.y0) / (self.y1 - self.y0) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

/// Renders `series` (label, trace) as an SVG document. The final conservative
/// step is drawn like any other iterate.
pub fn render_convergence_svg(series: &[(&str, &FitTrace)], opts: &PlotOptions) -> Result<String> {
    let finite = |t: &FitTrace| t.records.iter().filter(|r| r.objective.is_finite()).map(|r| (r.iter, r.objective)).collect::<Vec<_>>();
    let points: Vec<Vec<(usize, f64)>> = series.iter().map(|(_, t)| finite(t)).collect();
    if points.iter().all(Vec::is_empty) {
        return Err(GmmError::InvalidInput("nothing to plot".into()));
    }
    let max_iter = points.iter().flatten().map(|p| p.0).max().unwrap_or(0).max(1);
    let (mut lo, mut hi) = points.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if hi - lo < 1e-12 * hi.abs().max(1.0) {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.04 * (hi - lo);
    let mut frame = Frame { x0: 0.0, x1: 0.0, y0: lo - pad, y1: hi + pad, scale: opts.x_scale };
    frame.x1 = frame.xv(max_iter);
    frame.x0 = frame.xv(0);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if !opts.title.is_empty() {
        let _ = writeln!(svg, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(&opts.title));
    }
    let (left, right, top, bottom) = (MARGIN_L, WIDTH - MARGIN_R, MARGIN_T, HEIGHT - MARGIN_B);
    let _ = writeln!(svg, r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#, right - left, bottom - top);

    for i in 0..=4 {
        let v = frame.y0 + (frame.y1 - frame.y0) * i as f64 / 4.0;
        let y = frame.py(v);
        let _ = writeln!(svg, r##"<line x1="{left}" y1="{y:.2}" x2="{right}" y2="{y:.2}" stroke="#ddd"/>"##);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, left - 6.0, y + 4.0, fmt_tick(v));
    }
    for (v, label) in x_ticks(max_iter, opts.x_scale) {
        let x = frame.px(frame.xv(v));
        let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{}" stroke="black"/>"#, bottom + 5.0);
        let _ = writeln!(svg, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{label}</text>"#, bottom + 18.0);
    }
    let x_label = match opts.x_scale {
        XScale::Linear => "iteration",
        XScale::Log => "iteration (log scale)",
    };
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, (left + right) / 2.0, HEIGHT - 10.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (top + bottom) / 2.0,
        escape(&opts.y_label)
    );

    for (idx, ((label, t), pts)) in series.iter().zip(&points).enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        if pts.is_empty() {
            continue;
        }
        let path: Vec<String> = pts.iter().map(|(i, v)| format!("{:.2},{:.2}", frame.px(frame.xv(*i)), frame.py(*v))).collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        for r in t.records.iter().filter(|r| r.kills > 0 && r.objective.is_finite()) {
            let _ = writeln!(
                svg,
                r#"<circle class="kill" cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"><title>{} killed at iteration {}</title></circle>"#,
                frame.px(frame.xv(r.iter)),
                frame.py(r.objective),
                r.kills,
                r.iter
            );
        }
        let ly = top + 16.0 * (idx as f64 + 1.0);
        let _ = writeln!(svg, r#"<line x1="{}" y1="{ly:.2}" x2="{}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, right - 150.0, right - 130.0);
        let finals = t.records.iter().any(|r| r.choice == SolutionChoice::FinalConservativeEm);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}">{} ({} it{})</text>"#,
            right - 125.0,
            ly + 4.0,
            escape(label),
            t.iterations,
            if finals { " + final EM" } else { "" }
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_convergence_svg(series: &[(&str, &FitTrace)], opts: &PlotOptions, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_convergence_svg(series, opts)?)?;
    Ok(())
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e5 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.3e}")
    } else {
        format!("{v:.2}")
    }
}

fn x_ticks(max_iter: usize, scale: XScale) -> Vec<(usize, String)> {
    match scale {
        XScale::Linear => {
            let raw = max_iter as f64 / 5.0;
            let mag = 10f64.powf(raw.log10().floor());
            let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag).max(1.0) as usize;
            (0..=max_iter).step_by(step).map(|i| (i, i.to_string())).collect()
        }
        XScale::Log => {
            let mut out = vec![(0, "0".to_string())];
            let mut p = 1usize;
            while p <= max_iter + 1 {
                if p > 1 {
                    out.push((p - 1, p.to_string()));
                }
                p *= 10;
            }
            out
        }
    }
}
