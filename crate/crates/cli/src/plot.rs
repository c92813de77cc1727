//! Minimal two-panel SVG figures, one per regressor.
//!
//! Top: the unthresholded path (dots) against the thresholded SAW path (line).
//! Bottom: post-SAW regime coefficients with 95% bands and the break
//! locations as dashed verticals.

use std::fmt::Write;

use sawpanel::PanelFit;

const WIDTH: f64 = 720.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 48.0;

struct Frame {
    top: f64,
    t_max: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn new(top: f64, t_max: f64, values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = values
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (-1.0, 1.0);
        }
        let pad = ((hi - lo) * 0.08).max(1e-6);
        Frame { top, t_max, y_lo: lo - pad, y_hi: hi + pad }
    }

    fn x(&self, t: f64) -> f64 {
        MARGIN + (t - 1.0) / (self.t_max - 1.0).max(1.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        self.top + PANEL_H - (v - self.y_lo) / (self.y_hi - self.y_lo) * PANEL_H
    }

    fn axes(&self, out: &mut String, title: &str) {
        let _ = write!(
            out,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#888"/>"##,
            MARGIN,
            self.top,
            WIDTH - 2.0 * MARGIN,
            PANEL_H
        );
        let _ = write!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="13" font-family="sans-serif">{}</text>"##,
            MARGIN,
            self.top - 8.0,
            escape(title)
        );
        for v in [self.y_lo, self.y_hi] {
            let _ = write!(
                out,
                r##"<text x="4" y="{:.1}" font-size="10" font-family="sans-serif">{:.3}</text>"##,
                self.y(v) + 4.0,
                v
            );
        }
        let _ = write!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="10" font-family="sans-serif">1</text><text x="{:.1}" y="{:.1}" font-size="10" font-family="sans-serif">{}</text>"##,
            self.x(1.0) - 3.0,
            self.top + PANEL_H + 14.0,
            self.x(self.t_max) - 6.0,
            self.top + PANEL_H + 14.0,
            self.t_max
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(out: &mut String, pts: &[(f64, f64)], stroke: &str, extra: &str) {
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
    let _ = write!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.6" {extra}/>"#,
        coords.join(" ")
    );
}

/// Step-function vertices for values at `t = start..`.
fn steps(frame: &Frame, start: usize, values: &[f64]) -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(2 * values.len());
    for (k, v) in values.iter().enumerate() {
        let t = (start + k) as f64;
        pts.push((frame.x(t - 0.5).max(MARGIN), frame.y(*v)));
        pts.push((frame.x(t + 0.5).min(WIDTH - MARGIN), frame.y(*v)));
    }
    pts
}

pub fn regressor_figure(fit: &PanelFit, p: usize) -> String {
    let t = fit.panel.t();
    let name = &fit.panel.regressor_names()[p];
    let len = fit.saw.t_orig_diff;
    // contemporaneous column holds β_t for t = 2..=T
    let raw: Vec<f64> = (0..len).map(|s| fit.saw.gamma_raw[(s, p)]).collect();
    let shrunk: Vec<f64> = (0..len).map(|s| fit.saw.gamma_hat[(s, p)]).collect();
    let segs: Vec<_> = fit.post.segments.iter().filter(|s| s.regressor == p).collect();

    let mut out = String::new();
    let height = 2.0 * PANEL_H + 3.0 * MARGIN;
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#
    );
    out.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);

    let top = Frame::new(MARGIN, t as f64, raw.iter().chain(&shrunk).copied());
    top.axes(&mut out, &format!("{name}: unthresholded (dots) and SAW (line), lambda = {:.4}", fit.saw.lambda()));
    for (k, v) in raw.iter().enumerate() {
        let _ = write!(
            out,
            r##"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="#999"/>"##,
            top.x((k + 2) as f64),
            top.y(*v)
        );
    }
    polyline(&mut out, &steps(&top, 2, &shrunk), "#1f5fa8", "");

    let bands = segs.iter().flat_map(|s| [s.coef - 1.96 * s.se, s.coef + 1.96 * s.se]);
    let bottom = Frame::new(2.0 * MARGIN + PANEL_H, t as f64, bands);
    bottom.axes(&mut out, &format!("{name}: post-SAW regimes with 95% bands"));
    for s in &segs {
        let (x0, x1) = (bottom.x(s.start as f64 - 0.5).max(MARGIN), bottom.x(s.end as f64 + 0.5).min(WIDTH - MARGIN));
        let (lo, hi) = (s.coef - 1.96 * s.se, s.coef + 1.96 * s.se);
        let _ = write!(
            out,
            r##"<rect x="{x0:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#c9daf0"/>"##,
            bottom.y(hi),
            x1 - x0,
            (bottom.y(lo) - bottom.y(hi)).max(0.5)
        );
        polyline(&mut out, &[(x0, bottom.y(s.coef)), (x1, bottom.y(s.coef))], "#1f5fa8", "");
    }
    for &tau in &fit.breaks[p] {
        let x = bottom.x(tau as f64 + 0.5);
        polyline(
            &mut out,
            &[(x, top.top), (x, bottom.top + PANEL_H)],
            "#c0392b",
            r#"stroke-dasharray="4 3""#,
        );
    }
    out.push_str("</svg>\n");
    out
}
