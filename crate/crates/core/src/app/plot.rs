//! Minimal self-contained SVG output.

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

const SIZE: f64 = 480.0;
const MARGIN: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlotKind {
    /// `(fpr, tpr)` pairs in curve order.
    Roc,
    /// Normalized innovations with the gate circle of radius `sigma`.
    Scatter { sigma: f64 },
}

/// Renders the plot and writes it to `path`. Nothing is written when the
/// input is rejected.
pub fn emit_plot(points: &[(f64, f64)], kind: PlotKind, path: &Path) -> Result<()> {
    let svg = render_svg(points, kind)?;
    std::fs::write(path, svg).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn render_svg(points: &[(f64, f64)], kind: PlotKind) -> Result<String> {
    if points.is_empty() {
        return Err(Error::invalid("nothing to plot"));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::invalid("plot points must be finite"));
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    match kind {
        PlotKind::Roc => roc(&mut s, points),
        PlotKind::Scatter { sigma } => {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::invalid(format!("gate radius must be positive, got {sigma}")));
            }
            scatter(&mut s, points, sigma)
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Maps `[lo, hi]²` onto the plotting area, y up.
struct Frame {
    lo: f64,
    hi: f64,
}

impl Frame {
    fn scale(&self) -> f64 {
        (SIZE - 2.0 * MARGIN) / (self.hi - self.lo)
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (MARGIN + (x - self.lo) * self.scale(), SIZE - MARGIN - (y - self.lo) * self.scale())
    }

    fn axes(&self, s: &mut String, xlabel: &str, ylabel: &str) {
        let (x0, y0) = self.px(self.lo, self.lo);
        let (x1, y1) = self.px(self.hi, self.hi);
        let _ = writeln!(s, r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, (x0 + x1) / 2.0, SIZE - 15.0);
        let _ = writeln!(
            s,
            r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{ylabel}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0
        );
        for (v, anchor) in [(self.lo, "start"), (self.hi, "end")] {
            let (x, _) = self.px(v, self.lo);
            let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="{anchor}">{v:.3}</text>"#, y0 + 15.0);
            let (_, y) = self.px(self.lo, v);
            let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{v:.3}</text>"#, x0 - 4.0);
        }
    }
}

fn roc(s: &mut String, points: &[(f64, f64)]) {
    let f = Frame { lo: 0.0, hi: 1.0 };
    f.axes(s, "false positive rate", "true positive rate");
    let (a, b) = (f.px(0.0, 0.0), f.px(1.0, 1.0));
    let _ = writeln!(s, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 4"/>"#, a.0, a.1, b.0, b.1);
    let coords: Vec<String> = points
        .iter()
        .map(|&(x, y)| {
            let (px, py) = f.px(x, y);
            format!("{px:.3},{py:.3}")
        })
        .collect();
    let _ = writeln!(s, r#"<polyline class="roc" points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, coords.join(" "));
}

fn scatter(s: &mut String, points: &[(f64, f64)], sigma: f64) {
    let extent = points.iter().fold(sigma, |m, &(x, y)| m.max(x.abs()).max(y.abs())) * 1.1;
    let f = Frame { lo: -extent, hi: extent };
    f.axes(s, "normalized innovation (position)", "normalized innovation (speed)");
    for &(x, y) in points {
        let (px, py) = f.px(x, y);
        let _ = writeln!(s, r#"<circle class="pt" cx="{px:.3}" cy="{py:.3}" r="1.5" fill="steelblue" fill-opacity="0.6"/>"#);
    }
    let (cx, cy) = f.px(0.0, 0.0);
    let _ = writeln!(
        s,
        r#"<circle class="gate" cx="{cx:.3}" cy="{cy:.3}" r="{:.3}" fill="none" stroke="crimson" stroke-width="1.5"/>"#,
        sigma * f.scale()
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" fill="crimson">σ = {sigma}</text>"#, MARGIN + 5.0, MARGIN + 15.0);
}
