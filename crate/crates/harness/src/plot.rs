//! SVG trajectory plots: observed history, missing steps, ground truth and prediction.

use std::fmt::Write as _;

use mstf_core::{Point, SequenceMask};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 24.0;

pub struct PlotInput<'a> {
    pub title: &'a str,
    /// Absolute history positions, including the ones the mask hides.
    pub history: &'a [Point],
    pub mask: &'a SequenceMask,
    pub truth: &'a [Point],
    pub prediction: &'a [Point],
}

struct Frame {
    min: Point,
    sx: f64,
    sy: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = Point>) -> Self {
        let (mut lo, mut hi) = (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in points {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        // axes scale independently; a flat span still gets a 1 m extent
        let span = |a: f64, b: f64| (b - a).max(1.0);
        Self {
            min: lo,
            sx: (WIDTH - 2.0 * MARGIN) / span(lo.x, hi.x),
            sy: (HEIGHT - 2.0 * MARGIN) / span(lo.y, hi.y),
        }
    }

    fn map(&self, p: Point) -> (f64, f64) {
        (MARGIN + (p.x - self.min.x) * self.sx, HEIGHT - MARGIN - (p.y - self.min.y) * self.sy)
    }
}

fn polyline(out: &mut String, class: &str, colour: &str, dash: &str, frame: &Frame, pts: &[Point]) {
    let coords: Vec<String> = pts
        .iter()
        .map(|&p| {
            let (x, y) = frame.map(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        out,
        r#"  <polyline class="{class}" points="{}" fill="none" stroke="{colour}" stroke-width="2"{dash}/>"#,
        coords.join(" ")
    );
}

pub fn render(input: &PlotInput) -> String {
    let frame = Frame::fit(
        input
            .history
            .iter()
            .chain(input.truth)
            .chain(input.prediction)
            .copied(),
    );
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"  <rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let title = input.title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let _ = writeln!(out, r#"  <text x="{MARGIN}" y="16" font-family="sans-serif" font-size="12">{title}</text>"#);
    polyline(&mut out, "truth", "#2b8a3e", "", &frame, input.truth);
    polyline(&mut out, "prediction", "#c92a2a", r#" stroke-dasharray="6 3""#, &frame, input.prediction);
    for (p, &seen) in input.history.iter().zip(input.mask.values()) {
        let (x, y) = frame.map(*p);
        if seen {
            let _ = writeln!(out, r##"  <circle class="observed" cx="{x:.2}" cy="{y:.2}" r="3" fill="#1c7ed6"/>"##);
        } else {
            let _ = writeln!(
                out,
                r##"  <path class="missing" d="M{:.2},{:.2} L{:.2},{:.2} M{:.2},{:.2} L{:.2},{:.2}" stroke="#868e96" stroke-width="1.5"/>"##,
                x - 3.0,
                y - 3.0,
                x + 3.0,
                y + 3.0,
                x - 3.0,
                y + 3.0,
                x + 3.0,
                y - 3.0
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
