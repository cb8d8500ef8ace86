//! Static trajectory plot.
//!
//! Draws the reference, the true and estimated paths, each obstacle at its
//! first and last position, and the inflated radius the controller keeps
//! clear as a dashed circle.

use std::fmt::Write;

use wncs::controller::ObstacleKind;
use wncs::sim::{ScenarioConfig, TraceRow};

const WIDTH: f64 = 800.0;
const PAD: f64 = 40.0;

struct Frame {
    min_x: f64,
    max_y: f64,
    scale: f64,
}

impl Frame {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (PAD + (x - self.min_x) * self.scale, PAD + (self.max_y - y) * self.scale)
    }
}

fn polyline(out: &mut String, frame: &Frame, points: impl Iterator<Item = (f64, f64)>, style: &str) {
    let mut coords = String::new();
    for (x, y) in points {
        let (px, py) = frame.px(x, y);
        let _ = write!(coords, "{px:.2},{py:.2} ");
    }
    let _ = writeln!(out, r#"<polyline fill="none" {style} points="{}"/>"#, coords.trim_end());
}

fn circle(out: &mut String, frame: &Frame, c: [f64; 2], r: f64, style: &str) {
    let (px, py) = frame.px(c[0], c[1]);
    let _ = writeln!(out, r#"<circle cx="{px:.2}" cy="{py:.2}" r="{:.2}" {style}/>"#, r * frame.scale);
}

/// SVG document for one run; a pure function of its arguments.
pub fn render_svg(trace: &[TraceRow], sc: &ScenarioConfig) -> String {
    let mpc = sc.mpc_config();
    let inflation = mpc.safety_margin;
    let last_k = trace.last().map_or(0, |r| r.k);
    let placed: Vec<_> = sc
        .obstacles
        .iter()
        .map(|o| (o, o.position_at(0, sc.dt), o.position_at(last_k, sc.dt)))
        .collect();

    let (mut min_x, mut max_x, mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let mut grow = |x: f64, y: f64, r: f64| {
        if x.is_finite() && y.is_finite() {
            min_x = min_x.min(x - r);
            max_x = max_x.max(x + r);
            min_y = min_y.min(y - r);
            max_y = max_y.max(y + r);
        }
    };
    for row in trace {
        grow(row.x, row.y, mpc.robot_radius);
        grow(row.ref_x, row.ref_y, 0.0);
    }
    for (o, start, end) in &placed {
        grow(start[0], start[1], o.radius + inflation);
        grow(end[0], end[1], o.radius + inflation);
    }
    if !min_x.is_finite() {
        (min_x, max_x, min_y, max_y) = (-1.0, 1.0, -1.0, 1.0);
    }
    let span = (max_x - min_x).max(max_y - min_y).max(1e-6);
    let scale = (WIDTH - 2.0 * PAD) / span;
    let frame = Frame { min_x, max_y, scale };
    let height = (max_y - min_y) * scale + 2.0 * PAD;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{PAD:.0}" y="24" font-family="sans-serif" font-size="14">{} ({}, seed {})</text>"#,
        sc.name,
        sc.controller.as_str(),
        sc.seed
    );
    for (o, start, end) in &placed {
        if o.kind == ObstacleKind::Moving {
            let (x0, y0) = frame.px(start[0], start[1]);
            let (x1, y1) = frame.px(end[0], end[1]);
            let _ = writeln!(
                out,
                r##"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y1:.2}" stroke="#c0392b" stroke-opacity="0.4" stroke-width="1"/>"##
            );
            circle(&mut out, &frame, *end, o.radius, r##"fill="#c0392b" fill-opacity="0.15" stroke="none""##);
            circle(&mut out, &frame, *end, o.radius + inflation, r##"fill="none" stroke="#c0392b" stroke-opacity="0.4" stroke-dasharray="4 3""##);
        }
        circle(&mut out, &frame, *start, o.radius, r##"fill="#c0392b" fill-opacity="0.6" stroke="none""##);
        circle(&mut out, &frame, *start, o.radius + inflation, r##"fill="none" stroke="#c0392b" stroke-dasharray="4 3""##);
    }
    polyline(&mut out, &frame, trace.iter().map(|r| (r.ref_x, r.ref_y)), r##"stroke="#7f8c8d" stroke-width="1.5" stroke-dasharray="8 4""##);
    polyline(&mut out, &frame, trace.iter().map(|r| (r.est_x, r.est_y)), r##"stroke="#e67e22" stroke-width="1""##);
    polyline(&mut out, &frame, trace.iter().map(|r| (r.x, r.y)), r##"stroke="#2980b9" stroke-width="2""##);
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        circle(&mut out, &frame, [first.x, first.y], mpc.robot_radius, r##"fill="none" stroke="#2980b9" stroke-width="1""##);
        circle(&mut out, &frame, [last.x, last.y], mpc.robot_radius, r##"fill="#2980b9" fill-opacity="0.2" stroke="#2980b9""##);
    }
    out.push_str("</svg>\n");
    out
}
