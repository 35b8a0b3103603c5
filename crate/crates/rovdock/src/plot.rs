//! Top-down SVG trajectory plots from a trial log.
//!
//! Drawn in the navigation frame of each step: the true track, the
//! estimated track with short heading ticks, the reference loop as a dashed
//! polyline and every reached waypoint as a circle of its acceptance radius.

use std::fmt::Write as _;

use rovdock_core::geometry::FrameId;
use rovdock_core::guidance::{build_loops, PathKind, Waypoint};
use rovdock_core::mission::LogRecord;

use crate::error::{HarnessError, Result};

const SIZE: f64 = 640.0;
const MARGIN: f64 = 30.0;
const HEADING_EVERY: usize = 20;

struct Frame {
    min: [f64; 2],
    scale: f64,
}

impl Frame {
    /// North/forward up, east/right to the right.
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let px = MARGIN + (y - self.min[1]) * self.scale;
        let py = SIZE - MARGIN - (x - self.min[0]) * self.scale;
        (px, py)
    }
}

fn polyline(out: &mut String, frame: &Frame, pts: &[[f64; 2]], class: &str, style: &str) {
    if pts.len() < 2 {
        return;
    }
    let coords: Vec<String> = pts
        .iter()
        .map(|p| {
            let (x, y) = frame.map(p[0], p[1]);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline class="{class}" fill="none" {style} points="{}"/>"#,
        coords.join(" ")
    );
}

/// Renders the docking part of a trial (the tag* frame). Returns an error
/// if the log has no header or no docking-frame steps.
pub fn plot_svg(records: &[LogRecord]) -> Result<String> {
    let Some(LogRecord::Header { config, .. }) = records.first() else {
        return Err(HarnessError::Log {
            line: 1,
            message: "log does not start with a header".into(),
        });
    };
    let nav_frame = FrameId::TagStar;
    let mut truth = Vec::new();
    let mut est = Vec::new();
    for r in records {
        if let LogRecord::Step(s) = r {
            if let Some(n) = s.nav.as_ref().filter(|n| n.frame == nav_frame) {
                truth.push([n.truth[0], n.truth[1]]);
                est.push([n.estimate[0], n.estimate[1], n.estimate[3]]);
            }
        }
    }
    if truth.is_empty() {
        return Err(HarnessError::Log {
            line: 0,
            message: "no docking-frame steps to plot".into(),
        });
    }
    let reached: Vec<(PathKind, Waypoint)> = records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Waypoint { path, waypoint, .. } if waypoint.frame == nav_frame => {
                Some((*path, *waypoint))
            }
            _ => None,
        })
        .collect();
    let (left, right) = build_loops(&config.layout, config.stand_off)?;
    let mut reference: Vec<Vec<[f64; 2]>> = Vec::new();
    for path in [&left, &right] {
        if reached.iter().any(|(k, _)| *k == path.kind) {
            reference.push(
                path.waypoints
                    .iter()
                    .map(|w| [w.position[0], w.position[1]])
                    .collect(),
            );
        }
    }

    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let all = truth
        .iter()
        .copied()
        .chain(est.iter().map(|e| [e[0], e[1]]))
        .chain(reference.iter().flatten().copied());
    for p in all {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0);
    let frame = Frame {
        min: [lo[0] - 0.5, lo[1] - 0.5],
        scale: (SIZE - 2.0 * MARGIN) / (span + 1.0),
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for path in &reference {
        polyline(
            &mut out,
            &frame,
            path,
            "reference",
            r#"stroke="gray" stroke-dasharray="6 4""#,
        );
    }
    polyline(
        &mut out,
        &frame,
        &truth,
        "truth",
        r#"stroke="black" stroke-width="1.5""#,
    );
    let est_xy: Vec<[f64; 2]> = est.iter().map(|e| [e[0], e[1]]).collect();
    polyline(
        &mut out,
        &frame,
        &est_xy,
        "estimate",
        r#"stroke="steelblue""#,
    );
    let tick = 0.15;
    for e in est.iter().step_by(HEADING_EVERY) {
        let (x0, y0) = frame.map(e[0], e[1]);
        let (x1, y1) = frame.map(e[0] + tick * e[2].cos(), e[1] + tick * e[2].sin());
        let _ = writeln!(
            out,
            r#"<line class="heading" x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y1:.2}" stroke="crimson"/>"#
        );
    }
    for (_, w) in &reached {
        let (cx, cy) = frame.map(w.position[0], w.position[1]);
        let r = (w.radius * frame.scale).max(2.0);
        let _ = writeln!(
            out,
            r#"<circle class="waypoint" cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="none" stroke="darkgreen"/>"#
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
