//! Minimal SVG line charts for batch reports.

use std::fmt::Write as _;

use nalgebra::Vector3;

use crate::comms::AccountingReport;
use crate::experiment::FusionMode;
use crate::swarm::SwarmScenario;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 800.0;
const MARGIN: f64 = 40.0;

pub fn mode_color(mode: FusionMode) -> &'static str {
    match mode {
        FusionMode::VoOnly => "#ff8c00",
        FusionMode::VoInter => "#2ca02c",
        FusionMode::VoInterAnchor => "#d62728",
    }
}

struct Frame {
    min: (f64, f64),
    scale: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
        for (x, y) in points {
            lo = (lo.0.min(x), lo.1.min(y));
            hi = (hi.0.max(x), hi.1.max(y));
        }
        if !lo.0.is_finite() {
            lo = (0.0, 0.0);
            hi = (1.0, 1.0);
        }
        let span = (hi.0 - lo.0).max(hi.1 - lo.1).max(1e-9);
        Frame { min: lo, scale: (WIDTH - 2.0 * MARGIN) / span }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (MARGIN + (x - self.min.0) * self.scale, HEIGHT - MARGIN - (y - self.min.1) * self.scale)
    }
}

fn polyline(out: &mut String, frame: &Frame, pts: &[(f64, f64)], color: &str, width: f64) {
    if pts.is_empty() {
        return;
    }
    let coords: Vec<String> = pts
        .iter()
        .map(|&(x, y)| {
            let (u, v) = frame.map(x, y);
            format!("{u:.2},{v:.2}")
        })
        .collect();
    writeln!(
        out,
        r#"<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{}"/>"#,
        coords.join(" ")
    )
    .unwrap();
}

fn header(out: &mut String, title: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(out, r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="16">{title}</text>"#).unwrap();
}

fn legend(out: &mut String, entries: &[(&str, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = 50.0 + 18.0 * i as f64;
        writeln!(
            out,
            r#"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="{color}" stroke-width="3"/><text x="{xt}" y="{yt}" font-family="sans-serif" font-size="12">{label}</text>"#,
            x0 = WIDTH - 200.0,
            x1 = WIDTH - 175.0,
            xt = WIDTH - 168.0,
            yt = y + 4.0
        )
        .unwrap();
    }
}

/// Top view (x, y) of the ground truth in gray and each mode's estimate.
pub fn trajectory_svg(scenario: &SwarmScenario, series: &[(FusionMode, Vec<Vec<Vector3<f64>>>)]) -> String {
    let truth: Vec<Vec<(f64, f64)>> = scenario
        .agents
        .iter()
        .map(|a| a.keyframes.iter().map(|k| {
            let p = k.position();
            (p.x, p.y)
        }).collect())
        .collect();
    let anchors: Vec<(f64, f64)> = scenario.anchors.values().map(|a| (a[0], a[1])).collect();
    let frame = Frame::fit(
        truth
            .iter()
            .flatten()
            .copied()
            .chain(anchors.iter().copied())
            .chain(series.iter().flat_map(|(_, t)| t.iter().flatten().map(|p| (p.x, p.y)))),
    );
    let mut out = String::new();
    header(&mut out, "Trajectories (top view)");
    for t in &truth {
        polyline(&mut out, &frame, t, "#808080", 3.0);
    }
    for (mode, tracks) in series {
        for t in tracks {
            let pts: Vec<(f64, f64)> = t.iter().map(|p| (p.x, p.y)).collect();
            polyline(&mut out, &frame, &pts, mode_color(*mode), 1.5);
        }
    }
    for &(x, y) in &anchors {
        let (u, v) = frame.map(x, y);
        writeln!(out, r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="black"/>"#, u - 5.0, v - 5.0).unwrap();
    }
    let mut entries = vec![("ground truth", "#808080")];
    entries.extend(series.iter().map(|(m, _)| (m.name(), mode_color(*m))));
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

/// Cumulative transmitted bytes against keyframe count on a log axis.
pub fn accounting_svg(report: &AccountingReport) -> String {
    let rows: Vec<_> = report.series.iter().filter(|r| r.keyframes > 0).collect();
    let lines: [(&str, &str, Vec<(f64, f64)>); 4] = [
        ("CoVOR", "#d62728", rows.iter().map(|r| (r.keyframes as f64, r.covor_bytes as f64)).collect()),
        ("CCM-SLAM UB", "#00008b", rows.iter().map(|r| (r.keyframes as f64, r.ccm_slam_ub)).collect()),
        ("CCM-SLAM LB", "#87ceeb", rows.iter().map(|r| (r.keyframes as f64, r.ccm_slam_lb)).collect()),
        ("dSLAM", "#2ca02c", rows.iter().map(|r| (r.keyframes as f64, r.dslam)).collect()),
    ];
    let log_pts: Vec<Vec<(f64, f64)>> =
        lines.iter().map(|(_, _, p)| p.iter().map(|&(x, y)| (x, y.max(1.0).log10())).collect()).collect();
    let (xmax, ymin, ymax) = log_pts.iter().flatten().fold((1.0f64, f64::INFINITY, f64::NEG_INFINITY), |acc, p| {
        (acc.0.max(p.0), acc.1.min(p.1), acc.2.max(p.1))
    });
    let (ymin, ymax) = if ymin.is_finite() { (ymin.floor(), ymax.ceil().max(ymin.floor() + 1.0)) } else { (0.0, 1.0) };
    let sx = (WIDTH - 2.0 * MARGIN) / xmax;
    let sy = (HEIGHT - 2.0 * MARGIN) / (ymax - ymin);
    let mut out = String::new();
    header(&mut out, "Transmitted data (log10 bytes) vs keyframes");
    for d in (ymin as i64)..=(ymax as i64) {
        let y = HEIGHT - MARGIN - (d as f64 - ymin) * sy;
        writeln!(
            out,
            r##"<line x1="{MARGIN}" y1="{y:.2}" x2="{x2}" y2="{y:.2}" stroke="#dddddd"/><text x="4" y="{yt:.2}" font-family="sans-serif" font-size="11">1e{d}</text>"##,
            x2 = WIDTH - MARGIN,
            yt = y + 4.0
        )
        .unwrap();
    }
    for ((_, color, _), pts) in lines.iter().zip(&log_pts) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", MARGIN + x * sx, HEIGHT - MARGIN - (y - ymin) * sy))
            .collect();
        writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, coords.join(" ")).unwrap();
    }
    let entries: Vec<(&str, &str)> = lines.iter().map(|(l, c, _)| (*l, *c)).collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}
