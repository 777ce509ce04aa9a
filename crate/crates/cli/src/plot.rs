//! Minimal SVG scatter plot, written by hand so the output is byte-stable.

use std::fmt::Write;

use ali_core::data::{MarginalDataset, TrajectorySet};

const SIZE: f64 = 800.0;
const MARGIN: f64 = 40.0;

/// Viridis-like ramp sampled at five stops.
const STOPS: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

fn colour(t: f64) -> String {
    let x = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |p: f64, q: f64| (p + f * (q - p)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

struct Frame {
    lo: [f64; 2],
    scale: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = [f64; 2]>) -> Frame {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points.filter(|p| p[0].is_finite() && p[1].is_finite()) {
            for c in 0..2 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        if !lo[0].is_finite() {
            return Frame { lo: [0.0, 0.0], scale: 1.0 };
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
        Frame { lo, scale: (SIZE - 2.0 * MARGIN) / span }
    }

    fn map(&self, p: &[f64]) -> (f64, f64) {
        (MARGIN + (p[0] - self.lo[0]) * self.scale, SIZE - MARGIN - (p[1] - self.lo[1]) * self.scale)
    }
}

/// Marginal samples coloured by time, trajectories drawn as polylines.
pub fn render_svg(data: &MarginalDataset, traj: &TrajectorySet) -> String {
    let data_points = data.iter().flat_map(|(_, b)| b.points().iter_rows().map(|r| [r[0], r[1]]).collect::<Vec<_>>());
    let traj_points = traj.states.iter().flat_map(|s| s.iter_rows().map(|r| [r[0], r[1]]).collect::<Vec<_>>());
    let frame = Frame::fit(data_points.chain(traj_points));

    let mut out = String::new();
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">"
    )
    .unwrap();
    writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
    writeln!(out, "<g id=\"data\" fill-opacity=\"0.6\">").unwrap();
    for (t, b) in data.iter() {
        let fill = colour(t);
        for r in b.points().iter_rows() {
            let (x, y) = frame.map(r);
            writeln!(out, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2\" fill=\"{fill}\"/>").unwrap();
        }
    }
    writeln!(out, "</g>").unwrap();
    writeln!(out, "<g id=\"trajectories\" fill=\"none\" stroke-width=\"1.2\">").unwrap();
    for id in 0..traj.num_trajectories() {
        let stroke = if traj.divergent.get(id).copied().unwrap_or(false) { "#d62728" } else { "#111111" };
        let mut pts = String::new();
        for s in &traj.states {
            let row = s.row(id);
            if row.iter().all(|v| v.is_finite()) {
                let (x, y) = frame.map(row);
                write!(pts, "{x:.2},{y:.2} ").unwrap();
            }
        }
        writeln!(out, "<polyline stroke=\"{stroke}\" points=\"{}\"/>", pts.trim_end()).unwrap();
    }
    writeln!(out, "</g>").unwrap();
    writeln!(out, "</svg>").unwrap();
    out
}
