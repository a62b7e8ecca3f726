//! Minimal hand-rolled SVG output: a top-down episode plot and a bar chart
//! for dataset statistics. Static image files only.

use manipfail::dataset::StoredTrajectory;
use std::fmt::Write;

const PALETTE: &[&str] = &[
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

struct Mapper {
    min_x: f64,
    min_y: f64,
    scale: f64,
    height: f64,
}

impl Mapper {
    // Top-down view: world +X points right, world +Y points up the page.
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.min_x) * self.scale + 40.0,
            self.height - ((y - self.min_y) * self.scale + 40.0),
        )
    }
}

/// Top-down (XY-plane) plot of one episode: end-effector path plus object
/// start and end markers.
pub fn trajectory_svg(traj: &StoredTrajectory) -> String {
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (_, ee, _, objects) in &traj.frames {
        points.push((ee[0], ee[1]));
        for p in objects.values() {
            points.push((p[0], p[1]));
        }
    }
    if points.is_empty() {
        points.push((0.0, 0.0));
        points.push((1.0, 1.0));
    }
    let min_x = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_x = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_y = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let span = (max_x - min_x).max(max_y - min_y).max(1e-3);
    let scale = 520.0 / span;
    let width = (max_x - min_x) * scale + 80.0;
    let height = (max_y - min_y) * scale + 80.0;
    let m = Mapper {
        min_x,
        min_y,
        scale,
        height,
    };

    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = write!(
        s,
        "<rect width=\"100%\" height=\"100%\" fill=\"white\"/><text x=\"12\" y=\"20\" font-family=\"monospace\" font-size=\"13\">{} [{}] outcome={}</text>",
        traj.task, traj.id, traj.outcome
    );

    // End-effector path.
    let mut path = String::new();
    for (i, (_, ee, _, _)) in traj.frames.iter().enumerate() {
        let (px, py) = m.map(ee[0], ee[1]);
        let _ = write!(path, "{}{px:.1},{py:.1} ", if i == 0 { "M" } else { "L" });
    }
    let _ = write!(
        s,
        "<path d=\"{}\" fill=\"none\" stroke=\"#333\" stroke-width=\"1.5\"/>",
        path.trim_end()
    );

    if let (Some(first), Some(last)) = (traj.frames.first(), traj.frames.last()) {
        for (i, (id, p0)) in first.3.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let (x0, y0) = m.map(p0[0], p0[1]);
            let _ = write!(
                s,
                "<circle cx=\"{x0:.1}\" cy=\"{y0:.1}\" r=\"5\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>"
            );
            if let Some(p1) = last.3.get(id) {
                let (x1, y1) = m.map(p1[0], p1[1]);
                let _ = write!(
                    s,
                    "<circle cx=\"{x1:.1}\" cy=\"{y1:.1}\" r=\"5\" fill=\"{color}\"/>"
                );
                let _ = write!(
                    s,
                    "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\" fill=\"{color}\">{id}</text>",
                    x1 + 7.0,
                    y1 + 3.0
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Horizontal-label bar chart for count maps (duration histogram, per-task
/// means).
pub fn bar_chart_svg(title: &str, data: &[(String, f64)]) -> String {
    let width = 640.0;
    let bar_h = 22.0;
    let gap = 8.0;
    let top = 40.0;
    let label_w = 170.0;
    let height = top + data.len() as f64 * (bar_h + gap) + 20.0;
    let max = data.iter().map(|(_, v)| *v).fold(1e-9, f64::max);

    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = write!(
        s,
        "<rect width=\"100%\" height=\"100%\" fill=\"white\"/><text x=\"12\" y=\"22\" font-family=\"monospace\" font-size=\"14\">{title}</text>"
    );
    for (i, (label, value)) in data.iter().enumerate() {
        let y = top + i as f64 * (bar_h + gap);
        let w = (value / max) * (width - label_w - 80.0);
        let color = PALETTE[i % PALETTE.len()];
        let _ = write!(
            s,
            "<text x=\"8\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\">{label}</text>",
            y + bar_h - 7.0
        );
        let _ = write!(
            s,
            "<rect x=\"{label_w}\" y=\"{y:.1}\" width=\"{w:.1}\" height=\"{bar_h}\" fill=\"{color}\"/>"
        );
        let _ = write!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\">{value:.2}</text>",
            label_w + w + 6.0,
            y + bar_h - 7.0
        );
    }
    s.push_str("</svg>\n");
    s
}
