//! Line charts of one block's candidate probabilities as SVG text.

use std::fmt::Write as _;

use crate::engine::TrajectoryRow;
use crate::error::{Error, Result};
use crate::searchspace::{CandidateOp, NUM_CANDIDATES};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; NUM_CANDIDATES] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Renders the rows of a single block: x is the epoch, y the probability
/// (clamped to `[0, 1]`), one labelled polyline per candidate.
pub fn emit_plot_svg(rows: &[TrajectoryRow]) -> Result<String> {
    let first = rows.first().ok_or_else(|| Error::Config("cannot plot an empty trajectory".into()))?;
    let block = first.block_id;
    if rows.iter().any(|r| r.block_id != block) {
        return Err(Error::Config("plot rows must all belong to one block".into()));
    }
    let mut series: Vec<Vec<(usize, f64)>> = vec![Vec::new(); NUM_CANDIDATES];
    for r in rows {
        let s = series
            .get_mut(r.candidate_id)
            .ok_or_else(|| Error::Config(format!("candidate id {} out of range", r.candidate_id)))?;
        s.push((r.epoch, r.probability));
    }
    let lo = rows.iter().map(|r| r.epoch).min().expect("nonempty");
    let hi = rows.iter().map(|r| r.epoch).max().expect("nonempty");
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x_of = |e: usize| {
        if hi == lo {
            LEFT + plot_w / 2.0
        } else {
            LEFT + plot_w * (e - lo) as f64 / (hi - lo) as f64
        }
    };
    let y_of = |p: f64| TOP + plot_h * (1.0 - p.clamp(0.0, 1.0));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="18" text-anchor="middle">block {block}</text>"#,
        LEFT + plot_w / 2.0
    );
    let (x0, x1, y0, y1) = (LEFT, LEFT + plot_w, TOP, TOP + plot_h);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0:.2} {y0:.2} L{x0:.2} {y1:.2} L{x1:.2} {y1:.2}" fill="none" stroke="black"/>"#
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_of(tick);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{tick:.2}</text>"##,
            x0,
            x0 - 6.0,
            y + 4.0
        );
    }
    for e in if hi == lo { vec![lo] } else { vec![lo, hi] } {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{e}</text>"#,
            x_of(e),
            y1 + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    for (id, points) in series.iter().enumerate() {
        if points.is_empty() {
            continue;
        }
        let label = CandidateOp::from_id(id).expect("id below NUM_CANDIDATES").label();
        let coords: Vec<String> = points
            .iter()
            .map(|&(e, p)| format!("{:.2},{:.2}", x_of(e), y_of(p)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline data-label="{label}" points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            coords.join(" "),
            COLORS[id]
        );
        let ly = TOP + 10.0 + 20.0 * id as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{label}</text>"#,
            x1 + 15.0,
            x1 + 35.0,
            COLORS[id],
            x1 + 40.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
