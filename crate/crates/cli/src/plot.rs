//! Minimal SVG line chart of a loss trace, log-scaled on the y axis.

use std::fmt::Write as _;

use depthduet::losses::LossReport;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const MAX_POINTS: usize = 1000;

fn series(r: &LossReport) -> [(&'static str, &'static str, f64); 7] {
    [
        ("total", "#000000", r.total),
        ("rec_sg", "#1f77b4", r.rec_sg),
        ("rec_dg", "#d62728", r.rec_dg),
        ("adv_g", "#2ca02c", r.adv_g),
        ("adv_d_s", "#9467bd", r.adv_d_s),
        ("adv_d_r", "#8c564b", r.adv_d_r),
        ("smooth", "#ff7f0e", r.smooth),
    ]
}

pub fn loss_svg(trace: &[(u64, LossReport)]) -> String {
    let stride = trace.len().div_ceil(MAX_POINTS).max(1);
    let points: Vec<&(u64, LossReport)> = trace.iter().step_by(stride).collect();
    let positive = points
        .iter()
        .flat_map(|(_, r)| series(r).map(|(_, _, v)| v))
        .filter(|v| *v > 0.0 && v.is_finite());
    let (lo, hi) = positive.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo.is_finite() {
        (lo.log10().floor(), hi.log10().ceil().max(lo.log10().floor() + 1.0))
    } else {
        (0.0, 1.0)
    };
    let first = trace.first().map_or(0, |t| t.0) as f64;
    let last = trace.last().map_or(1, |t| t.0) as f64;
    let span = (last - first).max(1.0);
    let x = |step: u64| MARGIN + (step as f64 - first) / span * (WIDTH - 2.0 * MARGIN);
    let y = |v: f64| HEIGHT - MARGIN - (v.log10() - lo) / (hi - lo) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" stroke="black" fill="none"/>"#
    );
    for decade in lo as i32..=hi as i32 {
        let yy = y(10f64.powi(decade));
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{yy:.1}" x2="{right}" y2="{yy:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">1e{decade}</text>"##,
            left - 6.0,
            yy + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{left}" y="{:.1}">step {}</text><text x="{right}" y="{:.1}" text-anchor="end">step {}</text>"#,
        bottom + 20.0,
        first,
        bottom + 20.0,
        last
    );
    for k in 0..7 {
        let (name, color, _) = series(&points[0].1)[k];
        let mut d = String::new();
        let mut pen_down = false;
        for (step, r) in &points {
            let v = series(r)[k].2;
            if v > 0.0 && v.is_finite() {
                let _ = write!(d, "{}{:.1} {:.1} ", if pen_down { "L" } else { "M" }, x(*step), y(v));
                pen_down = true;
            } else {
                pen_down = false;
            }
        }
        if !d.is_empty() {
            let _ = writeln!(svg, r#"<path d="{}" stroke="{color}" fill="none" stroke-width="1.2"/>"#, d.trim_end());
        }
        let ly = top + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ly}" x2="{:.1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{name}</text>"#,
            right - 90.0,
            right - 70.0,
            right - 64.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
