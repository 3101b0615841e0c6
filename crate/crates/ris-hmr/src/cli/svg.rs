//! Minimal self-contained SVG line charts (no external renderer).
//!
//! Output is a fixed 800 x 600 canvas with axes, tick labels, one polyline
//! plus circular markers per curve, and a legend. Rendering is a pure
//! function of the input, so charts are byte-reproducible.

use std::fmt::Write;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 50.0;
const MARGIN_BOTTOM: f64 = 70.0;
const TICKS: usize = 5;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// One labelled line; points are (x, y) in data coordinates.
#[derive(Debug, Clone)]
pub struct Curve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn data_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        // Degenerate span: pad symmetrically so the line sits mid-plot.
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Renders curves into a complete SVG document.
pub fn render_line_chart(title: &str, x_label: &str, y_label: &str, curves: &[Curve]) -> String {
    let (x0, x1) = data_range(curves.iter().flat_map(|c| c.points.iter().map(|p| p.0)));
    let (y0, y1) = data_range(curves.iter().flat_map(|c| c.points.iter().map(|p| p.1)));
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| MARGIN_TOP + (y1 - y) / (y1 - y0) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">"
    );
    let _ = writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"30\" text-anchor=\"middle\" font-size=\"18\">{}</text>",
        MARGIN_LEFT + plot_w / 2.0,
        title
    );

    // Gridlines and tick labels.
    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let xp = sx(xv);
        let yp = sy(yv);
        let _ = writeln!(
            out,
            "<line x1=\"{xp:.1}\" y1=\"{:.1}\" x2=\"{xp:.1}\" y2=\"{:.1}\" \
             stroke=\"#dddddd\"/>",
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        );
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{yp:.1}\" x2=\"{:.1}\" y2=\"{yp:.1}\" \
             stroke=\"#dddddd\"/>",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        );
        let _ = writeln!(
            out,
            "<text x=\"{xp:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\">\
             {xv:.1}</text>",
            MARGIN_TOP + plot_h + 20.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"12\">\
             {yv:.1}</text>",
            MARGIN_LEFT - 8.0,
            yp + 4.0
        );
    }

    // Axes frame.
    let _ = writeln!(
        out,
        "<rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{plot_w:.1}\" \
         height=\"{plot_h:.1}\" fill=\"none\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 20.0,
        x_label
    );
    let _ = writeln!(
        out,
        "<text x=\"22\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"14\" \
         transform=\"rotate(-90 22 {:.1})\">{}</text>",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        y_label
    );

    // Curves and legend.
    for (ci, curve) in curves.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        if curve.points.len() > 1 {
            let pts: Vec<String> = curve
                .points
                .iter()
                .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                out,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                 stroke-width=\"2\"/>",
                pts.join(" ")
            );
        }
        for &(x, y) in &curve.points {
            let _ = writeln!(
                out,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"{color}\"/>",
                sx(x),
                sy(y)
            );
        }
        let ly = MARGIN_TOP + 16.0 + 20.0 * ci as f64;
        let lx = MARGIN_LEFT + plot_w - 170.0;
        let _ = writeln!(
            out,
            "<line x1=\"{lx:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>",
            ly - 4.0,
            lx + 24.0,
            ly - 4.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{ly:.1}\" font-size=\"12\">{}</text>",
            lx + 30.0,
            curve.label
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_curves() -> Vec<Curve> {
        vec![
            Curve {
                label: "one".into(),
                points: vec![(0.0, -10.0), (10.0, -20.0), (20.0, -32.0)],
            },
            Curve {
                label: "two".into(),
                points: vec![(0.0, -5.0), (10.0, -9.0), (20.0, -15.0)],
            },
        ]
    }

    #[test]
    fn chart_contains_expected_elements() {
        let svg = render_line_chart("title", "x", "y", &sample_curves());
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 6);
        assert!(svg.contains("width=\"800\""));
        assert!(svg.contains("height=\"600\""));
        assert!(svg.contains(">title</text>"));
        assert!(svg.contains(">one</text>"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_line_chart("t", "x", "y", &sample_curves());
        let b = render_line_chart("t", "x", "y", &sample_curves());
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_ranges_do_not_panic() {
        let flat = vec![Curve {
            label: "flat".into(),
            points: vec![(1.0, 2.0), (1.0, 2.0)],
        }];
        let svg = render_line_chart("t", "x", "y", &flat);
        assert!(svg.contains("<circle"));
        let empty: Vec<Curve> = Vec::new();
        let svg = render_line_chart("t", "x", "y", &empty);
        assert!(svg.contains("</svg>"));
    }
}
