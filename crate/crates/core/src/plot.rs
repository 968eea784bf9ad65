//! Minimal static SVG line plots.
//!
//! Just enough to render metric curves: fixed canvas, two axes, one
//! polyline per series, a legend. Output is a pure function of the input
//! values with fixed-precision coordinates, so identical curves produce
//! byte-identical files.

use std::fmt::Write;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 45.0;
const MARGIN_BOTTOM: f64 = 60.0;

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];

pub struct Series<'a> {
    pub label: &'a str,
    pub values: &'a [f64],
}

/// Renders series sharing an x axis; y is fixed to [0, 1] (metric scores).
pub fn render_curves(title: &str, x_label: &str, y_label: &str, xs: &[f64], series: &[Series]) -> String {
    assert!(!xs.is_empty(), "empty curve");
    let x_min = xs.first().copied().unwrap();
    let x_max = xs.last().copied().unwrap().max(x_min + 1e-9);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let py = |y: f64| MARGIN_TOP + (1.0 - y.clamp(0.0, 1.0)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    // Axes.
    let _ = writeln!(
        svg,
        r#"<line x1="{l:.2}" y1="{t:.2}" x2="{l:.2}" y2="{b:.2}" stroke="black"/>"#,
        l = MARGIN_LEFT,
        t = MARGIN_TOP,
        b = HEIGHT - MARGIN_BOTTOM
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{l:.2}" y1="{b:.2}" x2="{r:.2}" y2="{b:.2}" stroke="black"/>"#,
        l = MARGIN_LEFT,
        r = WIDTH - MARGIN_RIGHT,
        b = HEIGHT - MARGIN_BOTTOM
    );

    // Y ticks every 0.25.
    for k in 0..=4 {
        let y = k as f64 * 0.25;
        let yy = py(y);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#cccccc"/>"##,
            MARGIN_LEFT,
            WIDTH - MARGIN_RIGHT
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="12">{y:.2}</text>"#,
            MARGIN_LEFT - 8.0,
            yy + 4.0
        );
    }

    // X ticks on at most 9 positions.
    let stride = (xs.len() / 9).max(1);
    for (i, &x) in xs.iter().enumerate() {
        if i % stride != 0 && i != xs.len() - 1 {
            continue;
        }
        let xx = px(x);
        let _ = writeln!(
            svg,
            r#"<line x1="{xx:.2}" y1="{b:.2}" x2="{xx:.2}" y2="{b2:.2}" stroke="black"/>"#,
            b = HEIGHT - MARGIN_BOTTOM,
            b2 = HEIGHT - MARGIN_BOTTOM + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{xx:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="12">{x}</text>"#,
            HEIGHT - MARGIN_BOTTOM + 20.0
        );
    }

    // Axis labels.
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 20 {mid:.2})">{}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label),
        mid = MARGIN_TOP + plot_h / 2.0
    );

    // Series.
    for (si, s) in series.iter().enumerate() {
        assert_eq!(s.values.len(), xs.len(), "series length mismatch");
        let color = COLORS[si % COLORS.len()];
        let mut path = String::new();
        for (&x, &y) in xs.iter().zip(s.values) {
            let _ = write!(path, "{:.2},{:.2} ", px(x), py(y));
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.trim_end()
        );
        // Legend entry.
        let lx = WIDTH - MARGIN_RIGHT - 150.0;
        let ly = MARGIN_TOP + 10.0 + 20.0 * si as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 24.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 30.0,
            ly + 4.0,
            escape(s.label)
        );
    }

    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
