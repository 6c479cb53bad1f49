//! Minimal self-contained SVG line plots for traversal curves and sweep
//! summaries. Output is deterministic text: same input, same bytes.

use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("plot has no series or no points")]
    Empty,
    #[error("non-finite coordinate in series {series}")]
    NonFinite { series: String },
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct PlotConfig {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub width: u32,
    pub height: u32,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            width: 640,
            height: 420,
        }
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 18.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 48.0;
const N_TICKS: usize = 5;

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        return format!("{v:.2e}");
    }
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        // Degenerate axis: widen symmetrically so the line sits mid-plot.
        let pad = if lo == 0.0 { 0.5 } else { lo.abs() * 0.5 };
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

/// Renders one or more labeled polylines with axes, ticks and a legend.
pub fn line_plot(cfg: &PlotConfig, series: &[Series]) -> Result<String, PlotError> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(PlotError::Empty);
    }
    for s in series {
        if s.points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(PlotError::NonFinite { series: s.label.clone() });
        }
    }
    let w = cfg.width as f64;
    let h = cfg.height as f64;
    let (x0, x1) = span(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = span(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * (w - MARGIN_L - MARGIN_R);
    let py = |y: f64| h - MARGIN_B - (y - y0) / (y1 - y0) * (h - MARGIN_T - MARGIN_B);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\" \
         font-family=\"sans-serif\" font-size=\"12\">",
        cfg.width, cfg.height
    );
    let _ = writeln!(out, "<rect width=\"{}\" height=\"{}\" fill=\"white\"/>", cfg.width, cfg.height);
    if !cfg.title.is_empty() {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
            w / 2.0,
            escape(&cfg.title)
        );
    }

    // Axes box and ticks.
    let _ = writeln!(
        out,
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{}\" height=\"{}\" \
         fill=\"none\" stroke=\"#333\"/>",
        w - MARGIN_L - MARGIN_R,
        h - MARGIN_T - MARGIN_B
    );
    for k in 0..N_TICKS {
        let f = k as f64 / (N_TICKS - 1) as f64;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let xp = px(xv);
        let yp = py(yv);
        let _ = writeln!(
            out,
            "<line x1=\"{xp:.2}\" y1=\"{}\" x2=\"{xp:.2}\" y2=\"{}\" stroke=\"#333\"/>",
            h - MARGIN_B,
            h - MARGIN_B + 4.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{xp:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            h - MARGIN_B + 17.0,
            fmt_num(xv)
        );
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{yp:.2}\" x2=\"{MARGIN_L}\" y2=\"{yp:.2}\" stroke=\"#333\"/>",
            MARGIN_L - 4.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            MARGIN_L - 7.0,
            yp + 4.0,
            fmt_num(yv)
        );
    }
    if !cfg.x_label.is_empty() {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            (MARGIN_L + w - MARGIN_R) / 2.0,
            h - 10.0,
            escape(&cfg.x_label)
        );
    }
    if !cfg.y_label.is_empty() {
        let _ = writeln!(
            out,
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
            (MARGIN_T + h - MARGIN_B) / 2.0,
            (MARGIN_T + h - MARGIN_B) / 2.0,
            escape(&cfg.y_label)
        );
    }

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> =
            s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(
                out,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.2\" fill=\"{color}\"/>",
                px(x),
                py(y)
            );
        }
        if !s.label.is_empty() {
            let ly = MARGIN_T + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                out,
                "<line x1=\"{}\" y1=\"{ly:.2}\" x2=\"{}\" y2=\"{ly:.2}\" \
                 stroke=\"{color}\" stroke-width=\"2\"/>",
                MARGIN_L + 8.0,
                MARGIN_L + 28.0
            );
            let _ = writeln!(
                out,
                "<text x=\"{}\" y=\"{:.2}\">{}</text>",
                MARGIN_L + 33.0,
                ly + 4.0,
                escape(&s.label)
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_series() -> Vec<Series> {
        vec![
            Series {
                label: "a".into(),
                points: (0..9).map(|i| (0.1 * (i + 1) as f64, 1.0 + 0.3 * i as f64)).collect(),
            },
            Series { label: "b".into(), points: vec![(0.1, 2.0), (0.5, 1.0), (0.9, 2.5)] },
        ]
    }

    #[test]
    fn renders_one_polyline_per_series() {
        let svg = line_plot(&PlotConfig::default(), &demo_series()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn output_is_deterministic() {
        let a = line_plot(&PlotConfig::default(), &demo_series()).unwrap();
        let b = line_plot(&PlotConfig::default(), &demo_series()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_empty_and_non_finite_input() {
        assert!(matches!(line_plot(&PlotConfig::default(), &[]), Err(PlotError::Empty)));
        let bad = vec![Series { label: "x".into(), points: vec![(0.0, f64::NAN)] }];
        assert!(matches!(
            line_plot(&PlotConfig::default(), &bad),
            Err(PlotError::NonFinite { .. })
        ));
    }

    #[test]
    fn degenerate_axes_still_render() {
        let flat = vec![Series { label: "flat".into(), points: vec![(1.0, 2.0), (2.0, 2.0)] }];
        let svg = line_plot(&PlotConfig::default(), &flat).unwrap();
        assert!(svg.contains("<polyline"));
    }

    #[test]
    fn labels_are_escaped() {
        let cfg = PlotConfig { title: "a<b & c".into(), ..PlotConfig::default() };
        let svg = line_plot(&cfg, &demo_series()).unwrap();
        assert!(svg.contains("a&lt;b &amp; c"));
    }
}
