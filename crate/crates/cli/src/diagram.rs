//! Self-contained SVG reliability diagrams.
//!
//! Conventions: unit square with the diagonal as reference, a red kernel
//! regression line, 15-bin confidence histograms split by outcome along the
//! bottom, a black cross at (mean confidence, mean accuracy), and the
//! SmoothECE value printed in the corner. Output is plain SVG text with
//! fixed-precision coordinates, so identical reports render byte-identical
//! files.

use std::fmt::Write as _;

use semcal_core::calibmetrics::CalibrationReport;

const WIDTH: f64 = 560.0;
const HEIGHT: f64 = 560.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 42.0;
const PLOT: f64 = 450.0;
const HIST_HEIGHT: f64 = 110.0;

fn x_at(value: f64) -> f64 {
    LEFT + value * PLOT
}

fn y_at(value: f64) -> f64 {
    TOP + (1.0 - value) * PLOT
}

fn fmt(value: f64) -> String {
    format!("{value:.2}")
}

/// Render a calibration report as an SVG document.
pub fn render(report: &CalibrationReport) -> String {
    let mut svg = String::with_capacity(16 * 1024);
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"Helvetica, Arial, sans-serif\">"
    );
    let _ = writeln!(
        svg,
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>"
    );

    // Plot frame and gridlines.
    let _ = writeln!(
        svg,
        "<rect x=\"{}\" y=\"{}\" width=\"{PLOT}\" height=\"{PLOT}\" fill=\"none\" \
         stroke=\"#444444\" stroke-width=\"1\"/>",
        fmt(LEFT),
        fmt(TOP)
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let label = format!("{v:.2}");
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\" stroke-width=\"1\"/>",
            fmt(x_at(v)),
            fmt(y_at(0.0)),
            fmt(x_at(v)),
            fmt(y_at(1.0))
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\" stroke-width=\"1\"/>",
            fmt(x_at(0.0)),
            fmt(y_at(v)),
            fmt(x_at(1.0)),
            fmt(y_at(v))
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" fill=\"#333333\">{label}</text>",
            fmt(x_at(v)),
            fmt(y_at(0.0) + 20.0)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"end\" fill=\"#333333\">{label}</text>",
            fmt(x_at(0.0) - 8.0),
            fmt(y_at(v) + 4.0)
        );
    }

    // Diagonal reference.
    let _ = writeln!(
        svg,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#999999\" stroke-width=\"1.2\" \
         stroke-dasharray=\"6 5\"/>",
        fmt(x_at(0.0)),
        fmt(y_at(0.0)),
        fmt(x_at(1.0)),
        fmt(y_at(1.0))
    );

    // Split histograms along the bottom of the plot.
    let bins = report.histogram_correct.len();
    let peak = report
        .histogram_correct
        .iter()
        .chain(&report.histogram_incorrect)
        .copied()
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let bar_width = PLOT / bins as f64;
    for (counts, fill) in [
        (&report.histogram_incorrect, "#d9d9d9"),
        (&report.histogram_correct, "#9bb7d4"),
    ] {
        for (i, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let height = HIST_HEIGHT * count as f64 / peak;
            let _ = writeln!(
                svg,
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\" \
                 fill-opacity=\"0.75\"/>",
                fmt(LEFT + i as f64 * bar_width),
                fmt(y_at(0.0) - height),
                fmt(bar_width),
                fmt(height)
            );
        }
    }

    // Kernel regression line.
    let n = report.regression_curve.len();
    if n > 1 {
        let mut points = String::new();
        for (i, &value) in report.regression_curve.iter().enumerate() {
            let t = i as f64 / (n - 1) as f64;
            if i > 0 {
                points.push(' ');
            }
            let _ = write!(points, "{},{}", fmt(x_at(t)), fmt(y_at(value.clamp(0.0, 1.0))));
        }
        let _ = writeln!(
            svg,
            "<polyline points=\"{points}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2.4\"/>"
        );
    }

    // Mean-point cross.
    let cx = x_at(report.mean_confidence);
    let cy = y_at(report.mean_accuracy);
    for (dx1, dy1, dx2, dy2) in [(-8.0, 0.0, 8.0, 0.0), (0.0, -8.0, 0.0, 8.0)] {
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000000\" stroke-width=\"2.4\"/>",
            fmt(cx + dx1),
            fmt(cy + dy1),
            fmt(cx + dx2),
            fmt(cy + dy2)
        );
    }

    // Annotations.
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"16\" fill=\"#000000\">smECE = {:.4}</text>",
        fmt(LEFT + 10.0),
        fmt(TOP + 24.0),
        report.smece
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\" fill=\"#333333\">confidence</text>",
        fmt(LEFT + PLOT / 2.0),
        fmt(HEIGHT - 14.0)
    );
    let _ = writeln!(
        svg,
        "<text x=\"18\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\" fill=\"#333333\" \
         transform=\"rotate(-90 18 {})\">accuracy</text>",
        fmt(TOP + PLOT / 2.0),
        fmt(TOP + PLOT / 2.0)
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use semcal_core::calibmetrics::{reliability_curve, PredictionOutcomePair, DEFAULT_SIGMA};

    fn sample_report() -> CalibrationReport {
        let pairs = vec![
            PredictionOutcomePair::new(0.8, true, 0.5).unwrap(),
            PredictionOutcomePair::new(0.8, false, 0.3).unwrap(),
            PredictionOutcomePair::new(0.3, false, 0.2).unwrap(),
        ];
        reliability_curve(&pairs, DEFAULT_SIGMA).unwrap()
    }

    #[test]
    fn rendering_is_deterministic() {
        let report = sample_report();
        assert_eq!(render(&report), render(&report));
    }

    #[test]
    fn cross_lands_at_the_mean_point() {
        let report = sample_report();
        let svg = render(&report);
        let cx = x_at(report.mean_confidence);
        let cy = y_at(report.mean_accuracy);
        assert!(svg.contains(&format!("x1=\"{}\"", fmt(cx - 8.0))));
        assert!(svg.contains(&format!("y1=\"{}\"", fmt(cy - 8.0))));
    }

    #[test]
    fn document_is_self_contained() {
        let svg = render(&sample_report());
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("href"));
        assert!(svg.contains("smECE ="));
    }
}
