//! Static SVG line charts over aggregate results: a mean polyline with
//! circle markers, the interval as a shaded band, and a dashed zero line
//! where the plotted quantity is signed.
//!
//! Rendering is deterministic: the same rows always produce the same bytes.

use std::fmt::Write as _;

use thiserror::Error;

use crate::experiment::{AggregateRow, CiFormula, Statistic};

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("no data points to plot")]
    Empty,
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
}

/// One x position with its mean and interval bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub x: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Everything one chart needs; `zero_line` adds a dashed reference at y = 0
/// and forces the y range to include it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub zero_line: bool,
    pub points: Vec<SeriesPoint>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;

fn nice_ticks(lo: f64, hi: f64, target: usize) -> (Vec<f64>, f64) {
    let raw = (hi - lo) / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| raw <= s)
        .expect("10 * mag always covers the raw step");
    let mut t = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    while t <= hi + step * 1e-9 {
        ticks.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    (ticks, step)
}

fn fmt_tick(value: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize
    }
    .min(6);
    format!("{value:.decimals$}")
}

/// Renders one chart to a standalone SVG document.
pub fn render_chart(spec: &ChartSpec) -> Result<String, PlotError> {
    if spec.points.is_empty() {
        return Err(PlotError::Empty);
    }
    for p in &spec.points {
        if ![p.x, p.mean, p.lo, p.hi].iter().all(|v| v.is_finite()) {
            return Err(PlotError::NonFinite {
                context: format!("chart {:?}", spec.title),
            });
        }
    }
    let mut points = spec.points.clone();
    points.sort_by(|a, b| a.x.total_cmp(&b.x));

    let (mut x0, mut x1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.x), hi.max(p.x))
        });
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let (mut y0, mut y1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.lo), hi.max(p.hi))
        });
    if spec.zero_line {
        y0 = y0.min(0.0);
        y1 = y1.max(0.0);
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = (y1 - y0) * 0.05;
    y0 -= pad;
    y1 += pad;

    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT);
    let sy = |y: f64| HEIGHT - MARGIN_BOTTOM - (y - y0) / (y1 - y0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM);

    let mut svg = String::with_capacity(4096);
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\">"
    )
    .unwrap();
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    let (x_ticks, x_step) = nice_ticks(x0, x1, 6);
    let (y_ticks, y_step) = nice_ticks(y0, y1, 5);
    for &t in &y_ticks {
        let y = sy(t);
        writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>",
            MARGIN_LEFT,
            WIDTH - MARGIN_RIGHT
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"12\">{}</text>",
            MARGIN_LEFT - 8.0,
            y + 4.0,
            fmt_tick(t, y_step)
        )
        .unwrap();
    }
    for &t in &x_ticks {
        let x = sx(t);
        writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#dddddd\"/>",
            MARGIN_TOP,
            HEIGHT - MARGIN_BOTTOM
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
            HEIGHT - MARGIN_BOTTOM + 18.0,
            fmt_tick(t, x_step)
        )
        .unwrap();
    }

    // interval band: upper bound left to right, lower bound back
    let mut band = String::new();
    for p in &points {
        write!(band, "{:.2},{:.2} ", sx(p.x), sy(p.hi)).unwrap();
    }
    for p in points.iter().rev() {
        write!(band, "{:.2},{:.2} ", sx(p.x), sy(p.lo)).unwrap();
    }
    writeln!(
        svg,
        "<polygon points=\"{}\" fill=\"#9ecae6\" fill-opacity=\"0.45\"/>",
        band.trim_end()
    )
    .unwrap();

    if spec.zero_line {
        let y = sy(0.0);
        writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
             stroke=\"#888888\" stroke-dasharray=\"5 4\"/>",
            MARGIN_LEFT,
            WIDTH - MARGIN_RIGHT
        )
        .unwrap();
    }

    let mut line = String::new();
    for p in &points {
        write!(line, "{:.2},{:.2} ", sx(p.x), sy(p.mean)).unwrap();
    }
    writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f5f8b\" stroke-width=\"2\"/>",
        line.trim_end()
    )
    .unwrap();
    for p in &points {
        writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1f5f8b\"/>",
            sx(p.x),
            sy(p.mean)
        )
        .unwrap();
    }

    write!(
        svg,
        "<line x1=\"{ml:.2}\" y1=\"{mt:.2}\" x2=\"{ml:.2}\" y2=\"{mb:.2}\" stroke=\"black\"/>\n\
         <line x1=\"{ml:.2}\" y1=\"{mb:.2}\" x2=\"{mr:.2}\" y2=\"{mb:.2}\" stroke=\"black\"/>\n",
        ml = MARGIN_LEFT,
        mt = MARGIN_TOP,
        mb = HEIGHT - MARGIN_BOTTOM,
        mr = WIDTH - MARGIN_RIGHT
    )
    .unwrap();
    writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        WIDTH / 2.0,
        xml_escape(&spec.title)
    )
    .unwrap();
    writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"13\">{}</text>",
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        HEIGHT - 12.0,
        xml_escape(&spec.x_label)
    )
    .unwrap();
    writeln!(
        svg,
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"13\" \
         transform=\"rotate(-90 16 {mid:.2})\">{}</text>",
        (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
        xml_escape(&spec.y_label),
        mid = (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0
    )
    .unwrap();
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Turns aggregate rows into named charts: one per (statistic, epsilon) for
/// bias, diff, and width, and a single spread-band chart for the mean
/// calibration score (identical across epsilons, so only one is drawn).
pub fn charts_from_rows(rows: &[AggregateRow]) -> Result<Vec<(String, ChartSpec)>, PlotError> {
    if rows.is_empty() {
        return Err(PlotError::Empty);
    }
    let protocol = rows[0].protocol;
    let grid_name = protocol.grid_name();

    let mut charts: Vec<(String, ChartSpec)> = Vec::new();
    let mut seen: Vec<(Statistic, u64)> = Vec::new();
    for row in rows {
        if row.ci_formula != CiFormula::Se95 || row.statistic == Statistic::MeanAlpha {
            continue;
        }
        let key = (row.statistic, row.epsilon.to_bits());
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        let points: Vec<SeriesPoint> = rows
            .iter()
            .filter(|r| {
                r.statistic == row.statistic
                    && r.ci_formula == CiFormula::Se95
                    && r.epsilon.to_bits() == row.epsilon.to_bits()
            })
            .map(|r| SeriesPoint {
                x: r.grid as f64,
                mean: r.mean,
                lo: r.ci_low,
                hi: r.ci_high,
            })
            .collect();
        let mut spec = ChartSpec {
            title: format!(
                "{} vs {} (protocol {}, eps {})",
                row.statistic, grid_name, protocol, row.epsilon
            ),
            x_label: grid_name.to_string(),
            y_label: row.statistic.to_string(),
            zero_line: row.statistic == Statistic::Bias,
            points,
        };
        spec.points.sort_by(|a, b| a.x.total_cmp(&b.x));
        charts.push((format!("{}_eps{}.svg", row.statistic, row.epsilon), spec));
    }

    if let Some(first) = rows
        .iter()
        .find(|r| r.statistic == Statistic::MeanAlpha && r.ci_formula == CiFormula::Sd2)
    {
        let points: Vec<SeriesPoint> = rows
            .iter()
            .filter(|r| {
                r.statistic == Statistic::MeanAlpha
                    && r.ci_formula == CiFormula::Sd2
                    && r.epsilon.to_bits() == first.epsilon.to_bits()
            })
            .map(|r| SeriesPoint {
                x: r.grid as f64,
                mean: r.mean,
                lo: r.ci_low,
                hi: r.ci_high,
            })
            .collect();
        let mut spec = ChartSpec {
            title: format!(
                "mean calibration score vs {grid_name} (protocol {protocol}, band: mean +- 2 sd)"
            ),
            x_label: grid_name.to_string(),
            y_label: "mean_alpha".to_string(),
            zero_line: false,
            points,
        };
        spec.points.sort_by(|a, b| a.x.total_cmp(&b.x));
        charts.push(("mean_alpha.svg".to_string(), spec));
    }

    if charts.is_empty() {
        return Err(PlotError::Empty);
    }
    Ok(charts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::Protocol;

    fn spec() -> ChartSpec {
        ChartSpec {
            title: "bias vs train_size".into(),
            x_label: "train_size".into(),
            y_label: "bias".into(),
            zero_line: true,
            points: vec![
                SeriesPoint {
                    x: 30.0,
                    mean: 0.02,
                    lo: -0.01,
                    hi: 0.05,
                },
                SeriesPoint {
                    x: 10.0,
                    mean: -0.03,
                    lo: -0.06,
                    hi: 0.0,
                },
            ],
        }
    }

    #[test]
    fn tick_placement_uses_one_two_five_steps() {
        let (ticks, step) = nice_ticks(0.0, 10.0, 5);
        assert_eq!(step, 2.0);
        assert_eq!(ticks, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);

        let (ticks, step) = nice_ticks(0.13, 0.87, 5);
        assert!((step - 0.2).abs() < 1e-12);
        assert_eq!(ticks.len(), 4);
        assert!((ticks[0] - 0.2).abs() < 1e-12);
        assert!((ticks[3] - 0.8).abs() < 1e-12);

        let (ticks, step) = nice_ticks(-0.05, 0.05, 5);
        assert!((step - 0.02).abs() < 1e-12);
        assert!(ticks.contains(&0.0));
    }

    #[test]
    fn tick_labels_match_step_precision() {
        assert_eq!(fmt_tick(4.0, 2.0), "4");
        assert_eq!(fmt_tick(0.4, 0.2), "0.4");
        assert_eq!(fmt_tick(0.05, 0.05), "0.05");
        assert_eq!(fmt_tick(0.0, 0.02), "0.00");
    }

    #[test]
    fn chart_contains_band_line_markers_and_zero_reference() {
        let svg = render_chart(&spec()).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polygon").count(), 1);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("bias vs train_size"));
    }

    #[test]
    fn rendering_is_deterministic() {
        assert_eq!(render_chart(&spec()).unwrap(), render_chart(&spec()).unwrap());
    }

    #[test]
    fn degenerate_and_invalid_inputs_are_rejected() {
        let empty = ChartSpec {
            points: Vec::new(),
            ..spec()
        };
        assert!(matches!(render_chart(&empty).unwrap_err(), PlotError::Empty));

        let mut bad = spec();
        bad.points[0].mean = f64::NAN;
        assert!(matches!(
            render_chart(&bad).unwrap_err(),
            PlotError::NonFinite { .. }
        ));
    }

    #[test]
    fn single_point_chart_still_renders() {
        let mut one = spec();
        one.points.truncate(1);
        let svg = render_chart(&one).unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
    }

    fn agg_row(
        grid: usize,
        epsilon: f64,
        statistic: Statistic,
        mean: f64,
        ci_formula: CiFormula,
    ) -> AggregateRow {
        AggregateRow {
            protocol: Protocol::A,
            grid,
            epsilon,
            statistic,
            mean,
            ci_low: mean - 0.1,
            ci_high: mean + 0.1,
            n_runs: 5,
            ci_formula,
        }
    }

    #[test]
    fn rows_become_one_chart_per_statistic_and_epsilon() {
        let mut rows = Vec::new();
        for &grid in &[30, 10] {
            for &eps in &[0.2, 0.05] {
                rows.push(agg_row(grid, eps, Statistic::Bias, 0.01, CiFormula::Se95));
                rows.push(agg_row(grid, eps, Statistic::Diff, 0.02, CiFormula::Se95));
                rows.push(agg_row(grid, eps, Statistic::Width, 1.5, CiFormula::Se95));
                rows.push(agg_row(grid, eps, Statistic::MeanAlpha, 0.6, CiFormula::Se95));
                rows.push(agg_row(grid, eps, Statistic::MeanAlpha, 0.6, CiFormula::Sd2));
            }
        }
        let charts = charts_from_rows(&rows).unwrap();
        let names: Vec<&str> = charts.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "bias_eps0.2.svg",
                "diff_eps0.2.svg",
                "width_eps0.2.svg",
                "bias_eps0.05.svg",
                "diff_eps0.05.svg",
                "width_eps0.05.svg",
                "mean_alpha.svg",
            ]
        );
        for (name, chart) in &charts {
            assert_eq!(chart.points.len(), 2, "chart {name}");
            assert!(chart.points[0].x < chart.points[1].x, "chart {name}");
            assert_eq!(chart.zero_line, name.starts_with("bias"));
        }
        let mean_alpha = &charts.last().unwrap().1;
        assert!(mean_alpha.title.contains("2 sd"));
    }

    #[test]
    fn empty_row_set_is_an_error() {
        assert!(matches!(charts_from_rows(&[]).unwrap_err(), PlotError::Empty));
    }
}
