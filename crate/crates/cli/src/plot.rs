//! Standalone SVG reward-curve plots from metrics CSVs.
//!
//! The plotter consumes parsed CSV rows only; the single transformation it
//! applies is the trailing moving average used for display smoothing.

use searchrl_core::metrics::{trailing_average, MetricsRow};
use std::fmt::Write as _;

pub struct Series {
    pub label: String,
    pub rows: Vec<MetricsRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotColumn {
    MeanReward,
    EvalReward,
}

impl PlotColumn {
    pub fn parse(s: &str) -> Option<PlotColumn> {
        match s {
            "mean_reward" => Some(PlotColumn::MeanReward),
            "eval_reward" => Some(PlotColumn::EvalReward),
            _ => None,
        }
    }
}

const WIDTH: f64 = 820.0;
const HEIGHT: f64 = 460.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 45.0;

const PALETTE: [&str; 8] = [
    "#c0392b", "#8e44ad", "#27ae60", "#2471a3", "#d68910", "#148f77", "#7b241c", "#5d6d7e",
];

/// Renders one smoothed line per series. Reward axes span [0, 1]; the x axis
/// spans the largest step across series.
pub fn render_svg(series: &[Series], column: PlotColumn, window: usize) -> String {
    let max_step = series
        .iter()
        .flat_map(|s| s.rows.iter().map(|r| r.step))
        .max()
        .unwrap_or(1)
        .max(1) as f64;

    let x_of = |step: f64| MARGIN_LEFT + (step / max_step) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT);
    let y_of = |v: f64| {
        let clamped = v.clamp(0.0, 1.0);
        HEIGHT - MARGIN_BOTTOM - clamped * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="monospace" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    // Axes and gridlines.
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let y = y_of(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
            MARGIN_LEFT,
            WIDTH - MARGIN_RIGHT
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            MARGIN_LEFT - 8.0,
            y + 4.0
        );
    }
    for i in 0..=4 {
        let step = max_step * i as f64 / 4.0;
        let x = x_of(step);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            HEIGHT - MARGIN_BOTTOM + 18.0,
            step.round() as u64
        );
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{l:.1}" y1="{t:.1}" x2="{l:.1}" y2="{b:.1}" stroke="black"/>"#,
        l = MARGIN_LEFT,
        t = MARGIN_TOP,
        b = HEIGHT - MARGIN_BOTTOM
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{l:.1}" y1="{b:.1}" x2="{r:.1}" y2="{b:.1}" stroke="black"/>"#,
        l = MARGIN_LEFT,
        r = WIDTH - MARGIN_RIGHT,
        b = HEIGHT - MARGIN_BOTTOM
    );
    let axis_label = match column {
        PlotColumn::MeanReward => format!("training reward (trailing {window}-step mean)"),
        PlotColumn::EvalReward => format!("held-out reward (trailing {window}-point mean)"),
    };
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}">{axis_label}</text>"#,
        MARGIN_LEFT,
        MARGIN_TOP - 6.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">step</text>"#,
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        HEIGHT - 8.0
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<(f64, f64)> = match column {
            PlotColumn::MeanReward => s
                .rows
                .iter()
                .map(|r| (r.step as f64, r.mean_reward))
                .collect(),
            PlotColumn::EvalReward => s
                .rows
                .iter()
                .filter_map(|r| r.eval_reward.map(|v| (r.step as f64, v)))
                .collect(),
        };
        if points.is_empty() {
            continue;
        }
        let values: Vec<f64> = points.iter().map(|p| p.1).collect();
        let smoothed = trailing_average(&values, window);
        let path: Vec<String> = points
            .iter()
            .zip(&smoothed)
            .map(|((step, _), v)| format!("{:.1},{:.1}", x_of(*step), y_of(*v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.6" points="{}"/>"#,
            path.join(" ")
        );
        let legend_y = MARGIN_TOP + 18.0 * i as f64 + 10.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{x1:.1}" y1="{legend_y:.1}" x2="{x2:.1}" y2="{legend_y:.1}" stroke="{color}" stroke-width="3"/>"#,
            x1 = WIDTH - MARGIN_RIGHT + 10.0,
            x2 = WIDTH - MARGIN_RIGHT + 34.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            WIDTH - MARGIN_RIGHT + 40.0,
            legend_y + 4.0,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}
