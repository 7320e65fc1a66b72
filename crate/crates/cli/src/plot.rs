//! SVG figures: mean QWK with a ±1 std band per setting, and the cue
//! distance vs predicted score scatter coloured by absolute error.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use plotters::prelude::*;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
struct AggregateRecord {
    setting: String,
    n_train: Option<f64>,
    prompt_count: Option<f64>,
    mean_qwk: f64,
    std_qwk: f64,
}

#[derive(Debug, Deserialize)]
struct ScatterRecord {
    cue_distance: f64,
    pred_norm: f64,
    abs_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum XAxis {
    NTrain,
    PromptCount,
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// Series (setting -> sorted (x, mean, std)) read from an aggregate CSV.
fn read_series(path: &Path, x_axis: Option<XAxis>) -> Result<(XAxis, BTreeMap<String, Vec<(f64, f64, f64)>>)> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let records: Vec<AggregateRecord> = reader.deserialize().collect::<Result<_, _>>()?;
    if records.is_empty() {
        bail!("{} has no rows", path.display());
    }
    let axis = x_axis.unwrap_or(if records.iter().any(|r| r.prompt_count.is_some()) {
        XAxis::PromptCount
    } else {
        XAxis::NTrain
    });
    let mut series: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for r in records {
        let x = match axis {
            XAxis::NTrain => r.n_train,
            XAxis::PromptCount => r.prompt_count,
        };
        let Some(x) = x else {
            bail!("row for {} lacks the {axis:?} column", r.setting);
        };
        series.entry(r.setting).or_default().push((x, r.mean_qwk, r.std_qwk));
    }
    for points in series.values_mut() {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok((axis, series))
}

/// Line chart with error bands, one series per setting, log-scaled x.
pub fn line_chart(csv_path: &Path, out: &Path, x_axis: Option<XAxis>, title: &str) -> Result<usize> {
    let (axis, series) = read_series(csv_path, x_axis)?;
    let xs = series.values().flatten().map(|p| p.0);
    let (x_min, x_max) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if x_min <= 0.0 {
        bail!("x values must be positive for a log axis");
    }
    let y_lo = series.values().flatten().map(|p| p.1 - p.2).fold(0.0, f64::min);
    let y_hi = series.values().flatten().map(|p| p.1 + p.2).fold(1.0, f64::max);

    let root = SVGBackend::new(out, (800, 520)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(56)
        .build_cartesian_2d((x_min * 0.8..x_max * 1.25).log_scale(), y_lo..y_hi)?;
    chart
        .configure_mesh()
        .x_desc(match axis {
            XAxis::NTrain => "finetuning answers",
            XAxis::PromptCount => "pre-finetuning prompts",
        })
        .y_desc("QWK")
        .draw()?;

    for (i, (setting, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut band: Vec<(f64, f64)> = points.iter().map(|&(x, m, s)| (x, m + s)).collect();
        band.extend(points.iter().rev().map(|&(x, m, s)| (x, m - s)));
        chart.draw_series(std::iter::once(Polygon::new(band, color.mix(0.15).filled())))?;
        chart
            .draw_series(LineSeries::new(points.iter().map(|&(x, m, _)| (x, m)), color.stroke_width(2)))?
            .label(setting.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        chart.draw_series(points.iter().map(|&(x, m, _)| Circle::new((x, m), 3, color.filled())))?;
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(series.len())
}

/// Blue (small error) to red (large error).
fn error_color(err: f64, max_err: f64) -> RGBColor {
    let t = if max_err > 0.0 { (err / max_err).clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: u8, b: u8| (f64::from(a) + t * (f64::from(b) - f64::from(a))).round() as u8;
    RGBColor(lerp(33, 215), lerp(102, 48), lerp(172, 39))
}

/// Cue distance (x) vs predicted normalized score (y), points coloured by
/// absolute error.
pub fn scatter(csv_path: &Path, out: &Path, title: &str) -> Result<usize> {
    let mut reader = csv::Reader::from_path(csv_path).with_context(|| format!("reading {}", csv_path.display()))?;
    let rows: Vec<ScatterRecord> = reader.deserialize().collect::<Result<_, _>>()?;
    if rows.is_empty() {
        bail!("{} has no rows", csv_path.display());
    }
    let max_err = rows.iter().map(|r| r.abs_error).fold(0.0, f64::max);
    let root = SVGBackend::new(out, (640, 560)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..1.0, 0.0..1.0)?;
    chart
        .configure_mesh()
        .x_desc("normalized edit distance (cue vs key phrases)")
        .y_desc("predicted score")
        .draw()?;
    chart.draw_series(
        rows.iter()
            .map(|r| Circle::new((r.cue_distance, r.pred_norm), 3, error_color(r.abs_error, max_err).filled())),
    )?;
    root.present()?;
    Ok(rows.len())
}
