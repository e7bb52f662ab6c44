//! Log-scale convergence charts rendered to SVG.

use std::path::Path;

use plotters::prelude::*;

use crate::trace::Trace;

/// Floor applied to suboptimalities before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-16;

/// Test-risk improvement below which the statistical accuracy is reached.
pub const STAT_IMPROVEMENT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum XAxis {
    #[default]
    Epochs,
    Seconds,
}

#[derive(Debug, Clone, Default)]
pub struct PlotOptions {
    pub x_axis: XAxis,
    /// Draw a dotted horizontal line per series at its statistical accuracy.
    pub stat_line: bool,
    pub title: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("no series to plot")]
    NoSeries,
    #[error("trace `{0}` has no records")]
    EmptyTrace(String),
    #[error("rendering failed: {0}")]
    Render(String),
}

/// Suboptimality at the first record whose test risk improved on the
/// previous one by less than [`STAT_IMPROVEMENT`].
pub fn statistical_accuracy(trace: &Trace) -> Option<f64> {
    trace
        .records
        .windows(2)
        .find(|w| w[0].test_risk - w[1].test_risk < STAT_IMPROVEMENT)
        .map(|w| w[1].subopt)
}

pub fn clip(v: f64) -> f64 {
    if v.is_nan() || v <= LOG_FLOOR {
        LOG_FLOOR
    } else {
        v
    }
}

fn render_err<E: std::fmt::Display>(e: E) -> PlotError {
    PlotError::Render(e.to_string())
}

/// Render `(label, trace)` pairs into one chart at `out`.
pub fn plot_traces(series: &[(String, Trace)], out: &Path, opts: &PlotOptions) -> Result<(), PlotError> {
    if series.is_empty() {
        return Err(PlotError::NoSeries);
    }
    if let Some((name, _)) = series.iter().find(|(_, t)| t.records.is_empty()) {
        return Err(PlotError::EmptyTrace(name.clone()));
    }
    let x_of = |r: &crate::trace::TraceRecord| match opts.x_axis {
        XAxis::Epochs => r.epoch,
        XAxis::Seconds => r.time_s,
    };
    let points: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|(_, t)| t.records.iter().map(|r| (x_of(r), clip(r.subopt))).collect())
        .collect();
    let all = points.iter().flatten();
    let x_max = all.clone().map(|p| p.0).fold(0.0, f64::max).max(1e-9);
    let y_min = all.clone().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y_max = all.map(|p| p.1).fold(LOG_FLOOR, f64::max);
    let (y_lo, y_hi) = (y_min / 2.0, (y_max * 2.0).max(y_min * 10.0));

    let root = SVGBackend::new(out, (800, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(render_err)?;
    let x_label = match opts.x_axis {
        XAxis::Epochs => "effective epochs",
        XAxis::Seconds => "seconds",
    };
    let mut chart = ChartBuilder::on(&root)
        .caption(opts.title.as_deref().unwrap_or(""), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0.0..x_max * 1.02, (y_lo..y_hi).log_scale())
        .map_err(render_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc("suboptimality")
        .y_label_formatter(&|v| format!("{v:.0e}"))
        .draw()
        .map_err(render_err)?;

    for (k, ((label, trace), pts)) in series.iter().zip(&points).enumerate() {
        let color = Palette99::pick(k).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(render_err)?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        if opts.stat_line {
            if let Some(level) = statistical_accuracy(trace) {
                let y = clip(level);
                chart
                    .draw_series(DashedLineSeries::new(
                        [(0.0, y), (x_max * 1.02, y)],
                        2,
                        4,
                        color.stroke_width(1),
                    ))
                    .map_err(render_err)?;
            }
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(render_err)?;
    root.present().map_err(render_err)?;
    Ok(())
}
