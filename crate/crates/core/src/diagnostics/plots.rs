//! SVG figures. Axes that span decades are drawn on log10 values.

use std::path::Path;

use plotters::prelude::*;

use crate::extremes::{EmpiricalLevels, ReturnLevelCurve};
use crate::{Error, Result};

const SIZE: (u32, u32) = (720, 480);
const PALETTE: [RGBColor; 7] = [
    RGBColor(0, 0, 0),
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(140, 86, 75),
];

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

fn color(i: usize) -> RGBColor {
    PALETTE[i % PALETTE.len()]
}

fn bounds(points: impl Iterator<Item = (f64, f64)>) -> Option<((f64, f64), (f64, f64))> {
    let mut b: Option<((f64, f64), (f64, f64))> = None;
    for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        b = Some(match b {
            None => ((x, x), (y, y)),
            Some(((x0, x1), (y0, y1))) => ((x0.min(x), x1.max(x)), (y0.min(y), y1.max(y))),
        });
    }
    b.map(|((x0, x1), (y0, y1))| {
        let pad = |lo: f64, hi: f64| {
            let d = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
            (lo - d, hi + d)
        };
        (pad(x0, x1), pad(y0, y1))
    })
}

/// Line chart of several named series.
pub fn line_chart(
    path: &Path,
    title: &str,
    (x_label, y_label): (&str, &str),
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let Some(((x0, x1), (y0, y1))) = bounds(series.iter().flat_map(|s| s.1.iter().copied())) else {
        return root.present().map_err(plot_err);
    };
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(plot_err)?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let c = color(i);
        let pts: Vec<(f64, f64)> = pts.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
        chart
            .draw_series(LineSeries::new(pts, c.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], c.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Return-level band with the fitted curve and empirical points, on `log10 T`.
pub fn return_level_chart(
    path: &Path,
    title: &str,
    units: &str,
    curve: &ReturnLevelCurve,
    points: &[(String, EmpiricalLevels)],
) -> Result<()> {
    let lt = |t: f64| t.log10();
    let band: Vec<(f64, f64)> = curve
        .periods
        .iter()
        .zip(&curve.lower95)
        .chain(curve.periods.iter().zip(&curve.upper95).rev())
        .map(|(&t, &v)| (lt(t), v))
        .collect();
    let all = band.iter().copied().chain(points.iter().flat_map(|(_, e)| {
        e.periods.iter().zip(&e.levels).filter(|(&t, _)| t <= *curve.periods.last().unwrap_or(&t)).map(|(&t, &v)| (lt(t), v))
    }));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let Some(((x0, x1), (y0, y1))) = bounds(all) else {
        return root.present().map_err(plot_err);
    };
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("log10 return period (years)")
        .y_desc(format!("return level ({units})"))
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(std::iter::once(Polygon::new(band, RGBColor(160, 160, 160).mix(0.4).filled())))
        .map_err(plot_err)?
        .label("95% band")
        .legend(|(x, y)| Rectangle::new([(x, y - 4), (x + 16, y + 4)], RGBColor(160, 160, 160).filled()));
    let fit: Vec<(f64, f64)> = curve.periods.iter().zip(&curve.point).map(|(&t, &v)| (lt(t), v)).collect();
    chart
        .draw_series(LineSeries::new(fit, BLACK.stroke_width(2)))
        .map_err(plot_err)?
        .label("GEV fit")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLACK.stroke_width(2)));
    for (i, (name, e)) in points.iter().enumerate() {
        let c = color(i + 1);
        let pts: Vec<(f64, f64)> = e.periods.iter().zip(&e.levels).map(|(&t, &v)| (lt(t), v)).collect();
        chart
            .draw_series(pts.into_iter().filter(|p| p.0 <= x1).map(move |p| Circle::new(p, 3, c.filled())))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| Circle::new((x + 8, y), 3, c.filled()));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::UpperLeft)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}
