//! Static SVG figures: visibility detection, scatterer map and RMSE curves.

use std::path::Path;

use elaa_core::bench::{McReport, Method};
use plotters::prelude::*;

type PlotResult = Result<(), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

const PALETTE: [RGBColor; 4] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
];

/// One panel per path: true visibility as a line, the estimate as markers.
pub fn visibility(path: &Path, truth: &[u8], estimate: &[u8], n: usize) -> PlotResult {
    let l_count = truth.len() / n;
    let root = SVGBackend::new(path, (900, 220 * l_count as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    for (l, area) in root.split_evenly((l_count, 1)).iter().enumerate() {
        let mut chart = ChartBuilder::on(area)
            .caption(
                format!("path {l}: visibility (1 = visible)"),
                ("sans-serif", 16),
            )
            .margin(8)
            .x_label_area_size(30)
            .y_label_area_size(40)
            .build_cartesian_2d(0.5f64..n as f64 + 0.5, -0.25f64..1.25)
            .map_err(err)?;
        chart
            .configure_mesh()
            .x_desc("antenna index")
            .y_labels(3)
            .draw()
            .map_err(err)?;
        let t = &truth[l * n..(l + 1) * n];
        let e = &estimate[l * n..(l + 1) * n];
        chart
            .draw_series(LineSeries::new(
                t.iter()
                    .enumerate()
                    .map(|(i, &v)| ((i + 1) as f64, v as f64)),
                &BLACK,
            ))
            .map_err(err)?
            .label("truth")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK));
        chart
            .draw_series(e.iter().enumerate().map(|(i, &v)| {
                Cross::new(
                    ((i + 1) as f64, v as f64 * 0.9 + 0.05),
                    3,
                    PALETTE[1].stroke_width(1),
                )
            }))
            .map_err(err)?
            .label("estimate")
            .legend(|(x, y)| Cross::new((x + 10, y), 3, PALETTE[1]));
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::LowerLeft)
            .border_style(BLACK)
            .background_style(WHITE.mix(0.8))
            .draw()
            .map_err(err)?;
    }
    root.present().map_err(err)
}

/// Array aperture on the y-axis, true scatterers as circles and estimates
/// as crosses.
pub fn scatterers(
    path: &Path,
    truth: &[(f64, f64)],
    estimate: &[(f64, f64)],
    aperture: f64,
) -> PlotResult {
    let pts = truth.iter().chain(estimate);
    let xmax = pts.clone().map(|p| p.0).fold(1.0, f64::max) * 1.15;
    let ymax = pts.map(|p| p.1.abs()).fold(aperture, f64::max) * 1.15;
    let root = SVGBackend::new(path, (700, 700)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("scatterer positions", ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(-0.5f64..xmax, -ymax..ymax)
        .map_err(err)?;
    chart
        .configure_mesh()
        .x_desc("x (m)")
        .y_desc("y (m)")
        .draw()
        .map_err(err)?;
    chart
        .draw_series(LineSeries::new(
            vec![(0.0, -aperture / 2.0), (0.0, aperture / 2.0)],
            BLACK.stroke_width(3),
        ))
        .map_err(err)?
        .label("array")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK.stroke_width(3)));
    chart
        .draw_series(
            truth
                .iter()
                .map(|&p| Circle::new(p, 6, PALETTE[0].stroke_width(2))),
        )
        .map_err(err)?
        .label("truth")
        .legend(|(x, y)| Circle::new((x + 10, y), 5, PALETTE[0]));
    chart
        .draw_series(
            estimate
                .iter()
                .map(|&p| Cross::new(p, 5, PALETTE[1].stroke_width(2))),
        )
        .map_err(err)?
        .label("estimate")
        .legend(|(x, y)| Cross::new((x + 10, y), 4, PALETTE[1]));
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(err)?;
    root.present().map_err(err)
}

/// Location and gain RMSE against SNR, one curve per method, log scale.
pub fn rmse(path: &Path, report: &McReport, snrs: &[f64], methods: &[Method]) -> PlotResult {
    let root = SVGBackend::new(path, (1200, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let panels = root.split_evenly((1, 2));
    let (lo, hi) = (
        snrs.iter().cloned().fold(f64::INFINITY, f64::min),
        snrs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let xr = if hi > lo { lo..hi } else { lo - 1.0..hi + 1.0 };
    for (area, (metric, title, unit)) in panels.iter().zip([
        ("location_rmse", "location RMSE", "RMSE (m)"),
        ("gain_rmse", "channel-gain RMSE", "RMSE"),
    ]) {
        let values: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.metric == metric && r.value > 0.0 && r.value.is_finite())
            .map(|r| r.value)
            .collect();
        let ymin = values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            .min(1.0)
            * 0.5;
        let ymax = values.iter().cloned().fold(0.0, f64::max).max(ymin * 10.0) * 2.0;
        let mut chart = ChartBuilder::on(area)
            .caption(title, ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(xr.clone(), (ymin..ymax).log_scale())
            .map_err(err)?;
        chart
            .configure_mesh()
            .x_desc("SNR (dB)")
            .y_desc(unit)
            .draw()
            .map_err(err)?;
        for (i, &m) in methods.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<(f64, f64)> = snrs
                .iter()
                .filter_map(|&s| {
                    report
                        .value(s, m, metric)
                        .filter(|v| *v > 0.0)
                        .map(|v| (s, v))
                })
                .collect();
            chart
                .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
                .map_err(err)?
                .label(m.name())
                .legend(move |(x, y)| {
                    PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2))
                });
            chart
                .draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))
                .map_err(err)?;
        }
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .background_style(WHITE.mix(0.8))
            .draw()
            .map_err(err)?;
    }
    root.present().map_err(err)
}
