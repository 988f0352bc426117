//! SVG renderings of the CSV outputs.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::locus::StabilityRegion;
use crate::matignon::StabilityVerdict;
use crate::relay::RelayTrace;
use crate::timesim::SimTrace;

const SIZE: (u32, u32) = (800, 600);

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(format!("plot: {e}"))
}

fn bounds<'a, I: IntoIterator<Item = &'a f64>>(values: I) -> (f64, f64) {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

fn palette(i: usize) -> RGBColor {
    const COLORS: [RGBColor; 6] = [
        RGBColor(31, 119, 180),
        RGBColor(214, 39, 40),
        RGBColor(44, 160, 44),
        RGBColor(148, 103, 189),
        RGBColor(255, 127, 14),
        RGBColor(23, 190, 207),
    ];
    COLORS[i % COLORS.len()]
}

/// Region boundaries, each closed along `Ki = 0`, clipped to `window`.
pub fn regions_svg(
    path: &Path,
    regions: &[StabilityRegion],
    window: Option<((f64, f64), (f64, f64))>,
) -> Result<()> {
    let polys: Vec<Vec<(f64, f64)>> = regions.iter().map(|r| r.polygon()).collect();
    let ((x0, x1), (y0, y1)) = window.unwrap_or_else(|| {
        (
            bounds(polys.iter().flatten().map(|p| &p.0)),
            bounds(polys.iter().flatten().map(|p| &p.1)),
        )
    });
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("Kp")
        .y_desc("Ki")
        .draw()
        .map_err(plot_err)?;
    for (i, (poly, r)) in polys.iter().zip(regions).enumerate() {
        let color = palette(i);
        chart
            .draw_series(LineSeries::new(poly.iter().copied(), &color))
            .map_err(plot_err)?
            .label(format!("lambda = {}", r.lambda))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE)
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Output and control signals of one or more runs on two stacked panels.
pub fn traces_svg(path: &Path, traces: &[(&str, &SimTrace)]) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (top, bottom) = root.split_vertically(SIZE.1 / 2);
    let t_max = traces
        .iter()
        .filter_map(|(_, t)| t.t.last())
        .fold(0.0f64, |m, &v| m.max(v))
        .max(1e-9);
    for (area, which) in [(top, 0), (bottom, 1)] {
        let pick = |tr: &SimTrace| {
            if which == 0 {
                tr.y.clone()
            } else {
                tr.u.clone()
            }
        };
        let all: Vec<f64> = traces
            .iter()
            .flat_map(|(_, tr)| {
                pick(tr)
                    .into_iter()
                    .chain(if which == 0 { tr.r.clone() } else { Vec::new() })
            })
            .collect();
        let (y0, y1) = bounds(&all);
        let mut chart = ChartBuilder::on(&area)
            .margin(15)
            .x_label_area_size(30)
            .y_label_area_size(60)
            .build_cartesian_2d(0.0..t_max, y0..y1)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("t [s]")
            .y_desc(if which == 0 {
                "speed [%]"
            } else {
                "control [%]"
            })
            .draw()
            .map_err(plot_err)?;
        if which == 0 {
            if let Some((_, first)) = traces.first() {
                chart
                    .draw_series(LineSeries::new(
                        first.t.iter().copied().zip(first.r.iter().copied()),
                        &BLACK,
                    ))
                    .map_err(plot_err)?;
            }
        }
        for (i, (name, tr)) in traces.iter().enumerate() {
            let color = palette(i);
            chart
                .draw_series(LineSeries::new(tr.t.iter().copied().zip(pick(tr)), &color))
                .map_err(plot_err)?
                .label(name.to_string())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE)
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

pub fn relay_svg(path: &Path, trace: &RelayTrace) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let t_max = trace.t.last().copied().unwrap_or(1.0).max(1e-9);
    let (y0, y1) = bounds(trace.y.iter().chain(&trace.relay_out));
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..t_max, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("t [s]")
        .draw()
        .map_err(plot_err)?;
    let series = [
        ("output", &trace.y, palette(0)),
        ("relay", &trace.relay_out, palette(1)),
    ];
    for (name, values, color) in series {
        chart
            .draw_series(LineSeries::new(
                trace.t.iter().copied().zip(values.iter().copied()),
                &color,
            ))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE)
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Roots in the `w`-plane with the `±qπ/2` sector edges.
pub fn poles_svg(path: &Path, verdict: &StabilityVerdict) -> Result<()> {
    let reach = verdict
        .roots
        .iter()
        .map(|w| w.norm())
        .fold(1.0f64, f64::max)
        * 1.1;
    let root = SVGBackend::new(path, (SIZE.1, SIZE.1)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(-reach..reach, -reach..reach)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("Re w")
        .y_desc("Im w")
        .draw()
        .map_err(plot_err)?;
    let edge = verdict.q * std::f64::consts::FRAC_PI_2;
    for sign in [1.0, -1.0] {
        let end = (reach * 1.5 * edge.cos(), sign * reach * 1.5 * edge.sin());
        chart
            .draw_series(LineSeries::new([(0.0, 0.0), end], &BLACK))
            .map_err(plot_err)?;
    }
    chart
        .draw_series(verdict.roots.iter().map(|w| {
            let color = if verdict.root_is_stable(*w) {
                palette(0)
            } else {
                palette(1)
            };
            Cross::new((w.re, w.im), 5, color)
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}
