//! Static SVG renderings of the experiment reports.

use std::path::Path;

use meshgate_core::experiments::TrafficReport;
use meshgate_core::gateway::TimingReport;
use meshgate_core::stats::Summary;
use plotters::prelude::*;

type PlotResult = Result<(), Box<dyn std::error::Error>>;

pub fn traffic_svg(r: &TrafficReport, out: &Path) -> PlotResult {
    let root = SVGBackend::new(out, (800, 600)).into_drawing_area();
    root.fill(&WHITE)?;
    let (top, bottom) = root.split_vertically(300);
    let motes = r.levels.iter().map(|l| l.motes).max().unwrap_or(1) as u32;
    let series: [(&str, _, fn(&Summary) -> f64); 2] =
        [("Mean delay (us)", &top, |s| s.mean), ("Jitter (us)", &bottom, |s| s.jitter)];
    for (label, area, pick) in series {
        let ys: Vec<(u32, f64)> = r.levels.iter().map(|l| (l.motes as u32, pick(&l.summary))).collect();
        let ymax = ys.iter().map(|p| p.1).fold(1.0, f64::max) * 1.15;
        let mut chart = ChartBuilder::on(area)
            .caption(label, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(32)
            .y_label_area_size(60)
            .build_cartesian_2d(0u32..motes + 1, 0.0..ymax)?;
        chart.configure_mesh().x_desc("motes").disable_x_mesh().draw()?;
        chart.draw_series(LineSeries::new(ys.iter().copied(), &BLUE))?;
        chart.draw_series(ys.iter().map(|&p| Circle::new(p, 4, BLUE.filled())))?;
    }
    root.present()?;
    Ok(())
}

pub fn timing_svg(r: &TimingReport, out: &Path) -> PlotResult {
    let root = SVGBackend::new(out, (800, 400)).into_drawing_area();
    root.fill(&WHITE)?;
    let hi = r.bins.last().map_or(10.0, |b| b.hi);
    let lo = r.bins.first().map_or(0.0, |b| b.lo);
    let ymax = r.bins.iter().map(|b| b.count).max().unwrap_or(1) as f64 * 1.15;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("Translation time, {} packets", r.samples_us.len()), ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(32)
        .y_label_area_size(50)
        .build_cartesian_2d(lo..hi, 0.0..ymax)?;
    chart.configure_mesh().x_desc("microseconds").y_desc("packets").disable_x_mesh().draw()?;
    chart.draw_series(
        r.bins.iter().map(|b| Rectangle::new([(b.lo, 0.0), (b.hi, b.count as f64)], BLUE.mix(0.6).filled())),
    )?;
    root.present()?;
    Ok(())
}
