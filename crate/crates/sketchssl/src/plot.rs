//! SVG figures.

use std::path::Path;

use anyhow::{bail, Result};
use plotters::prelude::*;

use crate::metrics::LogLine;

pub type Series = (String, Vec<(f64, f64)>);

const COLORS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Line chart with markers; fails with "no data" when every series is empty.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> Result<()> {
    let points = || {
        series
            .iter()
            .flat_map(|s| s.1.iter())
            .filter(|p| p.0.is_finite() && p.1.is_finite())
    };
    if points().next().is_none() {
        bail!("no data to plot for {title:?}");
    }
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    let (x0, x1) = range(points().map(|p| p.0));
    let (y0, y1) = range(points().map(|p| p.1));
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64)> = pts
            .iter()
            .copied()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}

/// One panel per phase, plotting `key` against the step counter.
pub fn loss_curves(log: &[LogLine], dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    if log.is_empty() {
        bail!("no data: the metric log is empty");
    }
    let panels = [
        ("pretrain_gen", "vae"),
        ("pretrain_ret", "triplet"),
        ("retrieval", "total"),
        ("discriminator", "loss"),
        ("generator", "reward"),
        ("eval", "acc1"),
    ];
    let mut written = Vec::new();
    for (phase, key) in panels {
        let pts: Vec<(f64, f64)> = log
            .iter()
            .filter(|l| l.phase == phase)
            .filter_map(|l| l.get(key).map(|v| (l.step as f64, v)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let path = dir.join(format!("{phase}_{key}.svg"));
        line_chart(
            &path,
            &format!("{phase}: {key}"),
            "step",
            key,
            &[(key.to_string(), pts)],
        )?;
        written.push(path);
    }
    if written.is_empty() {
        bail!("no data: the metric log has no plottable records");
    }
    Ok(written)
}

/// Mean ARP per populated certainty bin.
pub fn consistency_chart(
    report: &sketchssl_core::evaluation::ConsistencyReport,
    path: &Path,
) -> Result<()> {
    let pts = report
        .bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| (0.5 * (b.lo + b.hi), b.mean_arp))
        .collect();
    line_chart(
        path,
        "Retrieval quality against certainty",
        "certainty score (bin centre)",
        "mean ARP",
        &[("pseudo pairs".into(), pts)],
    )
}
