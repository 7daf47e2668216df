//! Static SVG figures rendered from the long-format sweep table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::screen_eval::LongRow;

pub const DICE_PLOT: &str = "sweep_dice.svg";
pub const RATES_PLOT: &str = "sweep_rates.svg";

const SEG_ONLY: &str = "none";

type Series = BTreeMap<String, Vec<(f64, f64)>>;

fn cell_key(r: &LongRow) -> String {
    format!("{} / {}", r.strategy, r.loss)
}

/// `(threshold, value)` pairs of one metric per cell, sorted by threshold.
fn threshold_series(rows: &[LongRow], metric: &str) -> Result<Series> {
    let mut out: Series = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == metric && r.threshold != SEG_ONLY) {
        let t: f64 = r
            .threshold
            .parse()
            .map_err(|_| Error::Degenerate(format!("threshold `{}` is not a number", r.threshold)))?;
        out.entry(cell_key(r)).or_default().push((t, r.value));
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(out)
}

fn seg_only_value(rows: &[LongRow], metric: &str, cell: &str) -> Option<f64> {
    rows.iter().find(|r| r.metric == metric && r.threshold == SEG_ONLY && cell_key(r) == cell).map(|r| r.value)
}

/// The frame-level FP rate must not rise with the threshold.
pub fn assert_fpr_non_increasing(rows: &[LongRow]) -> Result<()> {
    for (cell, points) in threshold_series(rows, "fpr")? {
        for w in points.windows(2) {
            if w[1].1 > w[0].1 {
                return Err(Error::Degenerate(format!(
                    "FPR of {cell} rises from {} at threshold {} to {} at {}",
                    w[0].1, w[0].0, w[1].1, w[1].0
                )));
            }
        }
    }
    Ok(())
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Degenerate(format!("plot rendering failed: {e}"))
}

fn bounds(series: &Series) -> (f64, f64) {
    let xs = series.values().flatten().map(|p| p.0);
    let lo = xs.clone().fold(f64::INFINITY, f64::min);
    let hi = xs.fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() && hi > lo {
        (lo, hi)
    } else {
        (0.0, 5.0)
    }
}

fn render_dice(rows: &[LongRow], path: &Path) -> Result<()> {
    let series = threshold_series(rows, "mean_dice")?;
    let (x0, x1) = bounds(&series);
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Mean Dice on positive frames vs logit threshold", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, 0.0..1.0)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("threshold (logit)").y_desc("mean Dice").draw().map_err(plot_err)?;
    for (i, (cell, points)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let clean: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.1.is_finite()).collect();
        chart
            .draw_series(LineSeries::new(clean.clone(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(cell.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        chart.draw_series(clean.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(plot_err)?;
        if let Some(v) = seg_only_value(rows, "mean_dice", cell).filter(|v| v.is_finite()) {
            chart
                .draw_series(DashedLineSeries::new(vec![(x0, v), (x1, v)], 6, 4, color.stroke_width(1)))
                .map_err(plot_err)?;
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn render_rates(rows: &[LongRow], path: &Path) -> Result<()> {
    let metrics = [("fpr", "FP rate (frames)"), ("fnr", "FN rate (frames)"), ("fp_area", "FP area (pixel fraction)")];
    let root = SVGBackend::new(path, (720, 900)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((metrics.len(), 1));
    for (panel, (metric, title)) in panels.iter().zip(metrics) {
        let series = threshold_series(rows, metric)?;
        let cells: Vec<&String> = series.keys().collect();
        // categories: segmentation only, then each threshold
        let mut labels = vec!["seg only".to_string()];
        if let Some(points) = series.values().next() {
            labels.extend(points.iter().map(|p| format!("t={}", p.0)));
        }
        let y_max = rows
            .iter()
            .filter(|r| r.metric == metric && r.value.is_finite())
            .map(|r| r.value)
            .fold(0.0f64, f64::max)
            .max(1e-3)
            * 1.15;
        let n_cat = labels.len();
        let mut chart = ChartBuilder::on(panel)
            .caption(title, ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(32)
            .y_label_area_size(56)
            .build_cartesian_2d(0.0..n_cat as f64, 0.0..y_max)
            .map_err(plot_err)?;
        let labels_for_fmt = labels.clone();
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(n_cat * 2 + 1)
            .x_label_formatter(&move |x| {
                let i = x.floor() as usize;
                if (x - i as f64 - 0.5).abs() < 1e-6 {
                    labels_for_fmt.get(i).cloned().unwrap_or_default()
                } else {
                    String::new()
                }
            })
            .draw()
            .map_err(plot_err)?;
        let width = 0.8 / cells.len().max(1) as f64;
        for (ci, cell) in cells.iter().enumerate() {
            let color = Palette99::pick(ci).to_rgba();
            let mut values = vec![seg_only_value(rows, metric, cell).unwrap_or(0.0)];
            values.extend(series[*cell].iter().map(|p| p.1));
            chart
                .draw_series(values.iter().enumerate().map(|(i, &v)| {
                    let x = i as f64 + 0.1 + ci as f64 * width;
                    Rectangle::new([(x, 0.0), (x + width, if v.is_finite() { v } else { 0.0 })], color.filled())
                }))
                .map_err(plot_err)?
                .label((*cell).clone())
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .position(SeriesLabelPosition::UpperRight)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Check the FPR series and render both figures into `out_dir`.
pub fn render_sweep_plots(rows: &[LongRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    assert_fpr_non_increasing(rows)?;
    let dice = out_dir.join(DICE_PLOT);
    let rates = out_dir.join(RATES_PLOT);
    render_dice(rows, &dice)?;
    render_rates(rows, &rates)?;
    Ok(vec![dice, rates])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(fpr: &[f64]) -> Vec<LongRow> {
        let mut out = Vec::new();
        for (metric, base) in [("mean_dice", 0.8), ("fpr", 0.0), ("fnr", 0.1), ("fp_area", 0.02)] {
            out.push(LongRow {
                strategy: "vote".into(),
                loss: "dice".into(),
                threshold: "none".into(),
                metric: metric.into(),
                value: base,
            });
            for (t, f) in fpr.iter().enumerate() {
                out.push(LongRow {
                    strategy: "vote".into(),
                    loss: "dice".into(),
                    threshold: t.to_string(),
                    metric: metric.into(),
                    value: if metric == "fpr" { *f } else { base + 0.01 * t as f64 },
                });
            }
        }
        out
    }

    #[test]
    fn rising_fpr_is_rejected_before_rendering() {
        let dir = tempfile::tempdir().unwrap();
        assert!(render_sweep_plots(&rows(&[0.3, 0.2, 0.25]), dir.path()).is_err());
        assert!(!dir.path().join(DICE_PLOT).exists());
    }

    #[test]
    fn plots_are_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let r = rows(&[0.3, 0.2, 0.2, 0.1, 0.0, 0.0]);
        render_sweep_plots(&r, a.path()).unwrap();
        render_sweep_plots(&r, b.path()).unwrap();
        for name in [DICE_PLOT, RATES_PLOT] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            assert!(!x.is_empty());
            assert_eq!(x, std::fs::read(b.path().join(name)).unwrap());
        }
    }
}
