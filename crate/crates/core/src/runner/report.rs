use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::run::{read_metrics, read_summary, RunSummary};
use super::svg::{Chart, Series};
use crate::agents::Branching;
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;

pub fn strategy_color(strategy: &str) -> &'static str {
    match strategy {
        "learned" => "#d62728",
        "left" => "#1f77b4",
        "random" => "#ff7f0e",
        _ => "#7f7f7f",
    }
}

/// A completed run loaded from disk.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub records: Vec<MetricsRecord>,
}

/// Loads `dir` if it is a run directory, else every run directory directly below it.
pub fn load_runs(dir: &Path) -> Result<Vec<LoadedRun>> {
    let load = |d: &Path| -> Result<LoadedRun> {
        Ok(LoadedRun {
            dir: d.to_path_buf(),
            summary: read_summary(d.join("summary.json"))?,
            records: read_metrics(d.join("metrics.csv"))?,
        })
    };
    if dir.join("summary.json").is_file() {
        return Ok(vec![load(dir)?]);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("summary.json").is_file())
        .collect();
    subdirs.sort();
    subdirs.iter().map(|d| load(d)).collect()
}

/// One row of `plotted.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlottedRow {
    pub panel: String,
    pub strategy: String,
    pub iteration: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub runs: usize,
}

const PANELS: [(&str, &str, fn(&MetricsRecord) -> f64); 4] = [
    ("comacc-train", "ComAcc", |r| r.comacc_train),
    ("comacc-test", "ComAcc", |r| r.comacc_test),
    ("log-prior-train", "log P(m)", |r| r.mean_log_prior_train),
    ("log-prior-test", "log P(m)", |r| r.mean_log_prior_test),
];

/// Mean, min and max across runs at each iteration where at least one run
/// has a finite value.
fn band(runs: &[&LoadedRun], metric: fn(&MetricsRecord) -> f64) -> Vec<(usize, f64, f64, f64, usize)> {
    let mut at: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in runs {
        for rec in &r.records {
            let v = metric(rec);
            if v.is_finite() {
                at.entry(rec.iteration).or_default().push(v);
            }
        }
    }
    at.into_iter()
        .map(|(it, vs)| {
            let mean = vs.iter().sum::<f64>() / vs.len() as f64;
            let min = vs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (it, mean, min, max, vs.len())
        })
        .collect()
}

/// Writes one SVG per (metric, meaning space) with a mean line and min–max
/// band per strategy over kept runs, plus `plotted.csv`. Returns the SVG paths.
pub fn report(inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let mut runs = Vec::new();
    for dir in inputs {
        runs.extend(load_runs(dir)?);
    }
    let kept: Vec<&LoadedRun> = runs.iter().filter(|r| r.summary.kept).collect();
    if kept.is_empty() {
        return Err(Error::Report("no kept runs found in the inputs".into()));
    }
    fs::create_dir_all(out)?;
    let mut spaces: Vec<String> = kept.iter().map(|r| r.summary.space.clone()).collect();
    spaces.sort();
    spaces.dedup();

    let mut written = Vec::new();
    let mut rows = Vec::new();
    for space in &spaces {
        for (panel, y_label, metric) in PANELS {
            let mut series = Vec::new();
            let name = format!("{panel}-{space}");
            for strategy in Branching::ALL {
                let group: Vec<&LoadedRun> = kept
                    .iter()
                    .copied()
                    .filter(|r| &r.summary.space == space && r.summary.strategy == strategy.name())
                    .collect();
                let pts = band(&group, metric);
                if pts.is_empty() {
                    continue;
                }
                for &(iteration, mean, min, max, n) in &pts {
                    rows.push(PlottedRow {
                        panel: name.clone(),
                        strategy: strategy.name().into(),
                        iteration,
                        mean,
                        min,
                        max,
                        runs: n,
                    });
                }
                series.push(Series {
                    label: strategy.name().into(),
                    color: strategy_color(strategy.name()).into(),
                    points: pts.iter().map(|&(i, m, lo, hi, _)| (i as f64, m, lo, hi)).collect(),
                });
            }
            if series.is_empty() {
                continue;
            }
            let chart = Chart {
                title: format!("{space}: {}", panel.replace('-', " ")),
                x_label: "iteration".into(),
                y_label: y_label.into(),
                series,
            };
            let path = out.join(format!("{name}.svg"));
            fs::write(&path, chart.render())?;
            written.push(path);
        }
    }
    let mut w = csv::Writer::from_path(out.join("plotted.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(written)
}
