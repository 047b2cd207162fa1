use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::run::{run, RunOptions, RunSummary};
use super::RunConfig;
use crate::agents::Branching;
use crate::error::{Error, Result};

/// One line of `aggregate.csv`: a run (`kind = run`) or a per-strategy
/// statistic over kept runs (`kind = mean` / `std`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub kind: String,
    pub strategy: String,
    pub seed: String,
    pub status: String,
    pub comacc_train: f64,
    pub comacc_test: f64,
    pub mean_log_prior_train: f64,
    pub mean_log_prior_test: f64,
    pub final_beta: f64,
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub strategies: Vec<Branching>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub out_dir: PathBuf,
    pub progress: bool,
}

pub fn run_dir_name(strategy: Branching, seed: u64) -> String {
    format!("{strategy}-seed{seed:02}")
}

fn status(s: &RunSummary) -> &'static str {
    if s.failure.is_some() {
        "failed"
    } else if s.kept {
        "kept"
    } else {
        "excluded"
    }
}

fn run_row(s: &RunSummary) -> AggregateRow {
    let m = s.final_metrics;
    let get = |f: fn(&crate::metrics::MetricsRecord) -> f64| m.as_ref().map_or(f64::NAN, f);
    AggregateRow {
        kind: "run".into(),
        strategy: s.strategy.clone(),
        seed: s.seed.to_string(),
        status: status(s).into(),
        comacc_train: get(|r| r.comacc_train),
        comacc_test: get(|r| r.comacc_test),
        mean_log_prior_train: get(|r| r.mean_log_prior_train),
        mean_log_prior_test: get(|r| r.mean_log_prior_test),
        final_beta: s.final_beta,
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Run rows in (strategy, seed) order followed by mean and sample standard
/// deviation rows per strategy over kept runs.
pub fn aggregate(summaries: &[RunSummary], strategies: &[Branching]) -> Vec<AggregateRow> {
    let mut sorted: Vec<&RunSummary> = summaries.iter().collect();
    let order = |s: &str| strategies.iter().position(|b| b.name() == s).unwrap_or(usize::MAX);
    sorted.sort_by_key(|s| (order(&s.strategy), s.seed));
    let mut rows: Vec<AggregateRow> = sorted.iter().map(|s| run_row(s)).collect();
    for strat in strategies {
        let kept: Vec<AggregateRow> = rows
            .iter()
            .filter(|r| r.kind == "run" && r.strategy == strat.name() && r.status == "kept")
            .cloned()
            .collect();
        let col = |f: fn(&AggregateRow) -> f64| mean_std(&kept.iter().map(f).collect::<Vec<_>>());
        let cols = [
            col(|r| r.comacc_train),
            col(|r| r.comacc_test),
            col(|r| r.mean_log_prior_train),
            col(|r| r.mean_log_prior_test),
            col(|r| r.final_beta),
        ];
        for (kind, pick) in [("mean", 0usize), ("std", 1usize)] {
            let v = |i: usize| if pick == 0 { cols[i].0 } else { cols[i].1 };
            rows.push(AggregateRow {
                kind: kind.into(),
                strategy: strat.name().into(),
                seed: String::new(),
                status: format!("n={}", kept.len()),
                comacc_train: v(0),
                comacc_test: v(1),
                mean_log_prior_train: v(2),
                mean_log_prior_test: v(3),
                final_beta: v(4),
            });
        }
    }
    rows
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every (strategy, seed) pair of `base` into `<out>/<strategy>-seedNN`
/// and writes `<out>/aggregate.csv`. A run that errors is recorded as failed
/// and the sweep carries on.
pub fn sweep(base: &RunConfig, opts: &SweepOptions) -> Result<Vec<AggregateRow>> {
    if opts.seeds.is_empty() || opts.strategies.is_empty() {
        return Err(Error::Config("sweep needs at least one seed and one strategy".into()));
    }
    fs::create_dir_all(&opts.out_dir)?;
    let grid: Vec<(Branching, u64)> = opts
        .strategies
        .iter()
        .flat_map(|&s| opts.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let one = |&(strategy, seed): &(Branching, u64)| -> RunSummary {
        let dir = opts.out_dir.join(run_dir_name(strategy, seed));
        let config = RunConfig {
            strategy,
            seed,
            out_dir: Some(dir.display().to_string()),
            ..base.clone()
        };
        let run_opts = RunOptions {
            out_dir: Some(dir),
            progress: opts.progress,
        };
        match run(&config, &run_opts) {
            Ok(r) => r.summary,
            Err(e) => RunSummary {
                name: config.name.clone(),
                space: config.space_label(),
                strategy: strategy.to_string(),
                seed,
                beta_mode: config.beta_mode,
                iterations_completed: 0,
                final_metrics: None,
                final_beta: f64::NAN,
                verdict: None,
                kept: false,
                failure: Some(e.to_string()),
                stream_seeds: Default::default(),
            },
        }
    };
    let summaries: Vec<RunSummary> = if opts.jobs <= 1 {
        grid.iter().map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| grid.par_iter().map(one).collect())
    };
    let rows = aggregate(&summaries, &opts.strategies);
    write_aggregate(&opts.out_dir.join("aggregate.csv"), &rows)?;
    Ok(rows)
}
