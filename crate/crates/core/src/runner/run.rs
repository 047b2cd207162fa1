use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::seeds::{hex, stream, stream_seed, STREAM_NAMES};
use super::{Precision, RunConfig};
use crate::agents::Agents;
use crate::diff::Scalar;
use crate::error::{Error, Result};
use crate::game::{run_filter, BetaMode, RunVerdict, StepStats, TrainRngs, Trainer};
use crate::meanings::{Meaning, MeaningSpace};
use crate::metrics::{comacc, mean_log_prior, MetricsRecord};

pub const DETERMINISTIC_ENV: &str = "ECLAB_DETERMINISTIC";

/// True when `ECLAB_DETERMINISTIC=1`: wall-clock columns are written as 0.
pub fn deterministic_mode() -> bool {
    std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v == "1")
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub space: String,
    pub strategy: String,
    pub seed: u64,
    pub beta_mode: BetaMode,
    pub iterations_completed: usize,
    pub final_metrics: Option<MetricsRecord>,
    #[serde(deserialize_with = "crate::metrics::nan_from_null")]
    pub final_beta: f64,
    /// Outcome of the final-β filter; `None` when β is off.
    pub verdict: Option<RunVerdict>,
    pub kept: bool,
    pub failure: Option<String>,
    pub stream_seeds: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: RunConfig,
    pub records: Vec<MetricsRecord>,
    pub summary: RunSummary,
}

/// Where [`run`] writes, and whether to report progress on stderr.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub progress: bool,
}

/// Trains one configuration, writing `config.json`, `metrics.csv` (one row per
/// evaluation, flushed as it goes) and `summary.json` when `out_dir` is set.
///
/// A non-finite loss ends the run early; the failure is recorded in the
/// summary rather than returned as an error.
pub fn run(config: &RunConfig, opts: &RunOptions) -> Result<RunResult> {
    config.validate()?;
    match config.precision {
        Precision::F32 => run_typed::<f32>(config, opts),
        Precision::F64 => run_typed::<f64>(config, opts),
    }
}

struct Evaluator<'a> {
    space: &'a MeaningSpace,
    train: Vec<Meaning>,
    test: Vec<Meaning>,
    rng: ChaCha8Rng,
}

impl Evaluator<'_> {
    fn record<T: Scalar>(
        &mut self,
        config: &RunConfig,
        agents: &Agents<T>,
        iteration: usize,
        stats: &StepStats,
        wall: f64,
    ) -> Result<MetricsRecord> {
        let (s, r) = (config.strategy, config.random_resample);
        let acc = |ms: &[Meaning], rng: &mut ChaCha8Rng| comacc(agents, self.space, ms, s, r, rng, config.eval_draws);
        let comacc_train = acc(&self.train, &mut self.rng)?;
        let comacc_test = acc(&self.test, &mut self.rng)?;
        let (lp_train, lp_test) = if agents.receiver.has_prior() {
            (
                mean_log_prior(agents, self.space, &self.train, s, r, &mut self.rng)?,
                mean_log_prior(agents, self.space, &self.test, s, r, &mut self.rng)?,
            )
        } else {
            (f64::NAN, f64::NAN)
        };
        Ok(MetricsRecord {
            iteration,
            comacc_train,
            comacc_test,
            mean_log_prior_train: lp_train,
            mean_log_prior_test: lp_test,
            recon_loss: -stats.recon_loglik,
            kl: stats.kl,
            beta: stats.beta,
            entropy: stats.entropy,
            wall_seconds: wall,
        })
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn run_typed<T: Scalar>(config: &RunConfig, opts: &RunOptions) -> Result<RunResult> {
    let space = MeaningSpace::new(config.space)?;
    let split = space.split(stream(config.seed, "split").next_u64());
    let with_prior = config.beta_mode == BetaMode::Rewo;
    let agents = Agents::<T>::new(config.space, config.dims(), with_prior, &mut stream(config.seed, "init"));
    let rngs = TrainRngs {
        batch: stream(config.seed, "batch"),
        sender: stream(config.seed, "sender"),
        branching: stream(config.seed, "branching"),
    };
    let eval_master = config.eval_seed.unwrap_or(config.seed);
    let mut stream_seeds: BTreeMap<String, String> = STREAM_NAMES
        .iter()
        .map(|n| (n.to_string(), hex(&stream_seed(config.seed, n))))
        .collect();
    stream_seeds.insert("eval".into(), hex(&stream_seed(eval_master, "eval")));

    let mut evaluator = Evaluator {
        space: &space,
        train: split.train.iter().map(|&i| space.get(i).clone()).collect(),
        test: split.test.iter().map(|&i| space.get(i).clone()).collect(),
        rng: stream(eval_master, "eval"),
    };
    let mut trainer = Trainer::new(agents, space.clone(), split.train.clone(), config.game(), rngs)?;

    let mut writer = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_json(&dir.join("config.json"), config)?;
            Some(csv::Writer::from_writer(File::create(dir.join("metrics.csv"))?))
        }
        None => None,
    };

    let deterministic = deterministic_mode();
    let start = Instant::now();
    let mut records = Vec::new();
    let mut failure = None;
    for it in 1..=config.iterations {
        let stats = match trainer.step() {
            Ok(s) => s,
            Err(e @ Error::Diverged { .. }) => {
                failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        if it % config.eval_every == 0 || it == config.iterations {
            let wall = if deterministic { 0.0 } else { start.elapsed().as_secs_f64() };
            let rec = evaluator.record(config, &trainer.agents, it, &stats, wall)?;
            if let Some(w) = writer.as_mut() {
                w.serialize(rec)?;
                w.flush()?;
            }
            if opts.progress {
                eprintln!(
                    "[{} {} seed {}] it {:>6}  comacc train {:.3} test {:.3}  recon {:.4}  beta {:.4}",
                    config.name, config.strategy, config.seed, it, rec.comacc_train, rec.comacc_test, rec.recon_loss, rec.beta
                );
            }
            records.push(rec);
        }
    }

    let final_beta = trainer.beta();
    let verdict = with_prior.then(|| run_filter(final_beta));
    let summary = RunSummary {
        name: config.name.clone(),
        space: config.space_label(),
        strategy: config.strategy.to_string(),
        seed: config.seed,
        beta_mode: config.beta_mode,
        iterations_completed: trainer.iteration,
        final_metrics: records.last().copied(),
        final_beta,
        verdict,
        kept: failure.is_none() && verdict != Some(RunVerdict::Exclude),
        failure,
        stream_seeds,
    };
    if let Some(dir) = &opts.out_dir {
        write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok(RunResult {
        config: config.clone(),
        records,
        summary,
    })
}

/// Reads `metrics.csv` rows back.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<RunSummary> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
