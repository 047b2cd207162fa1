//! Training objective: reconstruction, REINFORCE for the sender, and the
//! optional KL term against the receiver's message prior with β annealing.
//!
//! The per-item reward is
//! `G = log R(x|m) − β·(log S(m|x) − log P(m))`, held constant. The loss
//! minimized on the tape is
//!
//! ```text
//! −mean(log R) − β·mean(log P) − mean((G − b)·log S) − c·mean(H)
//! ```
//!
//! where `b` is a moving-average baseline and `H` the summed per-position
//! sender entropy. With β off the prior term is absent altogether.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentDims, Agents, Branching, EmitMode, Message, RandomResample};
use crate::diff::{adam_step, AdamConfig, AdamState, Binding, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::meanings::{Meaning, MeaningSpace};

/// Whether the KL term is part of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    #[default]
    Off,
    Rewo,
}

impl std::str::FromStr for BetaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(BetaMode::Off),
            "rewo" => Ok(BetaMode::Rewo),
            _ => Err(Error::Config(format!("expected off or rewo, got `{s}`"))),
        }
    }
}

/// Multiplicative β controller driven by a reconstruction-loss target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewoConfig {
    pub beta0: f64,
    /// Target reconstruction loss, nats per meaning.
    pub kappa: f64,
    pub nu: f64,
    /// Decay of the reconstruction-loss moving average.
    pub decay: f64,
}

impl Default for RewoConfig {
    fn default() -> Self {
        Self {
            beta0: 0.001,
            kappa: 0.1,
            nu: 0.01,
            decay: 0.99,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewoState {
    pub config: RewoConfig,
    pub beta: f64,
    /// Moving average of the batch reconstruction loss; `None` before the first update.
    pub avg_loss: Option<f64>,
}

impl RewoState {
    pub fn new(config: RewoConfig) -> Self {
        Self {
            config,
            beta: config.beta0,
            avg_loss: None,
        }
    }
}

/// `L̄ ← decay·L̄ + (1 − decay)·loss` (first call: `L̄ = loss`), then
/// `β ← clip(β·exp(ν(κ − L̄)), β₀, 1)`.
pub fn rewo_update(state: RewoState, loss: f64) -> RewoState {
    let c = state.config;
    let avg = match state.avg_loss {
        Some(a) => c.decay * a + (1.0 - c.decay) * loss,
        None => loss,
    };
    let beta = (state.beta * (c.nu * (c.kappa - avg)).exp()).clamp(c.beta0, 1.0);
    RewoState {
        config: c,
        beta,
        avg_loss: Some(avg),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunVerdict {
    Keep,
    Exclude,
}

pub const KEEP_THRESHOLD: f64 = 0.95;

/// Runs whose final β is below 0.95 are excluded from aggregates.
pub fn run_filter(final_beta: f64) -> RunVerdict {
    if final_beta >= KEEP_THRESHOLD {
        RunVerdict::Keep
    } else {
        RunVerdict::Exclude
    }
}

/// Single-sample estimate `mean(log S − log P)`.
pub fn kl_estimate(log_s: &[f64], log_p: &[f64]) -> Result<f64> {
    if log_s.len() != log_p.len() || log_s.is_empty() {
        return Err(Error::Length(format!(
            "kl_estimate: {} sender values, {} prior values",
            log_s.len(),
            log_p.len()
        )));
    }
    Ok(log_s.iter().zip(log_p).map(|(s, p)| s - p).sum::<f64>() / log_s.len() as f64)
}

/// Exponential moving average of the batch-mean reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Baseline {
    pub decay: f64,
    pub value: Option<f64>,
}

impl Baseline {
    pub fn new(decay: f64) -> Self {
        Self { decay, value: None }
    }

    /// The value to subtract for the current batch: the previous average, or
    /// this batch's mean on the first call. Updates the average afterwards.
    pub fn observe(&mut self, batch_mean: f64) -> f64 {
        match self.value {
            None => {
                self.value = Some(batch_mean);
                batch_mean
            }
            Some(b) => {
                self.value = Some(self.decay * b + (1.0 - self.decay) * batch_mean);
                b
            }
        }
    }
}

impl Default for Baseline {
    fn default() -> Self {
        Self::new(0.95)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub strategy: Branching,
    pub random_resample: RandomResample,
    pub beta_mode: BetaMode,
    pub rewo: RewoConfig,
    pub entropy_coef: f64,
    pub entropy_mode: EntropyMode,
    pub batch_size: usize,
    pub baseline_decay: f64,
    pub adam: AdamConfig,
    pub dims: AgentDims,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            strategy: Branching::Learned,
            random_resample: RandomResample::PerStep,
            beta_mode: BetaMode::Off,
            rewo: RewoConfig::default(),
            entropy_coef: 0.5,
            entropy_mode: EntropyMode::Sum,
            batch_size: 8192,
            baseline_decay: 0.95,
            adam: AdamConfig::default(),
            dims: AgentDims::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub recon_loglik: f64,
    pub entropy: f64,
    /// NaN when the objective has no prior term.
    pub kl: f64,
    pub beta: f64,
    pub reward: f64,
    pub baseline: f64,
    pub loss: f64,
}

/// Per-item quantities of one forward pass, each `[batch, 1]`.
pub struct Forward {
    pub messages: Vec<Message>,
    pub log_r: Var,
    pub log_s: Var,
    pub entropy: Var,
    pub log_p: Option<Var>,
}

fn column_values<T: Scalar>(tape: &Tape<T>, v: Var) -> Vec<f64> {
    tape.value(v).data().iter().map(|x| x.f64()).collect()
}

/// How per-position sender entropies are combined into the bonus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// Sum over emitted positions.
    #[default]
    Sum,
    /// Sum divided by the message length.
    Mean,
}

impl std::str::FromStr for EntropyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(EntropyMode::Sum),
            "mean" => Ok(EntropyMode::Mean),
            _ => Err(Error::Config(format!("expected sum or mean, got `{s}`"))),
        }
    }
}

/// Switches for [`forward`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub strategy: Branching,
    pub resample: RandomResample,
    /// Adds `log P(m)` (requires a prior head).
    pub with_prior: bool,
    pub entropy: EntropyMode,
}

/// Runs sender and receiver over `meanings`.
///
/// With `messages = None` the sender samples; otherwise the given messages are
/// scored.
#[allow(clippy::too_many_arguments)]
pub fn forward<T: Scalar, R1: Rng + ?Sized, R2: Rng + ?Sized>(
    tape: &mut Tape<T>,
    bind: &Binding,
    agents: &Agents<T>,
    space: &MeaningSpace,
    meanings: &[Meaning],
    messages: Option<&[Message]>,
    opts: ForwardOptions,
    sender_rng: &mut R1,
    branch_rng: &mut R2,
) -> Result<Forward> {
    let state = agents.sender.encode(tape, bind, space, meanings)?;
    let out = match messages {
        None => agents.sender.emit(tape, bind, state, EmitMode::Sample, sender_rng)?,
        Some(m) => agents.sender.score(tape, bind, state, m)?,
    };
    let enc = agents
        .receiver
        .encode(tape, bind, &out.messages, opts.strategy, opts.resample, branch_rng)?;
    let log_r = agents.receiver.log_likelihood(tape, bind, &enc, meanings)?;
    let log_p = if opts.with_prior {
        Some(agents.receiver.log_prior(tape, bind, &enc, &out.messages)?)
    } else {
        None
    };
    let entropy = match opts.entropy {
        EntropyMode::Sum => out.entropy,
        EntropyMode::Mean => {
            let inv = Tensor::column(out.messages.iter().map(|m| T::of(1.0 / m.len() as f64)).collect());
            let inv = tape.constant(inv)?;
            tape.mul(out.entropy, inv)?
        }
    };
    Ok(Forward {
        messages: out.messages,
        log_r,
        log_s: out.log_prob,
        entropy,
        log_p,
    })
}

/// Constant per-item rewards `log R − β(log S − log P)`.
pub fn rewards<T: Scalar>(tape: &Tape<T>, fwd: &Forward, beta: f64) -> Vec<f64> {
    let lr = column_values(tape, fwd.log_r);
    match fwd.log_p {
        None => lr,
        Some(p) => {
            let ls = column_values(tape, fwd.log_s);
            let lp = column_values(tape, p);
            lr.iter()
                .zip(ls.iter().zip(&lp))
                .map(|(r, (s, p))| r - beta * (s - p))
                .collect()
        }
    }
}

/// Scalar surrogate loss whose gradient is the training update direction.
pub fn surrogate_loss<T: Scalar>(
    tape: &mut Tape<T>,
    fwd: &Forward,
    rewards: &[f64],
    baseline: f64,
    beta: f64,
    entropy_coef: f64,
) -> Result<Var> {
    let batch = tape.shape(fwd.log_r)[0];
    if rewards.len() != batch {
        return Err(Error::Length(format!("{} rewards for a batch of {batch}", rewards.len())));
    }
    let adv = tape.constant(Tensor::column(rewards.iter().map(|g| T::of(g - baseline)).collect()))?;
    let pg = tape.mul(adv, fwd.log_s)?;
    let pg = tape.mean(pg)?;
    let rec = tape.mean(fwd.log_r)?;
    let ent = tape.mean(fwd.entropy)?;
    let ent = tape.scale(ent, T::of(entropy_coef))?;
    let mut gain = tape.add(rec, pg)?;
    gain = tape.add(gain, ent)?;
    if let Some(p) = fwd.log_p {
        let prior = tape.mean(p)?;
        let prior = tape.scale(prior, T::of(beta))?;
        gain = tape.add(gain, prior)?;
    }
    tape.neg(gain)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len().max(1) as f64
}

/// Random streams consumed during training.
pub struct TrainRngs<R> {
    pub batch: R,
    pub sender: R,
    pub branching: R,
}

/// Parameters, optimizer and schedule state for one run.
pub struct Trainer<T: Scalar, R> {
    pub agents: Agents<T>,
    pub space: MeaningSpace,
    pub train: Vec<usize>,
    pub config: GameConfig,
    pub adam: AdamState<T>,
    pub baseline: Baseline,
    pub rewo: Option<RewoState>,
    pub rngs: TrainRngs<R>,
    pub iteration: usize,
}

impl<T: Scalar, R: Rng> Trainer<T, R> {
    pub fn new(
        agents: Agents<T>,
        space: MeaningSpace,
        train: Vec<usize>,
        config: GameConfig,
        rngs: TrainRngs<R>,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        if config.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if config.beta_mode == BetaMode::Rewo && !agents.receiver.has_prior() {
            return Err(Error::NoPriorHead);
        }
        let adam = AdamState::new(config.adam, agents.store.values());
        let rewo = (config.beta_mode == BetaMode::Rewo).then(|| RewoState::new(config.rewo));
        Ok(Self {
            agents,
            space,
            train,
            config,
            adam,
            baseline: Baseline::new(config.baseline_decay),
            rewo,
            rngs,
            iteration: 0,
        })
    }

    pub fn beta(&self) -> f64 {
        self.rewo.map_or(0.0, |r| r.beta)
    }

    /// Uniform draw with replacement from the training meanings.
    pub fn sample_batch(&mut self) -> Vec<Meaning> {
        (0..self.config.batch_size)
            .map(|_| {
                let i = self.train[self.rngs.batch.random_range(0..self.train.len())];
                self.space.get(i).clone()
            })
            .collect()
    }

    /// Forward pass, loss and gradients for one batch, without touching parameters.
    pub fn play_batch(&mut self, meanings: &[Meaning]) -> Result<(StepStats, Vec<Tensor<T>>)> {
        let beta = self.beta();
        let with_prior = self.rewo.is_some();
        let mut tape = Tape::new();
        let bind = self.agents.store.bind(&mut tape)?;
        let fwd = forward(
            &mut tape,
            &bind,
            &self.agents,
            &self.space,
            meanings,
            None,
            ForwardOptions {
                strategy: self.config.strategy,
                resample: self.config.random_resample,
                with_prior,
                entropy: self.config.entropy_mode,
            },
            &mut self.rngs.sender,
            &mut self.rngs.branching,
        )?;
        let g = rewards(&tape, &fwd, beta);
        let reward = mean(&g);
        let baseline = self.baseline.observe(reward);
        let loss = surrogate_loss(&mut tape, &fwd, &g, baseline, beta, self.config.entropy_coef)?;
        let loss_value = tape.value(loss).item().f64();
        let log_r = column_values(&tape, fwd.log_r);
        let log_s = column_values(&tape, fwd.log_s);
        let kl = match fwd.log_p {
            Some(p) => kl_estimate(&log_s, &column_values(&tape, p))?,
            None => f64::NAN,
        };
        let stats = StepStats {
            recon_loglik: mean(&log_r),
            entropy: mean(&column_values(&tape, fwd.entropy)),
            kl,
            beta,
            reward,
            baseline,
            loss: loss_value,
        };
        let finite = [stats.recon_loglik, stats.entropy, stats.reward, stats.loss]
            .iter()
            .all(|x| x.is_finite())
            && (kl.is_finite() || !with_prior);
        if !finite {
            return Err(Error::Diverged {
                iteration: self.iteration,
                detail: format!("{stats:?}"),
            });
        }
        let grads = tape.backward(loss)?;
        Ok((stats, bind.collect(&tape, &grads)))
    }

    /// One optimizer step: sample, play, update parameters and β.
    pub fn step(&mut self) -> Result<StepStats> {
        let batch = self.sample_batch();
        let (stats, grads) = self.play_batch(&batch)?;
        if let Some((id, _)) = self.agents.store.ids().zip(&grads).find(|(_, g)| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: self.iteration,
                detail: format!("non-finite gradient for {}", self.agents.store.name(id)),
            });
        }
        adam_step(self.agents.store.values_mut(), &grads, &mut self.adam)?;
        if let Some(r) = self.rewo {
            self.rewo = Some(rewo_update(r, -stats.recon_loglik));
        }
        self.iteration += 1;
        Ok(stats)
    }
}
