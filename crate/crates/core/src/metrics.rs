//! Evaluation with a greedy sender: communication accuracy and the mean
//! log-prior of the messages produced.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::agents::{Agents, Branching, EmitMode, Message, RandomResample};
use crate::diff::{Scalar, Tape};
use crate::error::{Error, Result};
use crate::meanings::{Meaning, MeaningSpace};

/// Meanings per evaluation pass.
pub const EVAL_CHUNK: usize = 512;

/// One row of `metrics.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub comacc_train: f64,
    pub comacc_test: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub mean_log_prior_train: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub mean_log_prior_test: f64,
    pub recon_loss: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub kl: f64,
    pub beta: f64,
    pub entropy: f64,
    pub wall_seconds: f64,
}

/// Reads `null` (how JSON stores NaN) back as NaN.
pub(crate) fn nan_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Greedy messages for `meanings`.
pub fn greedy_messages<T: Scalar>(
    agents: &Agents<T>,
    space: &MeaningSpace,
    meanings: &[Meaning],
) -> Result<Vec<Message>> {
    let mut out = Vec::with_capacity(meanings.len());
    for chunk in meanings.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new();
        let bind = agents.store.bind(&mut tape)?;
        let st = agents.sender.encode(&mut tape, &bind, space, chunk)?;
        // Greedy emission draws nothing from the generator.
        let mut unused = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let o = agents
            .sender
            .emit(&mut tape, &bind, st, EmitMode::Greedy, &mut unused)?;
        out.extend(o.messages);
    }
    Ok(out)
}

/// Fraction of (meaning, draw) pairs reconstructed exactly.
///
/// `draws` only matters for [`Branching::Random`]; the other strategies are
/// deterministic and are evaluated once.
#[allow(clippy::too_many_arguments)]
pub fn comacc<T: Scalar, R: Rng + ?Sized>(
    agents: &Agents<T>,
    space: &MeaningSpace,
    meanings: &[Meaning],
    strategy: Branching,
    resample: RandomResample,
    eval_rng: &mut R,
    draws: usize,
) -> Result<f64> {
    if draws == 0 {
        return Err(Error::Config("draws must be at least 1".into()));
    }
    if meanings.is_empty() {
        return Err(Error::Length("comacc over no meanings".into()));
    }
    let draws = if strategy == Branching::Random { draws } else { 1 };
    let messages = greedy_messages(agents, space, meanings)?;
    let mut hits = 0usize;
    for _ in 0..draws {
        for (ms, xs) in messages.chunks(EVAL_CHUNK).zip(meanings.chunks(EVAL_CHUNK)) {
            let mut tape = Tape::new();
            let bind = agents.store.bind(&mut tape)?;
            let enc = agents
                .receiver
                .encode(&mut tape, &bind, ms, strategy, resample, eval_rng)?;
            let decoded = agents.receiver.decode(&mut tape, &bind, &enc)?;
            hits += decoded.iter().zip(xs).filter(|(d, x)| d == x).count();
        }
    }
    Ok(hits as f64 / (draws * meanings.len()) as f64)
}

/// Mean of `log P(m)` over the greedy messages for `meanings`.
pub fn mean_log_prior<T: Scalar, R: Rng + ?Sized>(
    agents: &Agents<T>,
    space: &MeaningSpace,
    meanings: &[Meaning],
    strategy: Branching,
    resample: RandomResample,
    eval_rng: &mut R,
) -> Result<f64> {
    if !agents.receiver.has_prior() {
        return Err(Error::NoPriorHead);
    }
    if meanings.is_empty() {
        return Err(Error::Length("mean_log_prior over no meanings".into()));
    }
    let messages = greedy_messages(agents, space, meanings)?;
    let mut total = 0.0;
    for ms in messages.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new();
        let bind = agents.store.bind(&mut tape)?;
        let enc = agents
            .receiver
            .encode(&mut tape, &bind, ms, strategy, resample, eval_rng)?;
        let lp = agents.receiver.log_prior(&mut tape, &bind, &enc, ms)?;
        total += tape.value(lp).data().iter().map(|x| x.f64()).sum::<f64>();
    }
    Ok(total / meanings.len() as f64)
}
