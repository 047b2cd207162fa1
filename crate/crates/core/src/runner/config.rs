use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentDims, Branching, RandomResample};
use crate::diff::AdamConfig;
use crate::error::{Error, Result};
use crate::game::{BetaMode, EntropyMode, GameConfig, RewoConfig};
use crate::meanings::SpaceKind;
use crate::stack::StrengthCaps;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("expected f32 or f64, got `{s}`"))),
        }
    }
}

/// Everything needed to reproduce a run. Serialized as-is to `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub space: SpaceKind,
    pub strategy: Branching,
    pub random_resample: RandomResample,
    pub beta_mode: BetaMode,
    pub beta0: f64,
    pub rewo_kappa: f64,
    pub rewo_nu: f64,
    pub rewo_decay: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub entropy_coef: f64,
    pub entropy_mode: EntropyMode,
    pub baseline_decay: f64,
    pub max_len: usize,
    pub vocab: usize,
    pub hidden: usize,
    pub embed: usize,
    pub cap_pop: f64,
    pub cap_push: f64,
    pub cap_read: f64,
    pub seed: u64,
    /// Master seed for the evaluation stream only; defaults to `seed`.
    pub eval_seed: Option<u64>,
    pub eval_every: usize,
    pub eval_draws: usize,
    pub precision: Precision,
    pub out_dir: Option<String>,
}

impl RunConfig {
    /// Shared defaults with the given meaning space and iteration count.
    pub fn base(name: &str, space: SpaceKind, iterations: usize) -> Self {
        let game = GameConfig::default();
        Self {
            name: name.to_string(),
            space,
            strategy: Branching::Learned,
            random_resample: RandomResample::PerStep,
            beta_mode: BetaMode::Off,
            beta0: game.rewo.beta0,
            rewo_kappa: game.rewo.kappa,
            rewo_nu: game.rewo.nu,
            rewo_decay: game.rewo.decay,
            iterations,
            batch_size: game.batch_size,
            learning_rate: game.adam.lr,
            l2: game.adam.l2,
            entropy_coef: game.entropy_coef,
            entropy_mode: game.entropy_mode,
            baseline_decay: game.baseline_decay,
            max_len: game.dims.max_len,
            vocab: game.dims.vocab,
            hidden: game.dims.hidden,
            embed: game.dims.embed,
            cap_pop: game.dims.caps.pop,
            cap_push: game.dims.caps.push,
            cap_read: game.dims.caps.read,
            seed: 0,
            eval_seed: None,
            eval_every: 100,
            eval_draws: 1,
            precision: Precision::F32,
            out_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.vocab < 2 {
            return bad("vocab must include EOS and at least one content symbol");
        }
        if self.max_len == 0 || self.hidden == 0 || self.embed == 0 {
            return bad("max_len, hidden and embed must be positive");
        }
        if self.eval_every == 0 || self.eval_draws == 0 {
            return bad("eval_every and eval_draws must be positive");
        }
        if [self.cap_pop, self.cap_push, self.cap_read]
            .iter()
            .any(|c| !c.is_finite() || *c <= 0.0)
        {
            return bad("strength caps must be positive");
        }
        if !(self.beta0 > 0.0 && self.beta0 <= 1.0) {
            return bad("beta0 must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.baseline_decay) || !(0.0..=1.0).contains(&self.rewo_decay) {
            return bad("decays must lie in [0, 1]");
        }
        match self.space {
            SpaceKind::AttrVal { n_att, n_val } if n_att < 1 || n_val < 2 => {
                bad("attribute-value spaces need n_att >= 1 and n_val >= 2")
            }
            SpaceKind::Dyck { k, l_max } if k < 1 || l_max % 2 == 1 => {
                bad("Dyck spaces need k >= 1 and an even l_max")
            }
            _ => Ok(()),
        }
    }

    pub fn dims(&self) -> AgentDims {
        AgentDims {
            vocab: self.vocab,
            max_len: self.max_len,
            hidden: self.hidden,
            embed: self.embed,
            caps: StrengthCaps {
                pop: self.cap_pop,
                push: self.cap_push,
                read: self.cap_read,
            },
        }
    }

    pub fn game(&self) -> GameConfig {
        GameConfig {
            strategy: self.strategy,
            random_resample: self.random_resample,
            beta_mode: self.beta_mode,
            rewo: RewoConfig {
                beta0: self.beta0,
                kappa: self.rewo_kappa,
                nu: self.rewo_nu,
                decay: self.rewo_decay,
            },
            entropy_coef: self.entropy_coef,
            entropy_mode: self.entropy_mode,
            batch_size: self.batch_size,
            baseline_decay: self.baseline_decay,
            adam: AdamConfig {
                lr: self.learning_rate,
                l2: self.l2,
                ..AdamConfig::default()
            },
            dims: self.dims(),
        }
    }

    /// Short label of the meaning space, e.g. `attrval-2x64` or `dyck-k4-l8`.
    pub fn space_label(&self) -> String {
        space_label(self.space)
    }
}

pub fn space_label(space: SpaceKind) -> String {
    match space {
        SpaceKind::AttrVal { n_att, n_val } => format!("attrval-{n_att}x{n_val}"),
        SpaceKind::Dyck { k, l_max } => format!("dyck-k{k}-l{l_max}"),
    }
}
