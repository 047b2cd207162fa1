use super::RunConfig;
use crate::error::{Error, Result};
use crate::game::{BetaMode, EntropyMode};
use crate::meanings::SpaceKind;

pub const PRESET_NAMES: [&str; 11] = [
    "exp1-dyck-k1",
    "exp1-dyck-k4",
    "exp1-dyck-k9",
    "exp2-attrval-2x64",
    "exp2-attrval-4x8",
    "prelim-2x64",
    "prelim-3x16",
    "prelim-4x8",
    "prelim-6x4",
    "smoke-attrval",
    "smoke-dyck",
];

/// Learning rate of the scaled-down presets.
pub const SMOKE_LEARNING_RATE: f64 = 1e-3;

/// Entropy coefficient of the scaled-down presets, applied to the
/// per-position mean entropy.
pub const SMOKE_ENTROPY_COEF: f64 = 0.3;

fn attr(n_att: usize, n_val: usize) -> SpaceKind {
    SpaceKind::AttrVal { n_att, n_val }
}

fn dyck(k: usize, l_max: usize) -> SpaceKind {
    SpaceKind::Dyck { k, l_max }
}

/// Resolves a preset name to its configuration.
pub fn preset(name: &str) -> Result<RunConfig> {
    let c = match name {
        "exp1-dyck-k1" => RunConfig::base(name, dyck(1, 18), 15_000),
        "exp1-dyck-k4" => RunConfig::base(name, dyck(4, 8), 15_000),
        "exp1-dyck-k9" => RunConfig::base(name, dyck(9, 6), 15_000),
        "exp2-attrval-2x64" => RunConfig {
            beta_mode: BetaMode::Rewo,
            ..RunConfig::base(name, attr(2, 64), 10_000)
        },
        "exp2-attrval-4x8" => RunConfig {
            beta_mode: BetaMode::Rewo,
            ..RunConfig::base(name, attr(4, 8), 10_000)
        },
        "prelim-2x64" => RunConfig::base(name, attr(2, 64), 5_000),
        "prelim-3x16" => RunConfig::base(name, attr(3, 16), 5_000),
        "prelim-4x8" => RunConfig::base(name, attr(4, 8), 5_000),
        "prelim-6x4" => RunConfig::base(name, attr(6, 4), 5_000),
        "smoke-attrval" => RunConfig {
            hidden: 64,
            batch_size: 256,
            learning_rate: SMOKE_LEARNING_RATE,
            entropy_coef: SMOKE_ENTROPY_COEF,
            entropy_mode: EntropyMode::Mean,
            ..RunConfig::base(name, attr(2, 4), 2_000)
        },
        "smoke-dyck" => RunConfig {
            hidden: 128,
            batch_size: 512,
            learning_rate: SMOKE_LEARNING_RATE,
            entropy_coef: SMOKE_ENTROPY_COEF,
            entropy_mode: EntropyMode::Mean,
            ..RunConfig::base(name, dyck(4, 6), 4_000)
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}` (known: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(c)
}
