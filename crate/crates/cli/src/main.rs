use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use eclab::agents::{Branching, RandomResample};
use eclab::game::{BetaMode, EntropyMode};
use eclab::runner::{self, preset, Precision, RunConfig, RunOptions, SweepOptions};

#[derive(Parser)]
#[command(name = "eclab", version, about = "Signaling games with Neural Stack receivers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration read from a JSON file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: RunFlags,
    },
    /// Train (or print) a named preset.
    Preset {
        name: String,
        #[command(flatten)]
        common: RunFlags,
    },
    /// Run a strategy × seed grid for a preset.
    Sweep {
        #[arg(long)]
        preset: String,
        /// Seeds 0..N.
        #[arg(long, default_value_t = 24)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Comma-separated subset of learned,left,random.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<Branching>>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Plot runs or sweeps as SVG panels plus the plotted values as CSV.
    Report {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
    #[arg(long)]
    quiet: bool,
    #[command(flatten)]
    overrides: Overrides,
}

/// Flags that override configuration fields.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    strategy: Option<Branching>,
    #[arg(long)]
    random_resample: Option<RandomResample>,
    #[arg(long)]
    beta_mode: Option<BetaMode>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    entropy_mode: Option<EntropyMode>,
    #[arg(long)]
    entropy_coef: Option<f64>,
    #[arg(long)]
    rewo_nu: Option<f64>,
    #[arg(long)]
    rewo_kappa: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    eval_draws: Option<usize>,
    #[arg(long)]
    eval_seed: Option<u64>,
    #[arg(long)]
    precision: Option<Precision>,
    /// Dyck parenthesis types (Dyck spaces only).
    #[arg(long)]
    k: Option<usize>,
    /// Maximum Dyck length (Dyck spaces only).
    #[arg(long)]
    l_max: Option<usize>,
}

impl Overrides {
    fn apply(&self, c: &mut RunConfig) -> Result<()> {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { c.$f = v; })*};
        }
        set!(strategy, random_resample, beta_mode, iterations, batch_size, hidden, learning_rate, entropy_mode, entropy_coef, rewo_nu, rewo_kappa, eval_every, eval_draws, precision);
        if let Some(s) = self.eval_seed {
            c.eval_seed = Some(s);
        }
        if self.k.is_some() || self.l_max.is_some() {
            match &mut c.space {
                eclab::meanings::SpaceKind::Dyck { k, l_max } => {
                    *k = self.k.unwrap_or(*k);
                    *l_max = self.l_max.unwrap_or(*l_max);
                }
                _ => bail!("--k and --l-max apply to Dyck spaces only"),
            }
        }
        c.validate()?;
        Ok(())
    }
}

fn run_one(mut config: RunConfig, flags: RunFlags) -> Result<ExitCode> {
    if let Some(s) = flags.seed {
        config.seed = s;
    }
    if let Some(o) = &flags.out {
        config.out_dir = Some(o.display().to_string());
    }
    flags.overrides.apply(&mut config)?;
    if flags.print_config {
        println!("{}", config.to_json());
        return Ok(ExitCode::SUCCESS);
    }
    let out_dir = config.out_dir.clone().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(format!("runs/{}-{}-seed{:02}", config.name, config.strategy, config.seed))
    });
    let result = runner::run(
        &config,
        &RunOptions {
            out_dir: Some(out_dir.clone()),
            progress: !flags.quiet,
        },
    )?;
    let s = &result.summary;
    if let Some(f) = &s.failure {
        eprintln!("run failed: {f}");
        return Ok(ExitCode::FAILURE);
    }
    if let Some(m) = s.final_metrics {
        println!(
            "{}: comacc train {:.4} test {:.4}, final beta {:.4}, {} ({})",
            config.name,
            m.comacc_train,
            m.comacc_test,
            s.final_beta,
            if s.kept { "kept" } else { "excluded" },
            out_dir.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, common } => {
            let c = RunConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            run_one(c, common)
        }
        Command::Preset { name, common } => run_one(preset(&name)?, common),
        Command::Sweep {
            preset: name,
            seeds,
            jobs,
            strategies,
            out,
            overrides,
        } => {
            if seeds == 0 {
                bail!("--seeds must be at least 1");
            }
            let mut base = preset(&name)?;
            overrides.apply(&mut base)?;
            let opts = SweepOptions {
                strategies: strategies.unwrap_or_else(|| Branching::ALL.to_vec()),
                seeds: (0..seeds).collect(),
                jobs: jobs.max(1),
                out_dir: out.clone(),
                progress: false,
            };
            let rows = runner::sweep(&base, &opts)?;
            for r in rows.iter().filter(|r| r.kind == "mean") {
                println!(
                    "{:<8} {}: comacc train {:.4} test {:.4}",
                    r.strategy, r.status, r.comacc_train, r.comacc_test
                );
            }
            println!("wrote {}", out.join("aggregate.csv").display());
            let failed = rows.iter().filter(|r| r.status == "failed").count();
            Ok(if failed > 0 {
                eprintln!("{failed} run(s) failed");
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Report { inputs, out } => {
            for path in runner::report(&inputs, &out)? {
                println!("{}", path.display());
            }
            println!("{}", out.join("plotted.csv").display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
