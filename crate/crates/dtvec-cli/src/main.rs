//! Command-line interface: training, evaluation, experiment sweeps, the
//! single-slot oracle, and config validation.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dtvec::baselines::shared_baseline_train;
use dtvec::config_io::AppConfig;
use dtvec::env::VecEnv;
use dtvec::marl::{train, Algorithm, Checkpoint, EpisodeMetrics};
use dtvec::oracle::{brute_force_p1, P1InstanceFile};

use dtvec_cli::experiments::{
    eval_checkpoint, run_convergence, run_dt_error_sweep, run_resource_sweep, write_trace_csv,
    ExperimentSpec, Sweep, SWEEP_DT_ERRORS_HZ, SWEEP_N_VEHICLES,
};

#[derive(Parser)]
#[command(
    name = "dtvec",
    version,
    about = "Digital-twin vehicular edge computing: simulator, trainer, experiments"
)]
struct Cli {
    /// Config file (TOML with [scenario] and [train] sections). Omitted keys
    /// use built-in defaults; command-line flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum AlgoArg {
    Marl,
    Shared,
}

#[derive(Args)]
struct ScenarioOverrides {
    /// Scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of vehicles.
    #[arg(long)]
    n_vehicles: Option<usize>,
    /// Pin every estimation error to this value, in GHz.
    #[arg(long)]
    dt_error_fixed: Option<f64>,
}

impl ScenarioOverrides {
    fn apply(&self, cfg: &mut AppConfig) {
        if let Some(seed) = self.seed {
            cfg.scenario.seed = seed;
            cfg.train.seed = seed;
        }
        if let Some(n) = self.n_vehicles {
            cfg.scenario.n_vehicles = n;
        }
        if let Some(ghz) = self.dt_error_fixed {
            cfg.scenario.dt_error_fixed_hz = Some(ghz * 1e9);
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one algorithm and write a checkpoint plus a metrics CSV.
    Train {
        #[arg(long, value_enum, default_value = "marl")]
        algo: AlgoArg,
        #[command(flatten)]
        overrides: ScenarioOverrides,
        /// Override the number of training episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Override the steps per episode.
        #[arg(long)]
        steps: Option<usize>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint greedily and report aggregate statistics.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        overrides: ScenarioOverrides,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Also write a per-slot trace CSV.
        #[arg(long)]
        trace: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run one of the reference experiments.
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Sweep values: vehicle counts for `resources`, errors in GHz for
        /// `dt-error`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Option<Vec<f64>>,
        /// Override the number of training episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Checkpoint to evaluate (dt-error sweep only).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Solve a single-slot instance file exactly by grid enumeration.
    Oracle {
        /// Instance file (TOML).
        #[arg(long)]
        instance: PathBuf,
        /// Optional CSV to write the solution to.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a config file and exit.
    ValidateConfig,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SweepKind {
    Convergence,
    Resources,
    DtError,
}

fn load_config(path: &Option<PathBuf>) -> Result<AppConfig> {
    let cfg = match path {
        Some(p) => AppConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => AppConfig::default(),
    };
    Ok(cfg)
}

fn write_history_csv(path: &PathBuf, history: &[EpisodeMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "episode",
        "mean_reward",
        "critic_loss",
        "actor_objective",
        "mean_total_delay_s",
        "deadline_violations",
        "resource_usage_ghz",
    ])?;
    for m in history {
        w.write_record([
            m.episode.to_string(),
            m.mean_reward_all().to_string(),
            m.critic_loss.to_string(),
            m.actor_objective.to_string(),
            m.mean_total_delay_s.to_string(),
            m.deadline_violations.to_string(),
            m.resource_usage_ghz.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            algo,
            overrides,
            episodes,
            steps,
            out,
        } => {
            let mut cfg = load_config(&cli.config)?;
            overrides.apply(&mut cfg);
            if let Some(e) = episodes {
                cfg.train.episodes = e;
            }
            if let Some(s) = steps {
                cfg.train.steps_per_episode = s;
            }
            cfg.validate()?;
            fs::create_dir_all(&out)?;

            let mut env = VecEnv::new(cfg.scenario.clone())?;
            let (algorithm, output) = match algo {
                AlgoArg::Marl => (Algorithm::Marl, train(&mut env, &cfg.train)?),
                AlgoArg::Shared => (
                    Algorithm::SharedBaseline,
                    shared_baseline_train(&mut env, &cfg.train)?,
                ),
            };
            let ckpt = Checkpoint::from_training(
                algorithm,
                cfg.scenario.clone(),
                cfg.train.clone(),
                &output,
            );
            let ckpt_path = out.join(format!(
                "{}-n{}-seed{}.ckpt.json",
                algorithm.as_str(),
                cfg.scenario.n_vehicles,
                cfg.scenario.seed
            ));
            ckpt.save(&ckpt_path)?;
            let csv_path = out.join(format!(
                "{}-n{}-seed{}-history.csv",
                algorithm.as_str(),
                cfg.scenario.n_vehicles,
                cfg.scenario.seed
            ));
            write_history_csv(&csv_path, &output.history)?;
            let last = output.history.last().expect("at least one episode");
            println!(
                "trained {} for {} episodes: final mean reward {:.3}, checkpoint {}",
                algorithm.as_str(),
                output.history.len(),
                last.mean_reward_all(),
                ckpt_path.display()
            );
        }
        Command::Evaluate {
            checkpoint,
            overrides,
            episodes,
            steps,
            trace,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let mut scenario = ckpt.scenario.clone();
            let mut shim = AppConfig::default();
            shim.scenario = scenario.clone();
            overrides.apply(&mut shim);
            scenario = shim.scenario;
            scenario.validate()?;
            fs::create_dir_all(&out)?;

            let stats = if trace {
                let trace_path = out.join("trace.csv");
                let stats = write_trace_csv(&trace_path, &ckpt, &scenario, episodes, steps)?;
                println!("trace written to {}", trace_path.display());
                stats
            } else {
                eval_checkpoint(&ckpt, &scenario, episodes, steps)?
            };
            println!(
                "evaluated {} on {} episodes: mean reward {:.3}, mean delay {:.3} ms, \
                 mean usage {:.2} GHz, deadline violations {}",
                ckpt.algorithm.as_str(),
                episodes,
                stats.mean_reward_all(),
                stats.mean_total_delay_s * 1e3,
                stats.mean_resource_ghz,
                stats.deadline_violations
            );
        }
        Command::Sweep {
            kind,
            seeds,
            values,
            episodes,
            checkpoint,
            out,
        } => {
            let base = load_config(&cli.config)?;
            let mut spec = match kind {
                SweepKind::Convergence => ExperimentSpec::convergence(&base, out),
                SweepKind::Resources => ExperimentSpec::resources(&base, out),
                SweepKind::DtError => ExperimentSpec::dt_errors(&base, out),
            };
            if let Some(seeds) = seeds {
                spec.seeds = seeds;
            }
            if let Some(e) = episodes {
                spec.train.episodes = e;
            }
            match kind {
                SweepKind::Convergence => {
                    if values.is_some() {
                        bail!("the convergence experiment does not take sweep values");
                    }
                    let artifacts = run_convergence(&spec)?;
                    println!("curves: {}", artifacts.curves_csv.display());
                    println!("plot: {}", artifacts.plot_png.display());
                }
                SweepKind::Resources => {
                    if let Some(values) = values {
                        let ns = values
                            .iter()
                            .map(|v| {
                                if *v >= 1.0 && v.fract() == 0.0 {
                                    Ok(*v as usize)
                                } else {
                                    bail!("vehicle counts must be positive integers, got {v}")
                                }
                            })
                            .collect::<Result<Vec<_>>>()?;
                        spec.sweep = Sweep::NVehicles(ns);
                    } else {
                        spec.sweep = Sweep::NVehicles(SWEEP_N_VEHICLES.to_vec());
                    }
                    let artifacts = run_resource_sweep(&spec)?;
                    println!("sweep: {}", artifacts.csv.display());
                    println!("plot: {}", artifacts.plot_png.display());
                }
                SweepKind::DtError => {
                    let ckpt_path = checkpoint
                        .ok_or_else(|| anyhow::anyhow!("--checkpoint is required for dt-error"))?;
                    if let Some(values) = values {
                        spec.sweep =
                            Sweep::DtErrorFixed(values.iter().map(|v| v * 1e9).collect());
                    } else {
                        spec.sweep = Sweep::DtErrorFixed(SWEEP_DT_ERRORS_HZ.to_vec());
                    }
                    let artifacts = run_dt_error_sweep(&spec, &ckpt_path)?;
                    println!("sweep: {}", artifacts.csv.display());
                    println!("plot: {}", artifacts.plot_png.display());
                }
            }
        }
        Command::Oracle { instance, out } => {
            let text = fs::read_to_string(&instance)
                .with_context(|| format!("reading {}", instance.display()))?;
            let file = P1InstanceFile::parse(&text)?;
            let (inst, grids, budget) = file.to_parts();
            let solution = brute_force_p1(&inst, &grids, budget)?;
            for (v, (decisions, delay)) in solution
                .decisions
                .iter()
                .zip(&solution.delays_s)
                .enumerate()
            {
                for (k, d) in decisions.iter().enumerate() {
                    println!(
                        "vehicle {v} task {k}: omega = {}, alloc = {} GHz",
                        d.offload_ratio,
                        d.dt_alloc_hz / 1e9
                    );
                }
                println!("vehicle {v} delay = {delay:.6e} s");
            }
            if let Some(out) = out {
                let mut w = csv::Writer::from_path(&out)?;
                w.write_record(["vehicle", "task", "offload_ratio", "alloc_hz", "delay_s"])?;
                for (v, (decisions, delay)) in solution
                    .decisions
                    .iter()
                    .zip(&solution.delays_s)
                    .enumerate()
                {
                    for (k, d) in decisions.iter().enumerate() {
                        w.write_record([
                            v.to_string(),
                            k.to_string(),
                            d.offload_ratio.to_string(),
                            d.dt_alloc_hz.to_string(),
                            delay.to_string(),
                        ])?;
                    }
                }
                w.flush()?;
                println!("solution written to {}", out.display());
            }
        }
        Command::ValidateConfig => {
            let cfg = load_config(&cli.config)?;
            cfg.validate()?;
            println!("config ok");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
