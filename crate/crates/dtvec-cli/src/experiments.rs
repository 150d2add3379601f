//! The three reference experiments: reward convergence, server-resource usage
//! versus fleet size, and delay versus pinned estimation error.
//!
//! Every experiment writes plain CSVs plus a JSON sidecar carrying the config
//! hash, seed list, and code version; plots are rendered from the same data
//! afterwards and never feed back into it. Reruns with identical specs
//! produce byte-identical CSVs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use dtvec::baselines::{policy_random, shared_baseline_train};
use dtvec::config_io::AppConfig;
use dtvec::env::VecEnv;
use dtvec::marl::{
    act, run_policy, train, ActMode, Algorithm, Checkpoint, EpisodeMetrics, EvalStats,
    ObsNormalizer, TrainConfig,
};
use dtvec::scenario::ScenarioConfig;

use crate::plot::{LineChart, Series, PALETTE};

/// Desk-scale episode count for the convergence experiment.
pub const CONVERGENCE_EPISODES: usize = 150;
/// Desk-scale episode count per sweep point of the resource experiment.
pub const SWEEP_EPISODES: usize = 60;
/// Trailing moving-average window for convergence curves.
pub const SMOOTHING_WINDOW: usize = 20;
/// Vehicle counts for the resource sweep.
pub const SWEEP_N_VEHICLES: [usize; 3] = [2, 4, 6];
/// Pinned estimation errors (Hz) for the delay sweep.
pub const SWEEP_DT_ERRORS_HZ: [f64; 3] = [-0.2e9, 0.0, 0.2e9];
/// Offset separating evaluation RNG streams from training streams.
const EVAL_SEED_OFFSET: u64 = 0x5EED_0000;

/// Which variable an experiment sweeps.
#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    None,
    NVehicles(Vec<usize>),
    DtErrorFixed(Vec<f64>),
}

/// A fully specified experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: String,
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub sweep: Sweep,
    pub eval_episodes: usize,
    pub eval_steps: usize,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    /// Reward-convergence regime: four vehicles, estimation error pinned to
    /// +0.2 GHz.
    pub fn convergence(base: &AppConfig, out_dir: PathBuf) -> Self {
        let mut scenario = base.scenario.clone();
        scenario.n_vehicles = 4;
        scenario.dt_error_fixed_hz = Some(0.2e9);
        let mut train = base.train.clone();
        train.episodes = CONVERGENCE_EPISODES;
        Self {
            name: "convergence".into(),
            scenario,
            train,
            seeds: vec![1, 2, 3],
            sweep: Sweep::None,
            eval_episodes: 10,
            eval_steps: 100,
            out_dir,
        }
    }

    /// Resource-usage sweep over fleet sizes.
    pub fn resources(base: &AppConfig, out_dir: PathBuf) -> Self {
        let mut spec = Self::convergence(base, out_dir);
        spec.name = "resources".into();
        spec.train.episodes = SWEEP_EPISODES;
        spec.sweep = Sweep::NVehicles(SWEEP_N_VEHICLES.to_vec());
        spec
    }

    /// Delay sweep over pinned estimation errors, evaluating a trained policy.
    pub fn dt_errors(base: &AppConfig, out_dir: PathBuf) -> Self {
        let mut spec = Self::convergence(base, out_dir);
        spec.name = "dt-error".into();
        spec.sweep = Sweep::DtErrorFixed(SWEEP_DT_ERRORS_HZ.to_vec());
        spec
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            bail!("experiment needs at least one seed");
        }
        if self.eval_episodes == 0 || self.eval_steps == 0 {
            bail!("evaluation needs at least one episode and one step");
        }
        match &self.sweep {
            Sweep::None => {}
            Sweep::NVehicles(ns) => {
                if ns.is_empty() || ns.iter().any(|n| *n == 0) {
                    bail!("vehicle sweep values must be positive");
                }
            }
            Sweep::DtErrorFixed(vals) => {
                if vals.is_empty() {
                    bail!("error sweep needs at least one value");
                }
                for v in vals {
                    if self.scenario.f_alloc_min_hz + v <= 0.0 {
                        bail!("sweep value {v} Hz would zero out the effective allocation");
                    }
                }
            }
        }
        Ok(())
    }

    fn config_hash(&self) -> String {
        let app = AppConfig {
            scenario: self.scenario.clone(),
            train: self.train.clone(),
        };
        let mut hasher = Sha256::new();
        hasher.update(app.to_toml_string().unwrap_or_default());
        hasher.update(format!("{:?}|{:?}", self.seeds, self.sweep));
        format!("{:x}", hasher.finalize())
    }
}

/// JSON sidecar written next to every CSV.
fn write_sidecar(csv_path: &Path, spec: &ExperimentSpec) -> Result<()> {
    let sidecar = serde_json::json!({
        "experiment": spec.name,
        "config_sha256": spec.config_hash(),
        "seeds": spec.seeds,
        "code_version": env!("CARGO_PKG_VERSION"),
    });
    let path = csv_path.with_extension("meta.json");
    fs::write(&path, serde_json::to_string_pretty(&sidecar)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn checkpoint_path(out_dir: &Path, algo: Algorithm, n_vehicles: usize, seed: u64) -> PathBuf {
    out_dir
        .join("checkpoints")
        .join(format!("{}-n{}-seed{}.ckpt.json", algo.as_str(), n_vehicles, seed))
}

/// Loads a matching checkpoint if one exists at the canonical path, otherwise
/// trains and saves one.
fn train_or_load(
    algo: Algorithm,
    scenario: &ScenarioConfig,
    train_cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<(Checkpoint, Vec<EpisodeMetrics>)> {
    let path = checkpoint_path(out_dir, algo, scenario.n_vehicles, scenario.seed);
    if path.exists() {
        let ckpt = Checkpoint::load(&path)?;
        if ckpt.scenario == *scenario && ckpt.train == *train_cfg {
            return Ok((ckpt, Vec::new()));
        }
    }
    let mut env = VecEnv::new(scenario.clone())?;
    let output = match algo {
        Algorithm::Marl => train(&mut env, train_cfg)?,
        Algorithm::SharedBaseline => shared_baseline_train(&mut env, train_cfg)?,
    };
    let ckpt = Checkpoint::from_training(algo, scenario.clone(), train_cfg.clone(), &output);
    fs::create_dir_all(path.parent().unwrap())?;
    ckpt.save(&path)?;
    Ok((ckpt, output.history))
}

/// Greedy evaluation of a checkpointed policy on a given scenario.
/// Normalization constants come from the training scenario so the networks
/// see the layout they were trained on.
pub fn eval_checkpoint(
    ckpt: &Checkpoint,
    scenario: &ScenarioConfig,
    episodes: usize,
    steps: usize,
) -> Result<EvalStats> {
    let normalizer = ObsNormalizer::from_config(&ckpt.scenario);
    let mut env = VecEnv::new(scenario.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let stats = run_policy(
        &mut env,
        episodes,
        steps,
        |agent, obs| {
            act(
                ckpt.actor_for(agent),
                &normalizer.normalize(&obs.encode()),
                ActMode::Greedy,
                &mut rng,
            )
        },
        |_, _, _, _| {},
    )?;
    Ok(stats)
}

/// Results of the convergence experiment.
#[derive(Debug, Clone)]
pub struct ConvergenceArtifacts {
    pub curves_csv: PathBuf,
    pub smoothed_csv: PathBuf,
    pub random_csv: PathBuf,
    pub plot_png: PathBuf,
    /// `(seed, path)` of each trained policy checkpoint.
    pub marl_checkpoints: Vec<(u64, PathBuf)>,
    pub shared_checkpoints: Vec<(u64, PathBuf)>,
    /// Per-seed histories, seed order, for in-process consumers.
    pub marl_histories: Vec<Vec<EpisodeMetrics>>,
    pub shared_histories: Vec<Vec<EpisodeMetrics>>,
    /// Mean per-step reward of the uniform-random policy per seed.
    pub random_rewards: Vec<f64>,
}

/// Trains the full trainer and the shared baseline on the convergence regime
/// for every seed, plus a random-policy floor, writing reward curves and a
/// comparison plot.
pub fn run_convergence(spec: &ExperimentSpec) -> Result<ConvergenceArtifacts> {
    spec.validate()?;
    if spec.sweep != Sweep::None {
        bail!("convergence experiment does not sweep");
    }
    fs::create_dir_all(&spec.out_dir)?;

    struct SeedRun {
        seed: u64,
        marl: (Checkpoint, Vec<EpisodeMetrics>),
        shared: (Checkpoint, Vec<EpisodeMetrics>),
        random_reward: f64,
    }

    let runs: Vec<Result<SeedRun>> = spec
        .seeds
        .par_iter()
        .map(|&seed| -> Result<SeedRun> {
            let mut scenario = spec.scenario.clone();
            scenario.seed = seed;
            let mut train_cfg = spec.train.clone();
            train_cfg.seed = seed;

            let marl = train_or_load(Algorithm::Marl, &scenario, &train_cfg, &spec.out_dir)?;
            let shared =
                train_or_load(Algorithm::SharedBaseline, &scenario, &train_cfg, &spec.out_dir)?;

            // Random-policy floor on a matched evaluation stream.
            let mut eval_scenario = scenario.clone();
            eval_scenario.seed = seed + EVAL_SEED_OFFSET;
            let mut env = VecEnv::new(eval_scenario.clone())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed + EVAL_SEED_OFFSET);
            let stats = run_policy(
                &mut env,
                spec.eval_episodes,
                spec.eval_steps,
                |agent, _obs| {
                    let all = policy_random(&eval_scenario, &mut rng);
                    all[agent].clone()
                },
                |_, _, _, _| {},
            )?;
            Ok(SeedRun {
                seed,
                marl,
                shared,
                random_reward: stats.mean_reward_all(),
            })
        })
        .collect();
    let mut runs: Vec<SeedRun> = runs.into_iter().collect::<Result<Vec<_>>>()?;
    runs.sort_by_key(|r| {
        spec.seeds
            .iter()
            .position(|s| *s == r.seed)
            .unwrap_or(usize::MAX)
    });

    // Reload histories for runs that reused checkpoints (empty history).
    for run in &mut runs {
        if run.marl.1.is_empty() || run.shared.1.is_empty() {
            bail!(
                "seed {}: convergence experiment needs fresh training histories; \
                 remove stale checkpoints under {} and rerun",
                run.seed,
                spec.out_dir.join("checkpoints").display()
            );
        }
    }

    // Raw per-episode curves.
    let curves_csv = spec.out_dir.join("convergence.csv");
    {
        let mut w = csv::Writer::from_path(&curves_csv)?;
        w.write_record([
            "algorithm",
            "seed",
            "episode",
            "mean_reward",
            "critic_loss",
            "actor_objective",
            "mean_total_delay_s",
            "deadline_violations",
            "resource_usage_ghz",
        ])?;
        for run in &runs {
            for (algo, history) in [("marl", &run.marl.1), ("shared-baseline", &run.shared.1)] {
                for m in history {
                    w.write_record([
                        algo.to_string(),
                        run.seed.to_string(),
                        m.episode.to_string(),
                        m.mean_reward_all().to_string(),
                        m.critic_loss.to_string(),
                        m.actor_objective.to_string(),
                        m.mean_total_delay_s.to_string(),
                        m.deadline_violations.to_string(),
                        m.resource_usage_ghz.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
    }
    write_sidecar(&curves_csv, spec)?;

    // Seed-averaged, trailing-mean smoothed curves.
    let episodes = spec.train.episodes;
    let seed_mean = |histories: &[&Vec<EpisodeMetrics>]| -> Vec<f64> {
        (0..episodes)
            .map(|e| {
                histories.iter().map(|h| h[e].mean_reward_all()).sum::<f64>()
                    / histories.len() as f64
            })
            .collect()
    };
    let marl_refs: Vec<&Vec<EpisodeMetrics>> = runs.iter().map(|r| &r.marl.1).collect();
    let shared_refs: Vec<&Vec<EpisodeMetrics>> = runs.iter().map(|r| &r.shared.1).collect();
    let marl_mean = seed_mean(&marl_refs);
    let shared_mean = seed_mean(&shared_refs);
    let marl_smooth = trailing_mean(&marl_mean, SMOOTHING_WINDOW);
    let shared_smooth = trailing_mean(&shared_mean, SMOOTHING_WINDOW);

    let smoothed_csv = spec.out_dir.join("convergence_smoothed.csv");
    {
        let mut w = csv::Writer::from_path(&smoothed_csv)?;
        w.write_record(["algorithm", "episode", "mean_reward", "smoothed_mean_reward"])?;
        for (algo, mean, smooth) in [
            ("marl", &marl_mean, &marl_smooth),
            ("shared-baseline", &shared_mean, &shared_smooth),
        ] {
            for e in 0..episodes {
                w.write_record([
                    algo.to_string(),
                    e.to_string(),
                    mean[e].to_string(),
                    smooth[e].to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    write_sidecar(&smoothed_csv, spec)?;

    let random_csv = spec.out_dir.join("random_baseline.csv");
    {
        let mut w = csv::Writer::from_path(&random_csv)?;
        w.write_record(["seed", "mean_reward"])?;
        for run in &runs {
            w.write_record([run.seed.to_string(), run.random_reward.to_string()])?;
        }
        w.flush()?;
    }
    write_sidecar(&random_csv, spec)?;

    // Plot: smoothed curves plus the random floor.
    let plot_png = spec.out_dir.join("convergence.png");
    let mut chart = LineChart::new("MEAN EPISODE REWARD", "EPISODE", "REWARD");
    chart.push(Series::new(
        "MARL",
        PALETTE[0],
        marl_smooth.iter().enumerate().map(|(i, v)| (i as f64, *v)).collect(),
    ));
    chart.push(Series::new(
        "SHARED BASELINE",
        PALETTE[1],
        shared_smooth.iter().enumerate().map(|(i, v)| (i as f64, *v)).collect(),
    ));
    let random_mean =
        runs.iter().map(|r| r.random_reward).sum::<f64>() / runs.len() as f64;
    chart.push(Series::new(
        "RANDOM",
        PALETTE[3],
        vec![(0.0, random_mean), ((episodes - 1) as f64, random_mean)],
    ));
    chart.save_png(&plot_png)?;

    Ok(ConvergenceArtifacts {
        curves_csv,
        smoothed_csv,
        random_csv,
        plot_png,
        marl_checkpoints: runs
            .iter()
            .map(|r| {
                (
                    r.seed,
                    checkpoint_path(&spec.out_dir, Algorithm::Marl, spec.scenario.n_vehicles, r.seed),
                )
            })
            .collect(),
        shared_checkpoints: runs
            .iter()
            .map(|r| {
                (
                    r.seed,
                    checkpoint_path(
                        &spec.out_dir,
                        Algorithm::SharedBaseline,
                        spec.scenario.n_vehicles,
                        r.seed,
                    ),
                )
            })
            .collect(),
        marl_histories: runs.iter().map(|r| r.marl.1.clone()).collect(),
        shared_histories: runs.iter().map(|r| r.shared.1.clone()).collect(),
        random_rewards: runs.iter().map(|r| r.random_reward).collect(),
    })
}

/// Trailing moving average with a warmup-shortened window.
pub fn trailing_mean(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(window - 1);
            let slice = &values[lo..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

/// One measured sweep point.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub n_vehicles: usize,
    pub seed: u64,
    pub stats: EvalStats,
}

#[derive(Debug, Clone)]
pub struct ResourceSweepArtifacts {
    pub csv: PathBuf,
    pub plot_png: PathBuf,
    pub rows: Vec<SweepRow>,
}

/// Trains (or reuses) both algorithms at every fleet size and records the
/// greedy policies' mean aggregate allocation per slot.
pub fn run_resource_sweep(spec: &ExperimentSpec) -> Result<ResourceSweepArtifacts> {
    spec.validate()?;
    let n_values = match &spec.sweep {
        Sweep::NVehicles(ns) => ns.clone(),
        _ => bail!("resource sweep requires a vehicle-count sweep"),
    };
    fs::create_dir_all(&spec.out_dir)?;

    let mut jobs: Vec<(usize, u64, Algorithm)> = Vec::new();
    for &n in &n_values {
        for &seed in &spec.seeds {
            jobs.push((n, seed, Algorithm::Marl));
            jobs.push((n, seed, Algorithm::SharedBaseline));
        }
    }

    let results: Vec<Result<SweepRow>> = jobs
        .par_iter()
        .map(|&(n, seed, algo)| -> Result<SweepRow> {
            let mut scenario = spec.scenario.clone();
            scenario.n_vehicles = n;
            scenario.seed = seed;
            let mut train_cfg = spec.train.clone();
            train_cfg.seed = seed;
            let (ckpt, _) = train_or_load(algo, &scenario, &train_cfg, &spec.out_dir)?;

            let mut eval_scenario = scenario.clone();
            eval_scenario.seed = seed + EVAL_SEED_OFFSET;
            let stats = eval_checkpoint(&ckpt, &eval_scenario, spec.eval_episodes, spec.eval_steps)?;
            Ok(SweepRow {
                algorithm: algo,
                n_vehicles: n,
                seed,
                stats,
            })
        })
        .collect();
    let mut rows: Vec<SweepRow> = results.into_iter().collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| {
        (
            r.n_vehicles,
            spec.seeds.iter().position(|s| *s == r.seed).unwrap_or(usize::MAX),
            r.algorithm != Algorithm::Marl,
        )
    });

    let csv_path = spec.out_dir.join("resource_sweep.csv");
    {
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record([
            "algorithm",
            "n_vehicles",
            "seed",
            "mean_resource_ghz",
            "mean_reward",
            "mean_total_delay_s",
            "deadline_violations",
        ])?;
        for r in &rows {
            w.write_record([
                r.algorithm.as_str().to_string(),
                r.n_vehicles.to_string(),
                r.seed.to_string(),
                r.stats.mean_resource_ghz.to_string(),
                r.stats.mean_reward_all().to_string(),
                r.stats.mean_total_delay_s.to_string(),
                r.stats.deadline_violations.to_string(),
            ])?;
        }
        w.flush()?;
    }
    write_sidecar(&csv_path, spec)?;

    // Seed-averaged usage per algorithm.
    let mean_usage = |algo: Algorithm, n: usize| -> f64 {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.algorithm == algo && r.n_vehicles == n)
            .map(|r| r.stats.mean_resource_ghz)
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    };
    let plot_png = spec.out_dir.join("resource_sweep.png");
    let mut chart = LineChart::new("SERVER RESOURCE USAGE", "VEHICLES", "ALLOCATED GHZ");
    for (i, algo) in [Algorithm::Marl, Algorithm::SharedBaseline].iter().enumerate() {
        chart.push(
            Series::new(
                match algo {
                    Algorithm::Marl => "MARL",
                    Algorithm::SharedBaseline => "SHARED BASELINE",
                },
                PALETTE[i],
                n_values
                    .iter()
                    .map(|&n| (n as f64, mean_usage(*algo, n)))
                    .collect(),
            )
            .with_markers(),
        );
    }
    chart.save_png(&plot_png)?;

    Ok(ResourceSweepArtifacts {
        csv: csv_path,
        plot_png,
        rows,
    })
}

#[derive(Debug, Clone)]
pub struct DtErrorArtifacts {
    pub csv: PathBuf,
    pub plot_png: PathBuf,
    /// `(dt_error_hz, seed, stats)` in sweep order.
    pub rows: Vec<(f64, u64, EvalStats)>,
}

/// Evaluates one trained policy with the estimation error pinned to each
/// sweep value, on matched evaluation streams, and records the mean
/// per-vehicle delay.
pub fn run_dt_error_sweep(spec: &ExperimentSpec, checkpoint: &Path) -> Result<DtErrorArtifacts> {
    spec.validate()?;
    let values = match &spec.sweep {
        Sweep::DtErrorFixed(vals) => vals.clone(),
        _ => bail!("estimation-error sweep requires error values"),
    };
    fs::create_dir_all(&spec.out_dir)?;
    let ckpt = Checkpoint::load(checkpoint)?;

    let mut rows = Vec::new();
    for &value in &values {
        for &seed in &spec.seeds {
            let mut scenario = ckpt.scenario.clone();
            scenario.dt_error_fixed_hz = Some(value);
            // Matched streams: the seed depends only on the seed index, so
            // every error value sees identical traffic and fading.
            scenario.seed = seed + EVAL_SEED_OFFSET;
            let stats = eval_checkpoint(&ckpt, &scenario, spec.eval_episodes, spec.eval_steps)?;
            rows.push((value, seed, stats));
        }
    }

    let csv_path = spec.out_dir.join("dt_error_sweep.csv");
    {
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record([
            "dt_error_ghz",
            "seed",
            "mean_total_delay_s",
            "mean_reward",
            "mean_resource_ghz",
        ])?;
        for (value, seed, stats) in &rows {
            w.write_record([
                (value / 1e9).to_string(),
                seed.to_string(),
                stats.mean_total_delay_s.to_string(),
                stats.mean_reward_all().to_string(),
                stats.mean_resource_ghz.to_string(),
            ])?;
        }
        w.flush()?;
    }
    write_sidecar(&csv_path, spec)?;

    let plot_png = spec.out_dir.join("dt_error_sweep.png");
    let mut chart = LineChart::new("DELAY VS ESTIMATION ERROR", "ERROR GHZ", "MEAN DELAY S");
    let mean_delay = |value: f64| -> f64 {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|(v, _, _)| *v == value)
            .map(|(_, _, s)| s.mean_total_delay_s)
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    };
    chart.push(
        Series::new(
            "TRAINED POLICY",
            PALETTE[0],
            values.iter().map(|&v| (v / 1e9, mean_delay(v))).collect(),
        )
        .with_markers(),
    );
    chart.save_png(&plot_png)?;

    Ok(DtErrorArtifacts {
        csv: csv_path,
        plot_png,
        rows,
    })
}

/// Per-slot trace of an evaluation rollout, one row per task.
pub fn write_trace_csv(
    path: &Path,
    ckpt: &Checkpoint,
    scenario: &ScenarioConfig,
    episodes: usize,
    steps: usize,
) -> Result<EvalStats> {
    let normalizer = ObsNormalizer::from_config(&ckpt.scenario);
    let mut env = VecEnv::new(scenario.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "episode",
        "slot",
        "vehicle",
        "task",
        "offload_ratio",
        "alloc_hz",
        "dt_error_hz",
        "gain",
        "rate_bps",
        "t_local_s",
        "t_tx_s",
        "t_edge_compute_s",
        "dt_bias_s",
        "t_edge_s",
        "t_exe_s",
        "vehicle_total_delay_s",
        "reward",
        "deadline_violations",
    ])?;
    let stats = run_policy(
        &mut env,
        episodes,
        steps,
        |agent, obs| {
            act(
                ckpt.actor_for(agent),
                &normalizer.normalize(&obs.encode()),
                ActMode::Greedy,
                &mut rng,
            )
        },
        |episode, slot, _action, outcome| {
            for (v_idx, v) in outcome.vehicles.iter().enumerate() {
                for (t_idx, b) in v.breakdowns.iter().enumerate() {
                    w.write_record([
                        episode.to_string(),
                        slot.to_string(),
                        v_idx.to_string(),
                        t_idx.to_string(),
                        v.offload_ratios[t_idx].to_string(),
                        v.alloc_hz[t_idx].to_string(),
                        v.dt_errors_hz[t_idx].to_string(),
                        v.gain.to_string(),
                        v.rate_bps.to_string(),
                        b.t_local_s.to_string(),
                        b.t_tx_s.to_string(),
                        b.t_edge_compute_s.to_string(),
                        b.dt_bias_s.to_string(),
                        b.t_edge_s.to_string(),
                        b.t_exe_s.to_string(),
                        v.total_delay_s.to_string(),
                        v.reward.to_string(),
                        v.deadline_violations.to_string(),
                    ])
                    .expect("trace write");
                }
            }
        },
    )?;
    w.flush()?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_mean_window() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let sm = trailing_mean(&xs, 2);
        assert_eq!(sm, vec![1.0, 1.5, 2.5, 3.5]);
        let sm1 = trailing_mean(&xs, 1);
        assert_eq!(sm1, xs.to_vec());
    }

    #[test]
    fn spec_validation() {
        let base = AppConfig::default();
        let spec = ExperimentSpec::convergence(&base, PathBuf::from("/tmp/x"));
        spec.validate().unwrap();
        assert_eq!(spec.scenario.dt_error_fixed_hz, Some(0.2e9));
        assert_eq!(spec.scenario.n_vehicles, 4);

        let mut bad = spec.clone();
        bad.seeds.clear();
        assert!(bad.validate().is_err());

        let mut bad = spec;
        bad.sweep = Sweep::DtErrorFixed(vec![-2.0e9]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_hash_stable_and_sensitive() {
        let base = AppConfig::default();
        let a = ExperimentSpec::convergence(&base, PathBuf::from("/tmp/x"));
        let b = ExperimentSpec::convergence(&base, PathBuf::from("/tmp/y"));
        assert_eq!(a.config_hash(), b.config_hash()); // out_dir not hashed

        let mut c = a.clone();
        c.scenario.bandwidth_hz *= 2.0;
        assert_ne!(a.config_hash(), c.config_hash());
    }
}
