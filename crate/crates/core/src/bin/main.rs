use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use maxent_games::inference::prior_belief;
use maxent_games::merge::{MergeConfig, MergeScenario};
use maxent_games::planner::qmdp_policy;
use maxent_games::sim::{
    default_perturbation, lower_triangle, run_episode, run_matrix, run_perturb, EpisodeConfig, EpisodeLog,
    Perturbation, Rates, Scheduling, StrategyKind,
};
use maxent_games::toy::{exact_maxent_ne, exact_ne, QuadratureGrid, ToyGame};

#[derive(Parser)]
#[command(version, about = "Multimodal maximum-entropy game planning: toy example and lane-merge simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact and LQ solutions of the one-step toy game.
    Toy(ToyArgs),
    /// One merge episode.
    Merge(MergeArgs),
    /// Success rates for every strategy pair over several seeds.
    Matrix(BatchArgs),
    /// Paired ML and QMDP episodes against a disturbed opponent.
    Perturb(BatchArgs),
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Cost offset of player 2's left target.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ScenarioArgs {
    /// TOML scenario; the built-in merge when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
}

impl ScenarioArgs {
    fn build(&self) -> Result<MergeScenario> {
        let mut cfg = match &self.scenario {
            Some(p) => MergeConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => MergeConfig::default(),
        };
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
        if let Some(dt) = self.dt {
            cfg.dt = dt;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        cfg.validate()?;
        Ok(MergeScenario::new(cfg)?)
    }
}

#[derive(Args)]
struct EpisodeArgs {
    #[arg(long, default_value = "noyield")]
    other: StrategyKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    latency_steps: Option<usize>,
    /// `sin:A,P`, `rand:S` or `none`.
    #[arg(long)]
    perturb: Option<Perturbation>,
    /// Loop rates in Hz as `ne,belief,track`; belief must equal 1/dt.
    #[arg(long)]
    rates: Option<Rates>,
    #[arg(long, default_value = "multirate")]
    scheduling: Scheduling,
    /// Maximum control steps per episode.
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Standard deviation of the noise on applied controls.
    #[arg(long, default_value_t = 1e-3)]
    noise: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl EpisodeArgs {
    /// Without `--rates`, re-solves every 10 control steps and tracks at 5
    /// ticks per step, whatever `dt` is.
    fn config(&self, ego: StrategyKind, scenario: &MergeScenario, latency: usize, perturbation: Perturbation) -> EpisodeConfig {
        let dt = scenario.config.dt;
        EpisodeConfig {
            ego,
            other: self.other,
            seed: self.seed,
            steps: self.steps,
            latency_steps: self.latency_steps.unwrap_or(latency),
            perturbation: self.perturb.unwrap_or(perturbation),
            rates: self.rates.unwrap_or(Rates {
                ne: 0.1 / dt,
                belief: 1.0 / dt,
                track: 5.0 / dt,
            }),
            scheduling: self.scheduling,
            process_noise: self.noise,
            ..EpisodeConfig::default()
        }
    }
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long, default_value = "qmdp")]
    ego: StrategyKind,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    episode: EpisodeArgs,
}

#[derive(Args)]
struct BatchArgs {
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    episode: EpisodeArgs,
}

impl BatchArgs {
    fn seed_list(&self) -> Vec<u64> {
        (self.episode.seed..self.episode.seed + self.seeds).collect()
    }
}

fn stem(log: &EpisodeLog) -> String {
    let c = &log.config;
    format!("{}_vs_{}_seed{}", c.ego, c.other, c.seed).to_lowercase()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct ToyMode {
    mode: usize,
    converged: bool,
    mean: [f64; 2],
    variance: [f64; 2],
    /// Player 1's value at the origin.
    ego_value: f64,
}

#[derive(Serialize)]
struct ToySummary {
    beta: f64,
    epsilon: f64,
    exact_ne: [f64; 2],
    exact_maxent_mean: [f64; 2],
    exact_maxent_variance: [f64; 2],
    modes: Vec<ToyMode>,
    prior: Vec<f64>,
    qmdp_ego_mean: f64,
}

fn toy(args: &ToyArgs) -> Result<()> {
    let game = ToyGame::new(args.epsilon, args.beta)?;
    let (u1, u2) = exact_ne(&game);
    let (pi1, pi2) = exact_maxent_ne(&game, QuadratureGrid::default())?;
    let bank = game.mode_bank()?;
    let x0 = game.x0();
    let modes: Vec<ToyMode> = bank
        .modes
        .iter()
        .map(|m| ToyMode {
            mode: m.mode,
            converged: m.diagnostics.converged,
            mean: [0, 1].map(|i| m.policies[i].mean(0, &x0)[0]),
            variance: [0, 1].map(|i| m.policies[i].covariance(0)[(0, 0)]),
            ego_value: m.values[0].eval(0, &x0),
        })
        .collect();
    let prior = prior_belief(&bank, &x0, bank.beta());
    let qmdp = qmdp_policy(&prior, &bank, 0, 0, &x0)?;

    fs::create_dir_all(&args.out)?;
    let path = args.out.join("toy_densities.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["u".to_string(), "pi1_exact".into(), "pi2_exact".into()];
    for m in &modes {
        header.extend([format!("pi1_lq_mode{}", m.mode), format!("pi2_lq_mode{}", m.mode)]);
    }
    w.write_record(&header)?;
    let gauss = |u: f64, m: f64, v: f64| (-(u - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    for k in 0..=1200 {
        let u = -3.0 + 6.0 * k as f64 / 1200.0;
        let mut row = vec![u, pi1.eval(u), pi2.eval(u)];
        for m in &modes {
            row.extend([0, 1].map(|i| gauss(u, m.mean[i], m.variance[i])));
        }
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;

    let summary = ToySummary {
        beta: args.beta,
        epsilon: args.epsilon,
        exact_ne: [u1, u2],
        exact_maxent_mean: [pi1.mean(), pi2.mean()],
        exact_maxent_variance: [pi1.variance(), pi2.variance()],
        modes,
        prior: prior.probs().to_vec(),
        qmdp_ego_mean: qmdp.control[0],
    };
    write_json(&args.out.join("toy_summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn merge(args: &MergeArgs) -> Result<()> {
    let sc = args.scenario.build()?;
    let cfg = args.episode.config(args.ego, &sc, 0, Perturbation::None);
    let log = run_episode(&cfg, &sc)?;
    let paths = log.write_files(&args.episode.out, &stem(&log))?;
    let s = log.summary();
    println!(
        "{} vs {} seed {}: {} at t = {:.2} s, min distance {:.3} m",
        s.ego, s.other, s.seed, s.outcome, s.outcome_time, s.min_distance
    );
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn matrix(args: &BatchArgs) -> Result<()> {
    let sc = args.scenario.build()?;
    let base = args.episode.config(StrategyKind::Qmdp, &sc, 0, Perturbation::None);
    let out = &args.episode.out;
    let result = run_matrix(&lower_triangle(), &args.seed_list(), &base, &sc, |log| {
        let s = log.summary();
        eprintln!("{} vs {} seed {}: {}", s.ego, s.other, s.seed, s.outcome);
        log.write_files(out, &stem(log)).map(|_| ())
    })?;
    write_json(&out.join("matrix.json"), &result)?;
    print!("{}", result.table());
    Ok(())
}

fn perturb(args: &BatchArgs) -> Result<()> {
    let sc = args.scenario.build()?;
    let base = args.episode.config(StrategyKind::Ml, &sc, 2, default_perturbation(&sc));
    let out = &args.episode.out;
    let pairs = run_perturb(&args.seed_list(), &base, &sc, |log| log.write_files(out, &stem(log)).map(|_| ()))?;
    write_json(&out.join("perturb.json"), &pairs)?;
    println!("{:>6} {:>10} {:>10} {:>7}", "seed", "ML TV", "QMDP TV", "ratio");
    for p in &pairs {
        println!("{:>6} {:>10.3} {:>10.3} {:>7.2}", p.seed, p.ml_accel_tv, p.qmdp_accel_tv, p.ratio());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::init();
    match Cli::parse().command {
        Command::Toy(a) => toy(&a),
        Command::Merge(a) => merge(&a),
        Command::Matrix(a) => matrix(&a),
        Command::Perturb(a) => perturb(&a),
    }
}
