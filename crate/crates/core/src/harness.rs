//! Command-line experiment harness: dataset collection, training, evaluation,
//! hyperparameter sweeps, and figure reproduction as plot-ready CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::algos::{
    density_estimate, fqi_air_sampled, fqi_air_sweep, fqi_baseline, mb_plan, mbs_qi, traj_sim_online, Agent,
    CurvePoint, MaskFloor, PlanModel, Policy, SampledConfig, SimConfig,
};
use crate::approx::{FClass, FitConfig, OptimizerKind, DEFAULT_HIDDEN};
use crate::collect::{behavior_policy, collect_dataset, make_env, train_online_collector, BehaviorKind, CollectorConfig};
use crate::config::Config;
use crate::dataset::{read_dataset, write_dataset};
use crate::envs::{Environment, INVENTORY_SWEEP_MAX, ORDER_SHARES};
use crate::error::{Error, Result};
use crate::eval::{j_hat_with_zeta, j_true_mc, mean_stderr, select_hyperparams, EvalReport, SelectContext, DEFAULT_ZETA};
use crate::models::{fit_dynamics_model, fit_endo_model, DynamicsKind, EndoFitOptions, EndoModel};
use crate::rng::RngStream;
use crate::types::{AirSpec, Dataset, Endo, EndoKind};

#[derive(Debug, Parser)]
#[command(name = "air-rl", about = "Offline RL with recorded exogenous trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Roll out a behaviour policy and write a dataset CSV plus its `.meta` file.
    Collect(CollectArgs),
    /// Train a policy from a dataset and write it as JSON.
    Train(TrainArgs),
    /// Score a policy offline on a dataset or online in a simulator.
    Evaluate(EvaluateArgs),
    /// Train one policy per value of a config key and keep the best by offline Ĵ.
    Sweep(SweepArgs),
    /// Regenerate the CSV behind one of the benchmark figures.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
struct CollectArgs {
    #[arg(long)]
    env: String,
    #[arg(long)]
    policy: String,
    #[arg(long)]
    episodes: usize,
    #[arg(long = "eps-air", default_value_t = 0.0)]
    eps_air: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Settings of the online collector for `--policy learned`.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    algo: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    policy: PathBuf,
    /// Offline Ĵ on this dataset.
    #[arg(long, conflicts_with = "env")]
    data: Option<PathBuf>,
    /// Online Monte Carlo return in this simulator.
    #[arg(long)]
    env: Option<String>,
    #[arg(long = "eps-air", default_value_t = 0.0)]
    eps_air: f64,
    /// Seed of the simulator instance; defaults to `--seed`.
    #[arg(long = "env-seed")]
    env_seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    rollouts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    algo: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    key: String,
    /// Comma-separated candidate values.
    #[arg(long)]
    values: String,
    /// Directory receiving `scores.csv` and `best_policy.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    #[arg(long)]
    figure: String,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Runs the CLI on `args` (including the program name).
pub fn run_cli(args: &[String]) -> Result<()> {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::invalid(e.to_string())),
    };
    match cli.command {
        Command::Collect(a) => cmd_collect(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Reproduce(a) => cmd_reproduce(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        None => Ok(Config::default()),
        Some(p) => Config::parse(&fs::read_to_string(p).map_err(|e| Error::file(p, e))?),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

/// Largest absolute per-step reward of a benchmark environment.
pub fn r_max_for(env: &str) -> f64 {
    match env {
        "order" => 5.0,
        "inventory" => 100.0,
        _ => 1.0,
    }
}

/// The endogenous grid swept by the FQI-AIR family for a dataset.
pub fn endo_sweep_for(d: &Dataset, sweep_max: u32) -> Vec<Endo> {
    match (d.meta.env.as_str(), d.meta.endo_kind) {
        ("order", _) => (0..=ORDER_SHARES).map(Endo::Int).collect(),
        (_, EndoKind::Real(_)) => (0..=sweep_max).map(|k| Endo::Real(vec![k as f64])).collect(),
        (_, EndoKind::Int) => {
            let hi = d
                .episodes
                .iter()
                .flat_map(|ep| ep.steps.iter().map(|s| &s.state).chain(std::iter::once(&ep.terminal)))
                .filter_map(|s| s.endo.as_int())
                .max()
                .unwrap_or(0);
            (0..=hi).map(Endo::Int).collect()
        }
    }
}

pub fn spec_for(d: &Dataset, sweep_max: u32) -> Result<AirSpec> {
    AirSpec::new(d.meta.horizon, d.meta.eps_air, 0.0, r_max_for(&d.meta.env), d.meta.n_actions, endo_sweep_for(d, sweep_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    FqiAir,
    FqiAirSampled,
    Fqi,
    Mbs,
    MbEmpirical,
    MbExo,
    MbFull,
    TrajSim,
}

impl std::str::FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fqi-air" | "fqi_air" => Algo::FqiAir,
            "fqi-air-sampled" | "fqi_air_sampled" => Algo::FqiAirSampled,
            "fqi" => Algo::Fqi,
            "mbs" | "mbs_qi" | "mbs-qi" => Algo::Mbs,
            "mb-empirical" | "mb_empirical" => Algo::MbEmpirical,
            "mb-exo" | "mb_exo" => Algo::MbExo,
            "mb-full" | "mb_full" => Algo::MbFull,
            "traj-sim" | "traj_sim" => Algo::TrajSim,
            _ => return Err(Error::invalid(format!("unknown algorithm {s:?}"))),
        })
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algo::FqiAir => "fqi_air",
            Algo::FqiAirSampled => "fqi_air_sampled",
            Algo::Fqi => "fqi",
            Algo::Mbs => "mbs_qi",
            Algo::MbEmpirical => "mb_empirical",
            Algo::MbExo => "mb_exo",
            Algo::MbFull => "mb_full",
            Algo::TrajSim => "traj_sim",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndoChoice {
    Exact,
    Learned,
}

impl std::str::FromStr for EndoChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(EndoChoice::Exact),
            "learned" => Ok(EndoChoice::Learned),
            _ => Err(Error::invalid(format!("unknown endo model {s:?}"))),
        }
    }
}

/// Config keys accepted by `train` and `sweep`.
pub const TRAIN_KEYS: &[&str] = &[
    "fclass",
    "hidden",
    "lr",
    "optimizer",
    "iterations",
    "batch",
    "warm_start",
    "seed",
    "b",
    "bins",
    "mask_floor",
    "B",
    "K",
    "M",
    "endo_sweep_max",
    "zeta",
    "endo_model",
    "model_updates",
    "agent",
    "epsilon",
    "sim_iterations",
    "updates",
];

/// Training settings read from a config file.
///
/// `iterations` is the number of mini-batch updates per MLP fit. `traj-sim` runs
/// `sim_iterations` simulation rounds of `updates` gradient steps each.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub fclass: FClass,
    pub fit: FitConfig,
    pub b: f64,
    pub bins: usize,
    pub mask_floor: Option<MaskFloor>,
    pub sampled: SampledConfig,
    pub endo_sweep_max: u32,
    pub zeta: f64,
    pub endo_model: EndoChoice,
    pub model_updates: usize,
    pub agent: Agent,
    pub sim: SimConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            fclass: FClass::Mlp { hidden: DEFAULT_HIDDEN },
            fit: FitConfig { updates: 200, ..FitConfig::default() },
            b: 0.001,
            bins: 10,
            mask_floor: None,
            sampled: SampledConfig::default(),
            endo_sweep_max: INVENTORY_SWEEP_MAX,
            zeta: DEFAULT_ZETA,
            endo_model: EndoChoice::Exact,
            model_updates: 3000,
            agent: Agent::QLearning,
            sim: SimConfig::default(),
        }
    }
}

impl TrainSettings {
    pub fn from_config(c: &Config) -> Result<Self> {
        let d = TrainSettings::default();
        let hidden = c.get_or("hidden", DEFAULT_HIDDEN)?;
        let fclass = match c.get::<FClass>("fclass")? {
            Some(FClass::Mlp { .. }) | None => FClass::Mlp { hidden },
            Some(other) => other,
        };
        let fit = FitConfig {
            optimizer: c.get_or::<OptimizerKind>("optimizer", d.fit.optimizer)?,
            lr: c.get_or("lr", d.fit.lr)?,
            batch_size: c.get_or("batch", d.fit.batch_size)?,
            updates: c.get_or("iterations", d.fit.updates)?,
            seed: c.get_or("seed", d.fit.seed)?,
            warm_start: c.get_or("warm_start", d.fit.warm_start)?,
        };
        fit.validate()?;
        let mask_floor = match c.raw("mask_floor") {
            None => None,
            Some("zero") => Some(MaskFloor::Zero),
            Some("pessimistic") => Some(MaskFloor::Pessimistic),
            Some(v) => return Err(Error::invalid(format!("config key mask_floor: unknown value {v:?}"))),
        };
        let zeta: f64 = c.get_or("zeta", d.zeta)?;
        if !(zeta > 0.0 && zeta < 1.0) {
            return Err(Error::invalid(format!("zeta {zeta} must lie in (0, 1)")));
        }
        Ok(TrainSettings {
            fclass,
            b: c.get_or("b", d.b)?,
            bins: c.get_or("bins", d.bins)?,
            mask_floor,
            sampled: SampledConfig {
                batch: c.get_or("B", d.sampled.batch)?,
                outer: c.get_or("K", d.sampled.outer)?,
                updates: c.get_or("M", d.sampled.updates)?,
            },
            endo_sweep_max: c.get_or("endo_sweep_max", d.endo_sweep_max)?,
            zeta,
            endo_model: c.get_or("endo_model", d.endo_model)?,
            model_updates: c.get_or("model_updates", d.model_updates)?,
            agent: c.get_or("agent", d.agent)?,
            sim: SimConfig {
                iterations: c.get_or("sim_iterations", d.sim.iterations)?,
                epsilon: c.get_or("epsilon", d.sim.epsilon)?,
                hidden,
                updates: c.get_or("updates", d.sim.updates)?,
                ..d.sim
            },
            fit,
        })
    }

    fn hidden(&self) -> usize {
        match self.fclass {
            FClass::Mlp { hidden } => hidden,
            _ => self.sim.hidden,
        }
    }

    fn floor_for(&self, env: &str) -> MaskFloor {
        self.mask_floor.unwrap_or(if env == "inventory" { MaskFloor::Pessimistic } else { MaskFloor::Zero })
    }

    fn model_fit(&self) -> FitConfig {
        FitConfig { updates: self.model_updates, ..self.fit.clone() }
    }
}

/// The endogenous model an algorithm plans with.
pub fn endo_model_for(d: &Dataset, s: &TrainSettings) -> Result<EndoModel> {
    match s.endo_model {
        EndoChoice::Exact => EndoModel::exact_for_env(&d.meta.env),
        EndoChoice::Learned => {
            let opts = EndoFitOptions { hidden: s.hidden(), reward_head: d.meta.env != "order" && d.meta.env != "inventory" };
            Ok(fit_endo_model(d, &s.model_fit(), &opts)?.0)
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: Policy,
    /// Learning curve of the trajectory-simulator agents.
    pub curve: Option<Vec<CurvePoint>>,
}

pub fn train_policy(algo: Algo, d: &Dataset, s: &TrainSettings) -> Result<TrainOutput> {
    let spec = spec_for(d, s.endo_sweep_max)?;
    let mut curve = None;
    let policy = match algo {
        Algo::FqiAir => fqi_air_sweep(d, &endo_model_for(d, s)?, &spec, s.fclass, &s.fit)?.policy,
        Algo::FqiAirSampled => fqi_air_sampled(d, &endo_model_for(d, s)?, &spec, s.hidden(), &s.fit, &s.sampled)?,
        Algo::Fqi => fqi_baseline(d, &spec, s.fclass, &s.fit)?,
        Algo::Mbs => {
            let density = density_estimate(d, s.bins);
            mbs_qi(d, &density, s.b, s.floor_for(&d.meta.env), &spec, s.fclass, &s.fit)?
        }
        Algo::MbEmpirical => mb_plan(PlanModel::Empirical { data: d, endo: &endo_model_for(d, s)? }, &spec, s.fclass, &s.fit)?,
        Algo::MbExo => {
            let (dynamics, _) = fit_dynamics_model(d, DynamicsKind::ExoOnly, &s.model_fit(), s.hidden())?;
            let endo = endo_model_for(d, s)?;
            mb_plan(PlanModel::LearnedExo { data: d, dynamics: &dynamics, endo: &endo }, &spec, s.fclass, &s.fit)?
        }
        Algo::MbFull => {
            let (dynamics, _) = fit_dynamics_model(d, DynamicsKind::Full, &s.model_fit(), s.hidden())?;
            mb_plan(PlanModel::LearnedFull { data: d, dynamics: &dynamics }, &spec, s.fclass, &s.fit)?
        }
        Algo::TrajSim => {
            let (p, c) = traj_sim_online(d, &endo_model_for(d, s)?, &spec, s.agent, &s.sim, &s.fit)?;
            curve = Some(c);
            p
        }
    };
    Ok(TrainOutput { policy, curve })
}

fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("iteration,return_mean,return_stderr\n");
    for p in curve {
        let _ = writeln!(out, "{},{},{}", p.iteration, p.return_mean, p.return_stderr);
    }
    out
}

pub const COLLECTOR_KEYS: &[&str] =
    &["collector_episodes", "collector_updates", "collector_hidden", "collector_lr", "collector_batch"];

pub fn collector_config(c: &Config, seed: u64) -> Result<CollectorConfig> {
    let d = CollectorConfig::default();
    Ok(CollectorConfig {
        episodes: c.get_or("collector_episodes", d.episodes)?,
        hidden: c.get_or("collector_hidden", d.hidden)?,
        updates_per_episode: c.get_or("collector_updates", d.updates_per_episode)?,
        fit: FitConfig {
            lr: c.get_or("collector_lr", d.fit.lr)?,
            batch_size: c.get_or("collector_batch", d.fit.batch_size)?,
            seed,
            ..d.fit.clone()
        },
        ..d
    })
}

/// Behaviour policy for `kind`, training the online collector on `env` when learned.
pub fn make_behavior(env: &mut dyn Environment, kind: BehaviorKind, collector: &CollectorConfig) -> Result<Policy> {
    match kind {
        BehaviorKind::Learned => Ok(train_online_collector(env, collector)?.0),
        _ => behavior_policy(env.id(), kind),
    }
}

fn cmd_collect(a: CollectArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    cfg.check_keys(COLLECTOR_KEYS)?;
    let kind: BehaviorKind = a.policy.parse()?;
    let mut env = make_env(&a.env, a.eps_air, a.seed)?;
    let policy = make_behavior(env.as_mut(), kind, &collector_config(&cfg, a.seed)?)?;
    let d = collect_dataset(env.as_mut(), &policy, &kind.to_string(), a.episodes, a.seed)?;
    write_dataset(&d, &a.out)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    cfg.check_keys(TRAIN_KEYS)?;
    let algo: Algo = a.algo.parse()?;
    let d = read_dataset(&a.data)?;
    let out = train_policy(algo, &d, &TrainSettings::from_config(&cfg)?)?;
    write_file(&a.out, &out.policy.to_json()?)?;
    if let Some(curve) = out.curve {
        write_file(&suffixed(&a.out, "curve.csv"), &curve_csv(&curve))?;
    }
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn read_policy(path: &Path) -> Result<Policy> {
    Policy::from_json(&fs::read_to_string(path).map_err(|e| Error::file(path, e))?)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let policy = read_policy(&a.policy)?;
    let text = match (&a.data, &a.env) {
        (Some(data), None) => {
            let cfg = load_config(a.config.as_deref())?;
            cfg.check_keys(TRAIN_KEYS)?;
            let s = TrainSettings::from_config(&cfg)?;
            let d = read_dataset(data)?;
            let spec = spec_for(&d, s.endo_sweep_max)?;
            let m = endo_model_for(&d, &s)?;
            let rep = j_hat_with_zeta(&policy, &d, &m, &spec, s.zeta, &mut RngStream::new(a.seed, "evaluate"))?;
            format!("{}\n{}\n", EvalReport::csv_header(), rep.csv_row(a.seed))
        }
        (None, Some(env)) => {
            let mut env = make_env(env, a.eps_air, a.env_seed.unwrap_or(a.seed))?;
            let (mean, se) = j_true_mc(&policy, env.as_mut(), a.rollouts, &RngStream::new(a.seed, "evaluate"))?;
            format!("rollouts,j_mean,j_stderr,seed\n{},{mean},{se},{}\n", a.rollouts, a.seed)
        }
        _ => return Err(Error::invalid("evaluate needs exactly one of --data or --env")),
    };
    match &a.out {
        Some(p) => write_file(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    cfg.check_keys(TRAIN_KEYS)?;
    if !TRAIN_KEYS.contains(&a.key.as_str()) {
        return Err(Error::invalid(format!("unknown config key {:?}", a.key)));
    }
    let algo: Algo = a.algo.parse()?;
    let d = read_dataset(&a.data)?;
    let values: Vec<String> = a.values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    let candidates = values
        .iter()
        .map(|v| {
            cfg.set(&a.key, v);
            TrainSettings::from_config(&cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let base = candidates.first().cloned().unwrap_or_default();
    let spec = spec_for(&d, base.endo_sweep_max)?;
    let model = endo_model_for(&d, &base)?;
    let mut scores = Vec::new();
    let mut policies = Vec::new();
    let (best, _) = select_hyperparams(
        &candidates,
        SelectContext::Offline { data: &d, model: &model, spec: &spec, seed: base.fit.seed },
        |s| {
            let p = train_policy(algo, &d, s)?.policy;
            let j = crate::eval::j_hat(&p, &d, &model, &spec, &mut RngStream::new(base.fit.seed, "select"))?.j_hat;
            scores.push(j);
            policies.push(p.clone());
            Ok(p)
        },
    )?;
    let mut csv = format!("{},j_hat\n", a.key);
    for (v, j) in values.iter().zip(&scores) {
        let _ = writeln!(csv, "{v},{j}");
    }
    write_file(&a.out.join("scores.csv"), &csv)?;
    write_file(&a.out.join("best_policy.json"), &policies[best].to_json()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    SimEps0,
    SimEpsLarge,
    EvalError,
    TrajSim,
}

impl std::str::FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim_eps0" => Ok(Figure::SimEps0),
            "sim_eps_large" => Ok(Figure::SimEpsLarge),
            "eval_error" => Ok(Figure::EvalError),
            "traj_sim" => Ok(Figure::TrajSim),
            _ => Err(Error::invalid(format!("unknown figure {s:?}"))),
        }
    }
}

impl std::fmt::Display for Figure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Figure::SimEps0 => "sim_eps0",
            Figure::SimEpsLarge => "sim_eps_large",
            Figure::EvalError => "eval_error",
            Figure::TrajSim => "traj_sim",
        })
    }
}

/// Runs per grid cell at a scale factor: `ceil(base · scale)`.
pub fn runs_for(base: usize, scale: f64) -> Result<usize> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::invalid(format!("scale {scale} must lie in (0, 1]")));
    }
    Ok(((base as f64) * scale - 1e-9).ceil().max(1.0) as usize)
}

/// Options of `reproduce`; every field has a config key of the same name.
#[derive(Debug, Clone, PartialEq)]
pub struct ReproOptions {
    pub envs: Vec<String>,
    pub policies: Vec<BehaviorKind>,
    pub algos: Vec<Algo>,
    pub n_grid: Vec<usize>,
    pub eps_grid: Vec<f64>,
    pub eval_env: String,
    pub eval_n_grid: Vec<usize>,
    pub rollouts: usize,
    pub agents: Vec<Agent>,
    pub traj_env: String,
    pub traj_n: usize,
    pub runs: Option<usize>,
    pub train: TrainSettings,
    pub collector: Config,
}

pub const REPRO_KEYS: &[&str] = &[
    "envs",
    "policies",
    "algos",
    "n_grid",
    "eps_grid",
    "eval_env",
    "eval_n_grid",
    "rollouts",
    "agents",
    "traj_env",
    "traj_n",
    "runs",
];

fn list<T: std::str::FromStr>(c: &Config, key: &str, default: &str) -> Result<Vec<T>> {
    c.raw(key)
        .unwrap_or(default)
        .split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| Error::invalid(format!("config key {key}: cannot parse {v:?}"))))
        .collect()
}

impl ReproOptions {
    pub fn from_config(c: &Config) -> Result<Self> {
        let allowed: Vec<&str> = REPRO_KEYS.iter().chain(TRAIN_KEYS).chain(COLLECTOR_KEYS).copied().collect();
        c.check_keys(&allowed)?;
        let train_only: Config = Config::from_map(
            TRAIN_KEYS.iter().filter_map(|k| c.raw(k).map(|v| (k.to_string(), v.to_string()))).collect(),
        );
        let collector = Config::from_map(
            COLLECTOR_KEYS.iter().filter_map(|k| c.raw(k).map(|v| (k.to_string(), v.to_string()))).collect(),
        );
        Ok(ReproOptions {
            envs: list(c, "envs", "order,inventory")?,
            policies: list(c, "policies", "random,constant,learned")?,
            algos: list(c, "algos", "fqi_air,fqi,mbs_qi")?,
            n_grid: list(c, "n_grid", "1,5,10,25,50,100,200")?,
            eps_grid: list(c, "eps_grid", "0,0.05,0.1,0.2,0.4")?,
            eval_env: c.raw("eval_env").unwrap_or("order").to_string(),
            eval_n_grid: list(c, "eval_n_grid", "1,5,25,100,200")?,
            rollouts: c.get_or("rollouts", 100)?,
            agents: list(c, "agents", "q_learning,api")?,
            traj_env: c.raw("traj_env").unwrap_or("order").to_string(),
            traj_n: c.get_or("traj_n", 25)?,
            runs: c.get("runs")?,
            train: TrainSettings::from_config(&train_only)?,
            collector,
        })
    }
}

/// Seed of run `run` in a named experiment cell, independent of everything else.
pub fn run_seed(base: u64, cell: &str, run: usize) -> u64 {
    RngStream::new(base, format!("{cell}/run{run}")).next_seed()
}

/// Data for one run: the simulator instance, its behaviour policy, and `max_n` episodes.
fn run_data(env_id: &str, eps: f64, inst: u64, kind: BehaviorKind, max_n: usize, opts: &ReproOptions) -> Result<(Box<dyn Environment>, Policy, Dataset)> {
    let mut env = make_env(env_id, eps, inst)?;
    let behavior = make_behavior(env.as_mut(), kind, &collector_config(&opts.collector, inst)?)?;
    let d = collect_dataset(env.as_mut(), &behavior, &kind.to_string(), max_n, inst)?;
    Ok((env, behavior, d))
}

fn settings_for_run(opts: &ReproOptions, inst: u64) -> TrainSettings {
    let mut s = opts.train.clone();
    s.fit.seed = inst;
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRow {
    pub env: String,
    pub policy: BehaviorKind,
    pub algo: String,
    pub n: usize,
    pub run: usize,
    pub ret: f64,
}

/// Returns under the true simulator of every algorithm on every
/// `(env, behaviour policy, N, run)` cell; the behaviour policy's own return is
/// reported under the algorithm name `behavior`.
pub fn sim_figure(eps_air: f64, runs: usize, seed: u64, opts: &ReproOptions) -> Result<Vec<SimRow>> {
    let mut rows = Vec::new();
    let max_n = opts.n_grid.iter().copied().max().unwrap_or(1);
    for env_id in &opts.envs {
        for &kind in &opts.policies {
            for run in 0..runs {
                let inst = run_seed(seed, &format!("sim/{env_id}"), run);
                let (mut env, behavior, data) = run_data(env_id, eps_air, inst, kind, max_n, opts)?;
                let eval_rng = RngStream::new(inst, "true-return");
                let (jb, _) = j_true_mc(&behavior, env.as_mut(), opts.rollouts, &eval_rng)?;
                let s = settings_for_run(opts, inst);
                for &n in &opts.n_grid {
                    let d = data.prefix(n);
                    let mut push = |algo: String, ret: f64| {
                        rows.push(SimRow { env: env_id.clone(), policy: kind, algo, n, run, ret })
                    };
                    push("behavior".into(), jb);
                    for &algo in &opts.algos {
                        let p = train_policy(algo, &d, &s)?.policy;
                        let (j, _) = j_true_mc(&p, env.as_mut(), opts.rollouts, &eval_rng)?;
                        push(algo.to_string(), j);
                    }
                }
            }
        }
    }
    Ok(rows)
}

pub fn sim_csv(rows: &[SimRow]) -> String {
    let mut out = String::from("env,policy,algo,N,run,return\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.env, r.policy, r.algo, r.n, r.run, r.ret);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalErrorRow {
    pub env: String,
    pub eps_air: f64,
    pub n: usize,
    pub run: usize,
    pub policy: BehaviorKind,
    pub j_hat: f64,
    pub j_true: f64,
}

impl EvalErrorRow {
    pub fn abs_err(&self) -> f64 {
        (self.j_hat - self.j_true).abs()
    }
}

/// `|Ĵ − J|` of the FQI-AIR policy trained on each dataset; run `r` collects with
/// `policies[r % len]`, and one simulator instance per run is shared across `ε_air`.
pub fn eval_error_figure(runs: usize, seed: u64, opts: &ReproOptions) -> Result<Vec<EvalErrorRow>> {
    let env_id = &opts.eval_env;
    let max_n = opts.eval_n_grid.iter().copied().max().unwrap_or(1);
    let mut rows = Vec::new();
    for run in 0..runs {
        let kind = opts.policies[run % opts.policies.len()];
        let inst = run_seed(seed, &format!("eval_error/{env_id}"), run);
        let s = settings_for_run(opts, inst);
        for &eps in &opts.eps_grid {
            let (mut env, _, data) = run_data(env_id, eps, inst, kind, max_n, opts)?;
            let m = endo_model_for(&data, &s)?;
            let spec = spec_for(&data, s.endo_sweep_max)?;
            for &n in &opts.eval_n_grid {
                let d = data.prefix(n);
                let p = train_policy(Algo::FqiAir, &d, &s)?.policy;
                let jh = j_hat_with_zeta(&p, &d, &m, &spec, s.zeta, &mut RngStream::new(inst, "j-hat"))?.j_hat;
                let (jt, _) = j_true_mc(&p, env.as_mut(), opts.rollouts, &RngStream::new(inst, "true-return"))?;
                rows.push(EvalErrorRow { env: env_id.clone(), eps_air: eps, n, run, policy: kind, j_hat: jh, j_true: jt });
            }
        }
    }
    Ok(rows)
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// `(eps_air, N, p90 of |Ĵ − J|)` per grid cell in grid order.
pub fn eval_error_summary(rows: &[EvalErrorRow], opts: &ReproOptions) -> Vec<(f64, usize, f64)> {
    let mut out = Vec::new();
    for &eps in &opts.eps_grid {
        for &n in &opts.eval_n_grid {
            let errs: Vec<f64> = rows.iter().filter(|r| r.eps_air == eps && r.n == n).map(EvalErrorRow::abs_err).collect();
            out.push((eps, n, percentile(&errs, 0.9)));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajRow {
    pub env: String,
    pub agent: String,
    pub run: usize,
    pub point: CurvePoint,
}

/// Learning curves (Ĵ after each iteration) of the online agents trained in the
/// trajectory simulator, plus the FQI-AIR policy's Ĵ as a reference at iteration 0.
pub fn traj_sim_figure(runs: usize, seed: u64, opts: &ReproOptions) -> Result<Vec<TrajRow>> {
    let env_id = &opts.traj_env;
    let mut rows = Vec::new();
    for run in 0..runs {
        let inst = run_seed(seed, &format!("traj_sim/{env_id}"), run);
        let (_, _, d) = run_data(env_id, 0.0, inst, BehaviorKind::Random, opts.traj_n, opts)?;
        let s = settings_for_run(opts, inst);
        let m = endo_model_for(&d, &s)?;
        let spec = spec_for(&d, s.endo_sweep_max)?;
        let p = train_policy(Algo::FqiAir, &d, &s)?.policy;
        let rep = j_hat_with_zeta(&p, &d, &m, &spec, s.zeta, &mut RngStream::new(0, "traj-sim/eval"))?;
        let point = CurvePoint { iteration: 0, return_mean: rep.j_hat, return_stderr: rep.stderr() };
        rows.push(TrajRow { env: env_id.clone(), agent: "fqi_air".into(), run, point });
        for &agent in &opts.agents {
            let (_, curve) = traj_sim_online(&d, &m, &spec, agent, &s.sim, &s.fit)?;
            for point in curve {
                rows.push(TrajRow { env: env_id.clone(), agent: agent.to_string(), run, point });
            }
        }
    }
    Ok(rows)
}

/// Writes the CSV files of `figure` into `out` and returns their paths.
pub fn reproduce(figure: Figure, scale: f64, seed: u64, out: &Path, cfg: &Config) -> Result<Vec<PathBuf>> {
    let opts = ReproOptions::from_config(cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    let mut written = Vec::new();
    let mut emit = |name: &str, text: &str| -> Result<()> {
        let p = out.join(name);
        write_file(&p, text)?;
        written.push(p);
        Ok(())
    };
    match figure {
        Figure::SimEps0 | Figure::SimEpsLarge => {
            let eps = if figure == Figure::SimEps0 { 0.0 } else { 0.8 };
            let runs = opts.runs.map_or_else(|| runs_for(30, scale), Ok)?;
            let rows = sim_figure(eps, runs, seed, &opts)?;
            emit(&format!("{figure}.csv"), &sim_csv(&rows))?;
        }
        Figure::EvalError => {
            let runs = opts.runs.map_or_else(|| runs_for(90, scale), Ok)?;
            let rows = eval_error_figure(runs, seed, &opts)?;
            let mut raw = String::from("env,eps_air,N,run,policy,j_hat,j_true\n");
            for r in &rows {
                let _ = writeln!(raw, "{},{},{},{},{},{},{}", r.env, r.eps_air, r.n, r.run, r.policy, r.j_hat, r.j_true);
            }
            let mut summary = String::from("env,eps_air,N,p90_abs_err\n");
            for (eps, n, p) in eval_error_summary(&rows, &opts) {
                let _ = writeln!(summary, "{},{eps},{n},{p}", opts.eval_env);
            }
            emit("eval_error.csv", &summary)?;
            emit("eval_error_runs.csv", &raw)?;
        }
        Figure::TrajSim => {
            let runs = opts.runs.map_or_else(|| runs_for(30, scale), Ok)?;
            let rows = traj_sim_figure(runs, seed, &opts)?;
            let mut agents: Vec<&str> = vec!["fqi_air"];
            let names: Vec<String> = opts.agents.iter().map(|a| a.to_string()).collect();
            agents.extend(names.iter().map(String::as_str));
            for agent in agents {
                let mut text = String::from("env,agent,run,iteration,return_mean,return_stderr\n");
                for r in rows.iter().filter(|r| r.agent == agent) {
                    let _ = writeln!(
                        text,
                        "{},{},{},{},{},{}",
                        r.env, r.agent, r.run, r.point.iteration, r.point.return_mean, r.point.return_stderr
                    );
                }
                emit(&format!("traj_sim_{agent}.csv"), &text)?;
            }
        }
    }
    Ok(written)
}

fn cmd_reproduce(a: ReproduceArgs) -> Result<()> {
    let figure: Figure = a.figure.parse()?;
    let cfg = load_config(a.config.as_deref())?;
    reproduce(figure, a.scale, a.seed, &a.out, &cfg)?;
    Ok(())
}

/// Mean and standard error of the `return` column of the rows matching a filter.
pub fn summarize<F: Fn(&SimRow) -> bool>(rows: &[SimRow], keep: F) -> (f64, f64, usize) {
    let xs: Vec<f64> = rows.iter().filter(|r| keep(r)).map(|r| r.ret).collect();
    let (m, se) = mean_stderr(&xs);
    (m, se, xs.len())
}
