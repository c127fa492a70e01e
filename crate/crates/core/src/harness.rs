//! Experiment runner: TOML configuration, seeded trials, per-trial CSV
//! files, confidence-interval aggregation and model export.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Deserialize;

use crate::baselines::{qlearning_episode, FlatRmax, QTable};
use crate::cleanup::{make_cleanup_task, CleanupLayout};
use crate::error::{Error, Result};
use crate::exec::{EpisodeRecord, ExecConfig, ExecutionContext};
use crate::lamdp::load_hierarchy;
use crate::mdp::{Environment, GroundState, SeededRng};
use crate::rmax::TabularModel;
use crate::taxi::{make_taxi_task, TaxiVariant};

pub const CSV_HEADER: [&str; 8] = [
    "episode",
    "steps",
    "cum_steps",
    "reward",
    "cum_reward",
    "wall_ms",
    "unknown_total",
    "outcome",
];

pub const AGGREGATE_HEADER: [&str; 6] = [
    "episode",
    "trials",
    "cum_steps_mean",
    "cum_steps_ci",
    "cum_reward_mean",
    "cum_reward_ci",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Palm,
    RmaxFlat,
    Qlearning,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Palm => "palm",
            Algorithm::RmaxFlat => "rmax-flat",
            Algorithm::Qlearning => "qlearning",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    pub lamdp: String,
    pub model: PathBuf,
    #[serde(default = "yes")]
    pub frozen: bool,
}

/// One experiment. Relative paths resolve against the config file's directory.
///
/// Defaults: `algorithm = "palm"`, `trials = 20`, `seed = 0`, `gamma = 0.95`,
/// `m = 1` on deterministic tasks and 5 otherwise, `tolerance = 1e-6`,
/// `max_iterations = 10000`, `gating = true`, `episode_budget = 2000`,
/// `call_budget = 500`, `alpha = 0.1`, `epsilon = 0.1`, `output = "results"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// A taxi variant, a named cleanup layout, or a path to a layout file.
    pub domain: String,
    #[serde(default)]
    pub hierarchy: Option<PathBuf>,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    pub episodes: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub m: Option<u64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "yes")]
    pub gating: bool,
    #[serde(default = "default_episode_budget")]
    pub episode_budget: usize,
    #[serde(default = "default_call_budget")]
    pub call_budget: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub transfer: Option<TransferConfig>,
}

fn yes() -> bool {
    true
}
fn default_algorithm() -> Algorithm {
    Algorithm::Palm
}
fn default_trials() -> usize {
    20
}
fn default_gamma() -> f64 {
    0.95
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_max_iterations() -> usize {
    10_000
}
fn default_episode_budget() -> usize {
    2000
}
fn default_call_budget() -> usize {
    500
}
fn default_alpha() -> f64 {
    0.1
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        config.check()?;
        Ok(config)
    }
}

impl ExperimentConfig {
    pub fn new(domain: &str, hierarchy: Option<&str>, algorithm: Algorithm, episodes: usize) -> Self {
        ExperimentConfig {
            domain: domain.to_string(),
            hierarchy: hierarchy.map(PathBuf::from),
            algorithm,
            episodes,
            trials: default_trials(),
            seed: 0,
            gamma: default_gamma(),
            m: None,
            tolerance: default_tolerance(),
            max_iterations: default_max_iterations(),
            gating: true,
            episode_budget: default_episode_budget(),
            call_budget: default_call_budget(),
            alpha: default_alpha(),
            epsilon: default_epsilon(),
            output: default_output(),
            transfer: None,
        }
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::MissingFile {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: ExperimentConfig = text.parse()?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &Path| if p.is_relative() && !is_builtin(p) { base.join(p) } else { p.to_path_buf() };
        self.hierarchy = self.hierarchy.as_deref().map(join);
        self.output = join(&self.output);
        if let Some(t) = &mut self.transfer {
            t.model = join(&t.model);
        }
        if TaxiVariant::named(&self.domain).is_none() && CleanupLayout::named(&self.domain).is_none() {
            self.domain = join(Path::new(&self.domain)).display().to_string();
        }
    }

    pub fn check(&self) -> Result<()> {
        let field = |name: &str, msg: &str| Err(Error::Config(format!("field `{name}`: {msg}")));
        if self.trials < 1 {
            return field("trials", "must be at least 1");
        }
        if self.episodes < 1 {
            return field("episodes", "must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return field("gamma", "must lie in (0, 1)");
        }
        if self.m == Some(0) {
            return field("m", "must be at least 1");
        }
        if !(self.tolerance > 0.0) {
            return field("tolerance", "must be positive");
        }
        if self.max_iterations < 1 {
            return field("max_iterations", "must be at least 1");
        }
        if self.episode_budget < 1 {
            return field("episode_budget", "must be at least 1");
        }
        if self.call_budget < 1 {
            return field("call_budget", "must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return field("alpha", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return field("epsilon", "must lie in [0, 1]");
        }
        if self.algorithm == Algorithm::Palm && self.hierarchy.is_none() {
            return field("hierarchy", "required by the palm algorithm");
        }
        if self.transfer.is_some() && self.algorithm != Algorithm::Palm {
            return field("transfer", "only the palm algorithm accepts transferred models");
        }
        Ok(())
    }

    pub fn exec_config(&self, deterministic: bool) -> ExecConfig {
        ExecConfig {
            gamma: self.gamma,
            m: self.m.unwrap_or(if deterministic { 1 } else { 5 }),
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            episode_budget: self.episode_budget,
            call_budget: self.call_budget,
            gating: self.gating,
            ..ExecConfig::default()
        }
    }

    pub fn trial_csv(&self, trial: usize) -> PathBuf {
        self.output.join(format!("trial_{trial:03}.csv"))
    }

    pub fn model_store(&self, trial: usize) -> PathBuf {
        self.output.join("models").join(format!("trial_{trial:03}"))
    }
}

fn is_builtin(p: &Path) -> bool {
    p.to_str().is_some_and(|s| s.starts_with("builtin:"))
}

/// A sampled task instance; `deterministic` selects the default `m`.
pub struct Task {
    pub env: Arc<dyn Environment>,
    pub start: GroundState,
    pub deterministic: bool,
}

pub fn make_task(domain: &str, rng: &mut SeededRng) -> Result<Task> {
    if let Some(variant) = TaxiVariant::named(domain) {
        let (env, start) = make_taxi_task(&variant, rng)?;
        return Ok(Task {
            env: Arc::new(env),
            start,
            deterministic: variant.is_deterministic(),
        });
    }
    let layout = match CleanupLayout::named(domain) {
        Some(layout) => layout?,
        None => CleanupLayout::load(Path::new(domain))?,
    };
    let deterministic = layout.movement_noise == 0.0;
    let (env, start) = make_cleanup_task(&layout, rng)?;
    Ok(Task {
        env: Arc::new(env),
        start,
        deterministic,
    })
}

/// Episodes of one trial plus the serialized models it learned.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub records: Vec<EpisodeRecord>,
    pub models: Vec<(String, String)>,
}

/// Runs one trial in memory: fresh task and models seeded by `seed + trial`.
pub fn run_trial(config: &ExperimentConfig, trial: usize) -> Result<TrialResult> {
    let mut rng = SeededRng::new(config.seed.wrapping_add(trial as u64));
    let task = make_task(&config.domain, &mut rng)?;
    let exec = config.exec_config(task.deterministic);
    let mut records = Vec::with_capacity(config.episodes);
    let mut models = Vec::new();
    match config.algorithm {
        Algorithm::Palm => {
            let path = config.hierarchy.as_deref().ok_or_else(|| Error::Config("field `hierarchy`: missing".into()))?;
            let hierarchy = load_hierarchy(path)?;
            let mut ctx = ExecutionContext::new(&hierarchy, Arc::clone(&task.env), exec, rng.split())?;
            if let Some(t) = &config.transfer {
                let text = std::fs::read_to_string(&t.model).map_err(|source| Error::MissingFile {
                    path: t.model.display().to_string(),
                    source,
                })?;
                ctx.attach_transferred_model(&t.lamdp, TabularModel::deserialize(&text)?, t.frozen)?;
            }
            for _ in 0..config.episodes {
                records.push(ctx.run_episode(&task.start)?);
            }
            models = ctx.models().map(|(name, m)| (name.to_string(), m.serialize())).collect();
        }
        Algorithm::RmaxFlat => {
            let mut agent = FlatRmax::new(Arc::clone(&task.env), &exec, rng.split());
            for _ in 0..config.episodes {
                records.push(agent.episode(&task.start)?);
            }
            models.push(("flat".to_string(), agent.model().serialize()));
        }
        Algorithm::Qlearning => {
            let mut table = QTable::new(task.env.primitive_actions().len(), config.alpha, config.epsilon);
            let mut rng = rng.split();
            for episode in 0..config.episodes {
                records.push(qlearning_episode(
                    task.env.as_ref(),
                    &mut table,
                    config.gamma,
                    &mut rng,
                    config.episode_budget,
                    &task.start,
                    episode,
                )?);
            }
        }
    }
    models.sort();
    Ok(TrialResult { trial, records, models })
}

pub fn write_trial_csv(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    let (mut cum_steps, mut cum_reward) = (0usize, 0.0f64);
    for r in records {
        cum_steps += r.steps;
        cum_reward += r.reward;
        w.write_record([
            r.episode.to_string(),
            r.steps.to_string(),
            cum_steps.to_string(),
            r.reward.to_string(),
            cum_reward.to_string(),
            format!("{:.3}", r.wall_ms),
            r.unknown_total().to_string(),
            r.outcome.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every trial on the worker pool, writing one CSV and one model store per trial.
pub fn run(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    config.check()?;
    std::fs::create_dir_all(&config.output)?;
    (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let result = run_trial(config, trial)?;
            let csv = config.trial_csv(trial);
            write_trial_csv(&csv, &result.records)?;
            if !result.models.is_empty() {
                let store = config.model_store(trial);
                std::fs::create_dir_all(&store)?;
                for (name, text) in &result.models {
                    std::fs::write(store.join(format!("{name}.model")), text)?;
                }
            }
            Ok(csv)
        })
        .collect()
}

/// Per-episode summary across trials; `*_ci` is the 95% half-width.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub episode: usize,
    pub trials: usize,
    pub cum_steps_mean: f64,
    pub cum_steps_ci: f64,
    pub cum_reward_mean: f64,
    pub cum_reward_ci: f64,
}

/// Mean and normal-approximation 95% half-width (sample standard deviation).
pub fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

fn read_trial(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::MissingFile {
            path: path.display().to_string(),
            source,
        },
        other => Error::Aggregation(format!("{}: {other:?}", path.display())),
    })?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(Error::Aggregation(format!("{}: unexpected columns", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Aggregation(format!("{}: bad `{}` value `{}`", path.display(), CSV_HEADER[i], &rec[i])))
        };
        rows.push((num(0)? as usize, num(2)?, num(4)?));
    }
    Ok(rows)
}

pub fn aggregate(paths: &[PathBuf]) -> Result<Vec<AggregateRow>> {
    if paths.is_empty() {
        return Err(Error::Aggregation("no trial files".into()));
    }
    let trials = paths.iter().map(|p| read_trial(p)).collect::<Result<Vec<_>>>()?;
    let episodes = trials[0].len();
    if let Some((i, _)) = trials.iter().enumerate().find(|(_, t)| t.len() != episodes) {
        return Err(Error::Aggregation(format!(
            "{} has a different episode count than {}",
            paths[i].display(),
            paths[0].display()
        )));
    }
    let mut out = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let episode = trials[0][k].0;
        if trials.iter().any(|t| t[k].0 != episode) {
            return Err(Error::Aggregation(format!("episode indices disagree at row {k}")));
        }
        let steps: Vec<f64> = trials.iter().map(|t| t[k].1).collect();
        let reward: Vec<f64> = trials.iter().map(|t| t[k].2).collect();
        let (cum_steps_mean, cum_steps_ci) = mean_ci(&steps);
        let (cum_reward_mean, cum_reward_ci) = mean_ci(&reward);
        out.push(AggregateRow {
            episode,
            trials: trials.len(),
            cum_steps_mean,
            cum_steps_ci,
            cum_reward_mean,
            cum_reward_ci,
        });
    }
    Ok(out)
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(AGGREGATE_HEADER)?;
    for r in rows {
        w.write_record([
            r.episode.to_string(),
            r.trials.to_string(),
            r.cum_steps_mean.to_string(),
            r.cum_steps_ci.to_string(),
            r.cum_reward_mean.to_string(),
            r.cum_reward_ci.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sorted files matching a glob pattern.
pub fn expand_glob(pattern: &str) -> Result<Vec<PathBuf>> {
    let mut paths = glob::glob(pattern)
        .map_err(|e| Error::Config(format!("bad glob `{pattern}`: {e}")))?
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Io(e.into()))?;
    paths.sort();
    Ok(paths)
}

/// Copies one L-AMDP's model out of a trial's model store, checking it parses.
pub fn export_model(store: &Path, lamdp: &str, out: &Path) -> Result<()> {
    if !store.is_dir() {
        return Err(Error::MissingFile {
            path: store.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "model store not found"),
        });
    }
    let file = store.join(format!("{lamdp}.model"));
    let text = std::fs::read_to_string(&file)
        .map_err(|_| Error::Config(format!("no model for L-AMDP `{lamdp}` in {}", store.display())))?;
    let model = TabularModel::<f64>::deserialize(&text)?;
    if model.lamdp() != lamdp {
        return Err(Error::ModelLoad(format!("{} holds a model of `{}`", file.display(), model.lamdp())));
    }
    std::fs::write(out, text)?;
    Ok(())
}
