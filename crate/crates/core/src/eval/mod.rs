//! Evaluation: fixed world suites, reports, replay rendering and the
//! gradient-check battery.

mod battery;
mod replay;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Action, AgentPose, EpisodeState, Observation, World, DEFAULT_DENSITY, MAX_EPISODE_STEPS};
use crate::error::{Error, Result};
use crate::policy::{act, forward, AgentVariant, Checkpoint, ModelConfig, ModelParams, ModelState};
use crate::trainer::{derive_seed, eval_mode};

pub use battery::{
    check_names, run_battery, BatteryOptions, BatteryReport, CheckResult, Scale, END_TO_END_TOLERANCE, OP_TOLERANCE,
};
pub use replay::{replay_render, ReplaySummary};

/// One suite episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub world: String,
    pub steps: usize,
    pub reward: f64,
    pub solved: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

/// Per-episode rows plus aggregates computed from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub agent: AgentVariant,
    pub rows: Vec<EpisodeRow>,
    pub steps: MeanStd,
    pub reward: MeanStd,
    pub success_ratio: f64,
}

impl EvalReport {
    pub fn from_rows(agent: AgentVariant, rows: Vec<EpisodeRow>) -> Self {
        let steps: Vec<f64> = rows.iter().map(|r| r.steps as f64).collect();
        let rewards: Vec<f64> = rows.iter().map(|r| r.reward).collect();
        let solved = rows.iter().filter(|r| r.solved).count();
        EvalReport {
            agent,
            steps: MeanStd::of(&steps),
            reward: MeanStd::of(&rewards),
            success_ratio: if rows.is_empty() { 0.0 } else { solved as f64 / rows.len() as f64 },
            rows,
        }
    }

    /// True when the stored aggregates equal a fresh computation from rows.
    pub fn is_consistent(&self) -> bool {
        let again = EvalReport::from_rows(self.agent, self.rows.clone());
        again == *self
    }

    /// Mean steps over solved episodes only; `None` when nothing was solved.
    pub fn mean_steps_to_solve(&self) -> Option<f64> {
        let solved: Vec<f64> = self.rows.iter().filter(|r| r.solved).map(|r| r.steps as f64).collect();
        (!solved.is_empty()).then(|| solved.iter().sum::<f64>() / solved.len() as f64)
    }

    /// Table row in the `Steps & Reward & Success Ratio` layout.
    pub fn summary(&self) -> String {
        format!(
            "{:<12} steps {:.3} ± {:.3}  reward {:.3} ± {:.3}  success {:.2}",
            self.agent.name(),
            self.steps.mean,
            self.steps.std,
            self.reward.mean,
            self.reward.std,
            self.success_ratio
        )
    }
}

/// Parameters for generating a world set in memory or on disk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldGen {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    #[serde(default = "default_density")]
    pub density: f64,
}

fn default_density() -> f64 {
    DEFAULT_DENSITY
}

/// Suite evaluation settings. Exactly one of `worlds` and `generate` names
/// the world source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub agent: AgentVariant,
    /// Required for every agent except `random`.
    pub checkpoint: Option<PathBuf>,
    /// Directory of world files.
    pub worlds: Option<PathBuf>,
    pub generate: Option<WorldGen>,
    pub seed: u64,
    /// Per-episode cap for learned agents.
    pub max_episode_steps: usize,
    /// The random agent runs without a cap unless this is false.
    pub uncapped_random: bool,
    /// Step budget of a training-style evaluation window.
    pub eval_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            agent: AgentVariant::NeuralSlam,
            checkpoint: None,
            worlds: None,
            generate: None,
            seed: 0,
            max_episode_steps: MAX_EPISODE_STEPS,
            uncapped_random: true,
            eval_steps: 3000,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            what: "run config".into(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            Error::Parse { msg, .. } => Error::Parse {
                what: path.display().to_string(),
                msg,
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.worlds, &self.generate) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::Invalid("exactly one world source (worlds or generate) must be given".into())),
        }
        if self.agent != AgentVariant::Random && self.checkpoint.is_none() {
            return Err(Error::Invalid(format!("agent {} needs a checkpoint", self.agent)));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::Invalid("max_episode_steps must be positive".into()));
        }
        Ok(())
    }

    /// Episode cap for the configured agent.
    pub fn episode_cap(&self) -> Option<usize> {
        if self.agent == AgentVariant::Random && self.uncapped_random {
            None
        } else {
            Some(self.max_episode_steps)
        }
    }
}

/// Loads parameters for `agent`: the checkpoint if given (its variant must
/// match), or the parameter-free random agent.
pub fn load_agent(agent: AgentVariant, checkpoint: Option<&Path>) -> Result<ModelParams> {
    match checkpoint {
        Some(path) => Ok(Checkpoint::load_as(path, agent)?.params),
        None if agent == AgentVariant::Random => ModelParams::zeros(ModelConfig::new(AgentVariant::Random)),
        None => Err(Error::Invalid(format!("agent {agent} needs a checkpoint"))),
    }
}

/// Something that picks actions from observations.
pub trait Agent {
    fn reset(&mut self, world: &World, start: AgentPose) -> Result<()>;
    fn act(&mut self, obs: &Observation) -> Result<Action>;
}

/// A trained (or random) policy acting greedily, or sampling for the random
/// agent.
pub struct PolicyAgent<'a> {
    params: &'a ModelParams,
    state: Option<ModelState>,
    rng: ChaCha8Rng,
}

impl<'a> PolicyAgent<'a> {
    pub fn new(params: &'a ModelParams, seed: u64) -> Self {
        PolicyAgent {
            params,
            state: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn state(&self) -> Option<&ModelState> {
        self.state.as_ref()
    }
}

impl Agent for PolicyAgent<'_> {
    fn reset(&mut self, world: &World, start: AgentPose) -> Result<()> {
        let cfg = self.params.config();
        if world.width() > cfg.memory.width || world.height() > cfg.memory.height {
            return Err(Error::Invalid(format!(
                "{}x{} world does not fit the {}x{} memory",
                world.width(),
                world.height(),
                cfg.memory.width,
                cfg.memory.height
            )));
        }
        self.state = Some(ModelState::reset(cfg, start)?);
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<Action> {
        let state = self.state.take().ok_or_else(|| Error::Invalid("agent used before reset".into()))?;
        let f = forward(self.params, &state, obs)?;
        self.state = Some(f.state);
        act(&f.pi, eval_mode(self.params.variant()), &mut self.rng)
    }
}

/// Runs one episode from the world's fixed start pose.
pub fn run_episode<A: Agent>(agent: &mut A, world: Arc<World>, cap: Option<usize>) -> Result<(usize, f64, bool)> {
    let start = world
        .start()
        .ok_or_else(|| Error::Invalid("suite worlds need a fixed start pose".into()))?;
    agent.reset(&world, start)?;
    let (ep, mut obs) = EpisodeState::start_at(world, start)?;
    let mut ep = ep.with_max_steps(cap);
    let mut total = 0.0;
    while !ep.done() {
        let a = agent.act(&obs)?;
        let r = ep.step(a)?;
        total += r.reward;
        obs = r.observation;
    }
    Ok((ep.steps(), total, ep.solved()))
}

/// Named worlds of a suite.
pub type WorldSet = Vec<(String, Arc<World>)>;

/// Evaluates one agent per world in parallel; rows keep world order.
pub fn run_suite_with<A, F>(worlds: &WorldSet, cap: Option<usize>, make_agent: F) -> Result<Vec<EpisodeRow>>
where
    A: Agent,
    F: Fn(usize) -> A + Sync,
{
    worlds
        .par_iter()
        .enumerate()
        .map(|(i, (name, world))| {
            let mut agent = make_agent(i);
            let (steps, reward, solved) = run_episode(&mut agent, world.clone(), cap)?;
            Ok(EpisodeRow {
                world: name.clone(),
                steps,
                reward,
                solved,
            })
        })
        .collect()
}

/// Loads or generates the configured world set.
pub fn resolve_worlds(config: &RunConfig) -> Result<WorldSet> {
    match (&config.worlds, &config.generate) {
        (Some(dir), None) => load_world_set(dir),
        (None, Some(g)) => generate_worlds(g),
        _ => Err(Error::Invalid("exactly one world source (worlds or generate) must be given".into())),
    }
}

/// Greedy evaluation of the configured agent, one episode per world.
pub fn run_suite(config: &RunConfig) -> Result<EvalReport> {
    config.validate()?;
    let params = load_agent(config.agent, config.checkpoint.as_deref())?;
    let worlds = resolve_worlds(config)?;
    let rows = run_suite_with(&worlds, config.episode_cap(), |i| {
        PolicyAgent::new(&params, derive_seed(&[config.seed, 0x5017E, i as u64]))
    })?;
    Ok(EvalReport::from_rows(config.agent, rows))
}

/// `n` worlds with fixed start poses, deterministic in `seed`.
pub fn generate_worlds(gen: &WorldGen) -> Result<WorldSet> {
    if gen.count == 0 {
        return Err(Error::Invalid("a world set needs at least one world".into()));
    }
    (0..gen.count)
        .map(|i| {
            // generation draws the fixed start pose as well
            let world = World::generate(gen.size, gen.density, derive_seed(&[gen.seed, 0x3021D, i as u64]))?;
            Ok((world_file_name(i), Arc::new(world)))
        })
        .collect()
}

fn world_file_name(i: usize) -> String {
    format!("world-{i:03}.txt")
}

/// Writes a generated set into `dir` and returns the file paths.
pub fn generate_world_set(dir: &Path, gen: &WorldGen) -> Result<Vec<PathBuf>> {
    let worlds = generate_worlds(gen)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    worlds
        .iter()
        .map(|(name, w)| {
            let path = dir.join(name);
            w.save(&path)?;
            Ok(path)
        })
        .collect()
}

/// Reads every `*.txt` world in `dir`, sorted by file name.
pub fn load_world_set(dir: &Path) -> Result<WorldSet> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::Invalid(format!("no world files in {}", dir.display())));
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, Arc::new(World::load(&p)?)))
        })
        .collect()
}

#[cfg(test)]
mod tests;
