//! Asynchronous advantage actor-critic training with a shared Adam store
//! and a world-size curriculum.

mod loss;
mod optim;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::env::{EpisodeState, Observation, World, DEFAULT_DENSITY, MAX_EPISODE_STEPS};
use crate::error::{Error, Result};
use crate::memory::MemoryShape;
use crate::policy::{act, forward, ActMode, AgentVariant, Checkpoint, ModelConfig, ModelParams, ModelState};

pub use loss::{a3c_loss, a3c_loss_with_advantages, entropy_of, nstep_returns, returns_from, LossTerms, LossVars, RolloutBuffer, RolloutStep};
pub use optim::{shared_adam_step, AdamConfig, OptimizerStore, SharedOptimizerState, UpdateInfo};

/// Training hyperparameters. Field defaults are the reference settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: AgentVariant,
    pub workers: usize,
    /// Rollout length `K`.
    pub rollout: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    /// Entropy coefficient `λ`.
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Global-norm gradient clip; `None` disables it.
    pub grad_clip: Option<f64>,
    /// World sizes of the curriculum courses.
    pub courses: Vec<usize>,
    /// Success ratio that moves training to the next course.
    pub advance_threshold: f64,
    /// Global environment steps between evaluations.
    pub eval_interval: u64,
    /// Environment steps per evaluation window.
    pub eval_steps: usize,
    pub max_episode_steps: usize,
    /// Global environment-step budget.
    pub total_steps: u64,
    pub density: f64,
    pub seed: u64,
    /// Save a checkpoint every this many global steps.
    pub checkpoint_every: Option<u64>,
    pub hidden: usize,
    pub memory: MemoryShape,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: AgentVariant::NeuralSlam,
            workers: 16,
            rollout: 20,
            lr: 1e-4,
            weight_decay: 1e-4,
            gamma: 0.99,
            entropy_coef: 0.01,
            value_coef: 0.5,
            grad_clip: Some(40.0),
            courses: vec![8, 10, 12],
            advance_threshold: 0.9,
            eval_interval: 3000,
            eval_steps: 3000,
            max_episode_steps: MAX_EPISODE_STEPS,
            total_steps: 200_000,
            density: DEFAULT_DENSITY,
            seed: 0,
            checkpoint_every: None,
            hidden: crate::policy::DEFAULT_HIDDEN,
            memory: MemoryShape::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.rollout == 0 {
            return bad("rollout length K must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.workers == 0 {
            return bad("at least one worker is required");
        }
        if self.courses.is_empty() {
            return bad("the curriculum needs at least one course");
        }
        if self.courses.iter().any(|c| *c > self.memory.width || *c > self.memory.height) {
            return bad("every course must fit inside the memory grid");
        }
        if self.eval_interval == 0 || self.eval_steps == 0 {
            return bad("evaluation interval and length must be positive");
        }
        if self.variant == AgentVariant::Random {
            return bad("the random agent has no parameters to train");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            what: "training config".into(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_toml(&text).map_err(|e| match e {
            Error::Parse { msg, .. } => Error::Parse {
                what: path.display().to_string(),
                msg,
            },
            other => other,
        })
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            memory: self.memory,
            ..ModelConfig::new(self.variant)
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            grad_clip: self.grad_clip,
            ..AdamConfig::default()
        }
    }
}

/// Mixes seed components into one well-spread seed (SplitMix64 steps).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut z: u64 = 0x9E37_79B9_7F4A_7C15;
    for p in parts {
        z = z.wrapping_add(*p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Moves to the next course once the success ratio reaches `threshold`;
/// never regresses and stays on the last course.
pub fn curriculum_advance(success_ratio: f64, current: usize, courses: usize, threshold: f64) -> usize {
    if success_ratio >= threshold && current + 1 < courses {
        current + 1
    } else {
        current
    }
}

/// Aggregate of one evaluation window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    /// Episodes that finished inside the window.
    pub episodes: usize,
    pub solved: usize,
    pub success_ratio: f64,
    pub mean_reward: f64,
    pub mean_steps: f64,
}

/// How an agent picks actions outside training: greedy, except the random
/// agent which samples its uniform policy.
pub fn eval_mode(variant: AgentVariant) -> ActMode {
    if variant == AgentVariant::Random {
        ActMode::Sample
    } else {
        ActMode::Greedy
    }
}

/// Runs fresh episodes on new `size`-sized worlds until `budget` steps are
/// used. Episodes cut off by the budget are not counted.
pub fn evaluate_window(
    params: &ModelParams,
    size: usize,
    density: f64,
    budget: usize,
    max_episode_steps: usize,
    seed: u64,
) -> Result<WindowStats> {
    let cfg = *params.config();
    let mode = eval_mode(cfg.variant);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 1]));
    let (mut used, mut episodes, mut solved) = (0usize, 0usize, 0usize);
    let (mut reward_sum, mut steps_sum) = (0.0, 0usize);
    let mut index = 0u64;
    while used < budget {
        let world = Arc::new(World::generate(size, density, derive_seed(&[seed, 2, index]))?);
        let (ep, mut obs) = EpisodeState::reset(world, derive_seed(&[seed, 3, index]));
        let mut ep = ep.with_max_steps(Some(max_episode_steps));
        index += 1;
        let mut state = ModelState::reset(&cfg, ep.pose())?;
        let mut total = 0.0;
        while !ep.done() && used < budget {
            let f = forward(params, &state, &obs)?;
            let a = act(&f.pi, mode, &mut rng)?;
            let r = ep.step(a)?;
            total += r.reward;
            obs = r.observation;
            state = f.state;
            used += 1;
        }
        if ep.done() {
            episodes += 1;
            solved += ep.solved() as usize;
            reward_sum += total;
            steps_sum += ep.steps();
        }
    }
    let n = episodes.max(1) as f64;
    Ok(WindowStats {
        episodes,
        solved,
        success_ratio: if episodes == 0 { 0.0 } else { solved as f64 / episodes as f64 },
        mean_reward: reward_sum / n,
        mean_steps: steps_sum as f64 / n,
    })
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Episode {
        global_step: u64,
        course: usize,
        worker: usize,
        episode_reward: f64,
        episode_length: usize,
        solved: bool,
        policy_loss: f64,
        value_loss: f64,
        entropy: f64,
        grad_norm: f64,
    },
    Eval(EvalRecord),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub global_step: u64,
    /// World size evaluated on.
    pub size: usize,
    pub course: usize,
    #[serde(flatten)]
    pub stats: WindowStats,
    /// Course after applying the advance rule.
    pub next_course: usize,
}

/// Where training writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    /// JSON-lines training log.
    pub log: Option<PathBuf>,
    /// Directory for periodic and final checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub evals: Vec<EvalRecord>,
    pub episodes: usize,
    pub env_steps: u64,
    pub updates: u64,
    pub skipped: u64,
    pub final_course: usize,
    /// Workers that stopped on an error, with the diagnostic.
    pub worker_errors: Vec<(usize, String)>,
}

struct Run<'a> {
    config: &'a TrainConfig,
    adam: AdamConfig,
    shared: SharedOptimizerState,
    env_steps: AtomicU64,
    course: AtomicUsize,
    episodes: AtomicUsize,
    evals: Mutex<Vec<EvalRecord>>,
    log: Mutex<Option<BufWriter<File>>>,
    checkpoint_dir: Option<PathBuf>,
}

impl Run<'_> {
    fn write_log(&self, record: &LogRecord) -> Result<()> {
        let mut guard = self.log.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(w) = guard.as_mut() {
            let line = serde_json::to_string(record)?;
            writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
        }
        Ok(())
    }

    fn evaluate(&self, global_step: u64) -> Result<()> {
        let params = self.shared.snapshot();
        let course = self.course.load(Ordering::SeqCst);
        let size = self.config.courses[course];
        let stats = evaluate_window(
            &params,
            size,
            self.config.density,
            self.config.eval_steps,
            self.config.max_episode_steps,
            derive_seed(&[self.config.seed, 0xE7A1, global_step]),
        )?;
        let next = curriculum_advance(
            stats.success_ratio,
            course,
            self.config.courses.len(),
            self.config.advance_threshold,
        );
        // only ever move forward, even if another evaluation raced ahead
        self.course.fetch_max(next, Ordering::SeqCst);
        let record = EvalRecord {
            global_step,
            size,
            course,
            stats,
            next_course: next,
        };
        self.evals.lock().unwrap_or_else(|e| e.into_inner()).push(record);
        self.write_log(&LogRecord::Eval(record))
    }

    fn save_checkpoint(&self, name: &str, step: u64) -> Result<()> {
        if let Some(dir) = &self.checkpoint_dir {
            let params = (*self.shared.snapshot()).clone();
            Checkpoint::new(params, step, vec![self.config.seed]).save(&dir.join(name))?;
        }
        Ok(())
    }

    fn new_episode(&self, worker: usize, index: u64) -> Result<(EpisodeState, Observation)> {
        let size = self.config.courses[self.course.load(Ordering::SeqCst)];
        let world = World::generate(size, self.config.density, derive_seed(&[self.config.seed, 10, worker as u64, index]))?;
        let (ep, obs) = EpisodeState::reset(Arc::new(world), derive_seed(&[self.config.seed, 11, worker as u64, index]));
        Ok((ep.with_max_steps(Some(self.config.max_episode_steps)), obs))
    }

    /// Snapshot, roll out, differentiate, update; until the budget is spent.
    fn worker_loop(&self, id: usize) -> Result<()> {
        let cfg = self.config;
        let model = cfg.model();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 20, id as u64]));
        let mut episode_index = 0u64;
        let (mut ep, mut obs) = self.new_episode(id, episode_index)?;
        let mut state = ModelState::reset(&model, ep.pose())?;
        let mut ep_reward = 0.0;

        while self.env_steps.load(Ordering::SeqCst) < cfg.total_steps {
            let params = self.shared.snapshot();
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let mut ts = state.to_tape(&mut tape);
            let mut terms = Vec::with_capacity(cfg.rollout);
            let mut buffer = RolloutBuffer::default();
            for _ in 0..cfg.rollout {
                let out = params.step(&mut tape, &bound, &ts, &obs)?;
                let a = act(tape.data(out.probs), ActMode::Sample, &mut rng)?;
                let r = ep.step(a)?;
                terms.push(LossTerms {
                    log_probs: out.log_probs,
                    action: a,
                    value: out.value,
                });
                let log_probs = tape.data(out.log_probs);
                buffer.steps.push(RolloutStep {
                    observation: obs.clone(),
                    action: a,
                    reward: r.reward,
                    value: tape.scalar_value(out.value),
                    log_prob: log_probs[a.id()],
                    entropy: entropy_of(log_probs),
                });
                ep_reward += r.reward;
                ts = out.state;
                obs = r.observation;
                if ep.done() {
                    break;
                }
            }
            state = ts.to_state(&tape, &model)?;
            // only completion ends the task; hitting the step cap is a
            // truncation and still bootstraps from the value estimate
            let terminal = ep.solved();
            let bootstrap = if terminal {
                0.0
            } else {
                forward(&params, &state, &obs)?.value
            };
            buffer.finish(terminal, bootstrap);
            let returns = nstep_returns(&buffer, cfg.gamma);
            let loss = a3c_loss(&mut tape, &terms, &returns, cfg.entropy_coef, cfg.value_coef)?;
            let grads = tape.backward(loss.total)?;
            let info = self.shared.apply(params.params().collect_grads(&grads), &self.adam)?;
            let n = buffer.len() as u64;
            let last_loss = (loss.policy / n as f64, loss.value / n as f64, loss.entropy / n as f64, info.grad_norm);

            let before = self.env_steps.fetch_add(n, Ordering::SeqCst);
            let after = before + n;

            if ep.done() {
                self.episodes.fetch_add(1, Ordering::SeqCst);
                self.write_log(&LogRecord::Episode {
                    global_step: after,
                    course: self.course.load(Ordering::SeqCst),
                    worker: id,
                    episode_reward: ep_reward,
                    episode_length: ep.steps(),
                    solved: ep.solved(),
                    policy_loss: last_loss.0,
                    value_loss: last_loss.1,
                    entropy: last_loss.2,
                    grad_norm: last_loss.3,
                })?;
                episode_index += 1;
                (ep, obs) = self.new_episode(id, episode_index)?;
                state = ModelState::reset(&model, ep.pose())?;
                ep_reward = 0.0;
            }
            if before / cfg.eval_interval != after / cfg.eval_interval {
                self.evaluate(after / cfg.eval_interval * cfg.eval_interval)?;
            }
            if let Some(every) = cfg.checkpoint_every.filter(|e| *e > 0) {
                if before / every != after / every {
                    let at = after / every * every;
                    self.save_checkpoint(&format!("step-{at:010}.ckpt"), at)?;
                }
            }
        }
        Ok(())
    }
}

/// Trains from freshly initialised parameters.
pub fn train(config: &TrainConfig, outputs: &TrainOutputs) -> Result<TrainOutcome> {
    config.validate()?;
    let params = ModelParams::init(config.model(), derive_seed(&[config.seed, 0x1A17]))?;
    train_from(config, params, outputs)
}

/// Trains starting from `params`. Evaluates once before training, at every
/// interval crossing, and once at the end.
pub fn train_from(config: &TrainConfig, params: ModelParams, outputs: &TrainOutputs) -> Result<TrainOutcome> {
    config.validate()?;
    if params.config() != &config.model() {
        return Err(Error::Invalid("initial parameters do not match the configured model".into()));
    }
    let log = match &outputs.log {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => None,
    };
    if let Some(dir) = &outputs.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let run = Run {
        config,
        adam: config.adam(),
        shared: SharedOptimizerState::new(params),
        env_steps: AtomicU64::new(0),
        course: AtomicUsize::new(0),
        episodes: AtomicUsize::new(0),
        evals: Mutex::new(Vec::new()),
        log: Mutex::new(log),
        checkpoint_dir: outputs.checkpoint_dir.clone(),
    };
    run.evaluate(0)?;

    let mut worker_errors = Vec::new();
    if config.workers == 1 {
        if let Err(e) = run.worker_loop(0) {
            worker_errors.push((0, e.to_string()));
        }
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..config.workers)
                .map(|id| {
                    let run = &run;
                    s.spawn(move || run.worker_loop(id))
                })
                .collect();
            for (id, h) in handles.into_iter().enumerate() {
                match h.join() {
                    Ok(Ok(())) => {}
                    Ok(Err(e)) => worker_errors.push((id, e.to_string())),
                    Err(_) => worker_errors.push((id, "worker panicked".to_string())),
                }
            }
        });
    }
    if worker_errors.len() == config.workers {
        return Err(Error::Invalid(format!("every worker failed: {}", worker_errors[0].1)));
    }

    let steps = run.env_steps.load(Ordering::SeqCst);
    let last_eval = run.evals.lock().unwrap_or_else(|e| e.into_inner()).last().map(|r| r.global_step);
    if last_eval != Some(steps) {
        run.evaluate(steps)?;
    }
    run.save_checkpoint("final.ckpt", steps)?;
    if let Some(w) = run.log.lock().unwrap_or_else(|e| e.into_inner()).as_mut() {
        w.flush().map_err(|e| Error::io("training log", e))?;
    }

    let evals = run.evals.into_inner().unwrap_or_else(|e| e.into_inner());
    let updates = run.shared.updates();
    let skipped = run.shared.skipped();
    Ok(TrainOutcome {
        params: run.shared.into_params(),
        evals,
        episodes: run.episodes.load(Ordering::SeqCst),
        env_steps: steps,
        updates,
        skipped,
        final_course: run.course.load(Ordering::SeqCst),
        worker_errors,
    })
}

/// Reads a JSON-lines training log.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
