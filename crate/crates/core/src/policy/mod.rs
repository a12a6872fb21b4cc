//! Agent networks: the memory-augmented SLAM agent and its baselines.
//!
//! Every forward pass is recorded on a [`Tape`] so the same code serves
//! acting and training. Recurrent state crosses time as tape nodes inside a
//! rollout and as plain values between rollouts.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Boundary, ParamSet, Parameter, Tape, Tensor, Var};
use crate::env::{Action, AgentPose, Observation, SENSOR_LEN};
use crate::error::{Error, Result};
use crate::memory::{
    control_width, diff, init_prior, motion_targets, AccessWeight, ExternalMemory, MemoryShape, DEFAULT_PRIOR_SIGMA,
};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Hidden units per LSTM layer.
pub const DEFAULT_HIDDEN: usize = 128;
/// Initial forget-gate bias.
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentVariant {
    /// LSTM controller plus external memory with motion-predicted priors.
    NeuralSlam,
    /// One LSTM on sensor and last action.
    A3c,
    /// Two stacked LSTMs; the action enters the first.
    A3cNav1,
    /// Two stacked LSTMs; the action joins the first one's output.
    A3cNav2,
    /// External memory without localization and motion prediction; the
    /// action enters the LSTM instead.
    A3cExt,
    /// Uniform policy, no parameters.
    Random,
}

impl AgentVariant {
    pub const ALL: [AgentVariant; 6] = [
        AgentVariant::NeuralSlam,
        AgentVariant::A3c,
        AgentVariant::A3cNav1,
        AgentVariant::A3cNav2,
        AgentVariant::A3cExt,
        AgentVariant::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentVariant::NeuralSlam => "neural-slam",
            AgentVariant::A3c => "a3c",
            AgentVariant::A3cNav1 => "a3c-nav1",
            AgentVariant::A3cNav2 => "a3c-nav2",
            AgentVariant::A3cExt => "a3c-ext",
            AgentVariant::Random => "random",
        }
    }

    pub fn uses_memory(self) -> bool {
        matches!(self, AgentVariant::NeuralSlam | AgentVariant::A3cExt)
    }

    /// Whether the last action's one-hot is appended to the first LSTM input.
    fn action_in_first_input(self) -> bool {
        matches!(self, AgentVariant::A3c | AgentVariant::A3cNav1 | AgentVariant::A3cExt)
    }

    fn stacked(self) -> bool {
        matches!(self, AgentVariant::A3cNav1 | AgentVariant::A3cNav2)
    }
}

impl fmt::Display for AgentVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        let norm = if norm == "neuralslam" { "neural-slam".to_string() } else { norm };
        AgentVariant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::Invalid(format!("unknown agent variant `{s}`")))
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: AgentVariant,
    pub hidden: usize,
    pub memory: MemoryShape,
    pub prior_sigma: f64,
    pub boundary: Boundary,
}

impl ModelConfig {
    pub fn new(variant: AgentVariant) -> Self {
        ModelConfig {
            variant,
            hidden: DEFAULT_HIDDEN,
            memory: MemoryShape::default(),
            prior_sigma: DEFAULT_PRIOR_SIGMA,
            boundary: Boundary::Circular,
        }
    }

    /// 8 hidden units and a 4x4x4 memory, for gradient checks.
    pub fn toy(variant: AgentVariant) -> Self {
        ModelConfig {
            hidden: 8,
            memory: MemoryShape::new(4, 4, 4),
            ..ModelConfig::new(variant)
        }
    }

    /// Width of the features the policy and value heads see.
    pub fn feature_width(&self) -> usize {
        if self.variant.uses_memory() {
            self.hidden + self.memory.channels
        } else {
            self.hidden
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct LstmLayer {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Layout {
    lstm1: Option<LstmLayer>,
    lstm2: Option<LstmLayer>,
    write: Option<Linear>,
    read: Option<Linear>,
    pi: Option<Linear>,
    value: Option<Linear>,
}

struct Builder {
    set: ParamSet,
    rng: Option<ChaCha8Rng>,
}

impl Builder {
    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<usize> {
        match self.rng.as_mut() {
            Some(rng) => self.set.add_uniform(name, rows, cols, rng),
            None => self.set.add(name, Tensor::zeros(&[rows, cols])),
        }
    }

    fn linear(&mut self, prefix: &str, input: usize, output: usize) -> Result<Linear> {
        let w = self.matrix(&format!("{prefix}.w"), output, input)?;
        let b = self.set.add(format!("{prefix}.b"), Tensor::zeros(&[output]))?;
        Ok(Linear { w, b })
    }

    /// Gate rows are ordered input, forget, candidate, output.
    fn lstm(&mut self, prefix: &str, input: usize, hidden: usize) -> Result<LstmLayer> {
        let w = self.matrix(&format!("{prefix}.w"), 4 * hidden, input + hidden)?;
        let mut bias = vec![0.0; 4 * hidden];
        if self.rng.is_some() {
            bias[hidden..2 * hidden].fill(FORGET_BIAS);
        }
        let b = self.set.add(format!("{prefix}.b"), Tensor::vector(bias))?;
        Ok(LstmLayer { w, b })
    }
}

/// Network weights of one agent. Immutable once shared between workers.
#[derive(Clone, Debug)]
pub struct ModelParams {
    config: ModelConfig,
    set: ParamSet,
    layout: Layout,
}

impl ModelParams {
    /// Weights drawn U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero except
    /// the forget gate at [`FORGET_BIAS`].
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        ModelParams::build(config, Some(ChaCha8Rng::seed_from_u64(seed)))
    }

    /// Every weight and bias zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        ModelParams::build(config, None)
    }

    fn build(config: ModelConfig, rng: Option<ChaCha8Rng>) -> Result<Self> {
        if config.hidden == 0 || config.memory.slots() == 0 || config.memory.channels == 0 {
            return Err(Error::Invalid("hidden size and memory shape must be positive".into()));
        }
        let v = config.variant;
        let (h, c) = (config.hidden, config.memory.channels);
        let mut b = Builder { set: ParamSet::new(), rng };
        let mut layout = Layout::default();
        if v != AgentVariant::Random {
            let first_in = SENSOR_LEN + if v.action_in_first_input() { Action::COUNT } else { 0 };
            layout.lstm1 = Some(b.lstm("lstm1", first_in, h)?);
            if v.stacked() {
                let second_in = h + if v == AgentVariant::A3cNav2 { Action::COUNT } else { 0 };
                layout.lstm2 = Some(b.lstm("lstm2", second_in, h)?);
            }
            if v.uses_memory() {
                layout.write = Some(b.linear("write", h, control_width(c, true))?);
                layout.read = Some(b.linear("read", h, control_width(c, false))?);
            }
            let feat = config.feature_width();
            layout.pi = Some(b.linear("pi", feat, Action::COUNT)?);
            layout.value = Some(b.linear("value", feat, 1)?);
        }
        Ok(ModelParams { config, set: b.set, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> AgentVariant {
        self.config.variant
    }

    pub fn params(&self) -> &ParamSet {
        &self.set
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.set
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.set.num_values()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.set.iter()
    }

    /// Registers every parameter on `tape`; the result is indexed like the
    /// parameter set.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.set.bind(tape)
    }

    /// Carves a flat vector node (as produced by [`ParamSet::flatten`]) into
    /// parameter-shaped nodes, so a whole model can be differentiated as a
    /// function of one input.
    pub fn bind_flat(&self, tape: &mut Tape, flat: Var) -> Result<Vec<Var>> {
        let mut offset = 0;
        let mut out = Vec::with_capacity(self.set.len());
        for p in self.set.iter() {
            let n = p.value.len();
            let part = tape.slice(flat, offset, n)?;
            out.push(tape.reshape(part, p.value.shape())?);
            offset += n;
        }
        Ok(out)
    }

    /// Records one time step on `tape`. `bound` comes from [`Self::bind`].
    pub fn step(&self, tape: &mut Tape, bound: &[Var], state: &TapeState, obs: &Observation) -> Result<StepVars> {
        let cfg = &self.config;
        let v = cfg.variant;
        let action = obs.last_action;

        if v == AgentVariant::Random {
            let logits = tape.constant(Tensor::zeros(&[Action::COUNT]));
            let value = tape.constant(Tensor::scalar(0.0));
            return Ok(StepVars::assemble(tape, logits, value, state.advanced(action)));
        }
        let layout = &self.layout;
        let sensor = tape.constant(Tensor::vector(obs.sensor.to_vec()));
        let onehot = tape.constant(Tensor::vector(action.one_hot().to_vec()));

        let x1 = if v.action_in_first_input() {
            tape.concat(&[sensor, onehot])?
        } else {
            sensor
        };
        let l1 = layout.lstm1.expect("learned variants have a first LSTM");
        let (h1, c1) = lstm_cell(tape, bound, l1, x1, state.h1, state.c1, cfg.hidden)?;
        check(tape, "lstm1", &[h1, c1])?;
        let mut next = state.advanced(action);
        next.h1 = h1;
        next.c1 = c1;

        let mut h = h1;
        if let Some(l2) = layout.lstm2 {
            let (h2_prev, c2_prev) = state.second.expect("stacked state");
            let x2 = if v == AgentVariant::A3cNav2 {
                tape.concat(&[h1, onehot])?
            } else {
                h1
            };
            let (h2, c2) = lstm_cell(tape, bound, l2, x2, h2_prev, c2_prev, cfg.hidden)?;
            check(tape, "lstm2", &[h2, c2])?;
            next.second = Some((h2, c2));
            h = h2;
        }

        let mut features = h;
        let mut trace = None;
        if let Some(mem_state) = state.memory {
            let shape = cfg.memory;
            let (prior_w, prior_r) = match v {
                AgentVariant::NeuralSlam => {
                    let pw = predicted_prior(tape, mem_state.write_w, action)?;
                    let pr = predicted_prior(tape, mem_state.read_w, action)?;
                    (pw, pr)
                }
                _ => (mem_state.write_w, mem_state.read_w),
            };
            let wl = layout.write.expect("memory variants have a write head");
            let raw_w = linear(tape, bound, wl, h)?;
            let ctl_w = diff::squash_controls(tape, raw_w, shape.channels, true)?;
            let stages_w = diff::address(
                tape,
                mem_state.memory,
                prior_w,
                &ctl_w,
                shape.height,
                shape.width,
                cfg.boundary,
            )?;
            let erase = ctl_w.erase.expect("write head emits erase");
            let add = ctl_w.add.expect("write head emits add");
            let memory = diff::write(tape, mem_state.memory, stages_w.weight, erase, add)?;
            check(tape, "write head", &[stages_w.weight, memory])?;

            let rl = layout.read.expect("memory variants have a read head");
            let raw_r = linear(tape, bound, rl, h)?;
            let ctl_r = diff::squash_controls(tape, raw_r, shape.channels, false)?;
            let stages_r = diff::address(tape, memory, prior_r, &ctl_r, shape.height, shape.width, cfg.boundary)?;
            let read = diff::read(tape, memory, stages_r.weight)?;
            check(tape, "read head", &[stages_r.weight, read])?;

            features = tape.concat(&[h, read])?;
            next.memory = Some(MemoryVars {
                memory,
                write_w: stages_w.weight,
                read_w: stages_r.weight,
            });
            trace = Some(AddressingTrace {
                write_prior: prior_w,
                write: stages_w,
                read_prior: prior_r,
                read: stages_r,
                read_vector: read,
            });
        }

        let logits = linear(tape, bound, layout.pi.expect("policy head"), features)?;
        check(tape, "policy head", &[logits])?;
        let value = linear(tape, bound, layout.value.expect("value head"), features)?;
        let value = tape.reshape(value, &[])?;
        check(tape, "value head", &[value])?;
        let mut out = StepVars::assemble(tape, logits, value, next);
        out.trace = trace;
        Ok(out)
    }
}

fn check(tape: &Tape, layer: &str, vars: &[Var]) -> Result<()> {
    if vars.iter().all(|v| tape.value(*v).is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(layer.to_string()))
    }
}

fn linear(tape: &mut Tape, bound: &[Var], l: Linear, x: Var) -> Result<Var> {
    let y = tape.matvec(bound[l.w], x)?;
    tape.add(y, bound[l.b])
}

fn lstm_cell(
    tape: &mut Tape,
    bound: &[Var],
    l: LstmLayer,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    hidden: usize,
) -> Result<(Var, Var)> {
    let z = tape.concat(&[x, h_prev])?;
    let gates = tape.matvec(bound[l.w], z)?;
    let gates = tape.add(gates, bound[l.b])?;
    let i = tape.slice(gates, 0, hidden)?;
    let f = tape.slice(gates, hidden, hidden)?;
    let g = tape.slice(gates, 2 * hidden, hidden)?;
    let o = tape.slice(gates, 3 * hidden, hidden)?;
    let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
    let keep = tape.mul(f, c_prev)?;
    let fresh = tape.mul(i, g)?;
    let c = tape.add(keep, fresh)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Motion model applied to a head's previous weight. The pose estimate
/// that fixes where mass moves is discrete; the moved mass stays on the tape.
fn predicted_prior(tape: &mut Tape, prev: Var, action: Action) -> Result<Var> {
    let w = AccessWeight::from_tensor(tape.value(prev))?;
    match motion_targets(&w, action) {
        Some(targets) => diff::motion_shift(tape, prev, targets),
        None => Ok(prev),
    }
}

/// Memory-side recurrent state as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct MemoryVars {
    pub memory: Var,
    pub write_w: Var,
    pub read_w: Var,
}

/// Recurrent state as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct TapeState {
    pub h1: Var,
    pub c1: Var,
    pub second: Option<(Var, Var)>,
    pub memory: Option<MemoryVars>,
    pub prev_action: Action,
}

impl TapeState {
    fn advanced(&self, action: Action) -> TapeState {
        TapeState {
            prev_action: action,
            ..*self
        }
    }

    /// Reads the node values back into a plain state.
    pub fn to_state(&self, tape: &Tape, config: &ModelConfig) -> Result<ModelState> {
        let vec = |v: Var| tape.data(v).to_vec();
        Ok(ModelState {
            h1: vec(self.h1),
            c1: vec(self.c1),
            second: self.second.map(|(h, c)| (vec(h), vec(c))),
            memory: match self.memory {
                Some(m) => Some(MemoryState {
                    memory: ExternalMemory::from_tensor(config.memory, tape.value(m.memory).clone())?,
                    write_w: AccessWeight::from_tensor(tape.value(m.write_w))?,
                    read_w: AccessWeight::from_tensor(tape.value(m.read_w))?,
                }),
                None => None,
            },
            prev_action: self.prev_action,
        })
    }
}

/// Intermediate addressing nodes of one step, for tests and rendering.
#[derive(Clone, Copy, Debug)]
pub struct AddressingTrace {
    pub write_prior: Var,
    pub write: diff::AddressingStages,
    pub read_prior: Var,
    pub read: diff::AddressingStages,
    pub read_vector: Var,
}

/// Nodes produced by one recorded step.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub logits: Var,
    pub log_probs: Var,
    pub probs: Var,
    pub value: Var,
    pub state: TapeState,
    pub trace: Option<AddressingTrace>,
}

impl StepVars {
    fn assemble(tape: &mut Tape, logits: Var, value: Var, state: TapeState) -> StepVars {
        let log_probs = tape.log_softmax(logits);
        let probs = tape.softmax(logits);
        StepVars {
            logits,
            log_probs,
            probs,
            value,
            state,
            trace: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryState {
    pub memory: ExternalMemory,
    pub write_w: AccessWeight,
    pub read_w: AccessWeight,
}

/// Worker-local recurrent state.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub h1: Vec<f64>,
    pub c1: Vec<f64>,
    pub second: Option<(Vec<f64>, Vec<f64>)>,
    pub memory: Option<MemoryState>,
    pub prev_action: Action,
}

impl ModelState {
    /// Episode-start state: zero LSTM state, zero memory, both access
    /// weights at the prior around `start`.
    pub fn reset(config: &ModelConfig, start: AgentPose) -> Result<Self> {
        let h = config.hidden;
        let v = config.variant;
        let memory = if v.uses_memory() {
            let prior = init_prior(config.memory, start, config.prior_sigma)?;
            Some(MemoryState {
                memory: ExternalMemory::zeros(config.memory),
                write_w: prior.clone(),
                read_w: prior,
            })
        } else {
            None
        };
        Ok(ModelState {
            h1: vec![0.0; h],
            c1: vec![0.0; h],
            second: v.stacked().then(|| (vec![0.0; h], vec![0.0; h])),
            memory,
            prev_action: Action::StandStill,
        })
    }

    /// Places the state on `tape` as constants, cutting gradient flow to
    /// earlier steps.
    pub fn to_tape(&self, tape: &mut Tape) -> TapeState {
        let mut vec = |v: &[f64]| tape.constant(Tensor::vector(v.to_vec()));
        let h1 = vec(&self.h1);
        let c1 = vec(&self.c1);
        let second = self.second.as_ref().map(|(h, c)| (vec(h), vec(c)));
        let memory = self.memory.as_ref().map(|m| MemoryVars {
            memory: tape.constant(m.memory.values().clone()),
            write_w: tape.constant(m.write_w.to_tensor()),
            read_w: tape.constant(m.read_w.to_tensor()),
        });
        TapeState {
            h1,
            c1,
            second,
            memory,
            prev_action: self.prev_action,
        }
    }

    pub fn is_finite(&self) -> bool {
        let ok = |v: &[f64]| v.iter().all(|x| x.is_finite());
        ok(&self.h1)
            && ok(&self.c1)
            && self.second.as_ref().is_none_or(|(h, c)| ok(h) && ok(c))
            && self.memory.as_ref().is_none_or(|m| {
                m.memory.is_finite() && ok(m.write_w.values()) && ok(m.read_w.values())
            })
    }
}

/// Result of a value-level forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub pi: [f64; Action::COUNT],
    pub value: f64,
    pub state: ModelState,
}

/// One step outside any training tape.
pub fn forward(params: &ModelParams, state: &ModelState, obs: &Observation) -> Result<Forward> {
    let mut tape = Tape::new();
    let bound: Vec<Var> = params
        .iter()
        .map(|p| tape.constant(p.value.clone()))
        .collect();
    let ts = state.to_tape(&mut tape);
    let out = params.step(&mut tape, &bound, &ts, obs)?;
    let mut pi = [0.0; Action::COUNT];
    pi.copy_from_slice(tape.data(out.probs));
    Ok(Forward {
        pi,
        value: tape.scalar_value(out.value),
        state: out.state.to_state(&tape, params.config())?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActMode {
    /// Draw from the policy distribution.
    Sample,
    /// Most probable action; ties go to the lowest index.
    Greedy,
}

/// Picks an action from `pi`.
pub fn act<R: Rng + ?Sized>(pi: &[f64], mode: ActMode, rng: &mut R) -> Result<Action> {
    if pi.len() != Action::COUNT {
        return Err(Error::Invalid(format!("policy has {} entries, expected {}", pi.len(), Action::COUNT)));
    }
    if pi.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("policy".into()));
    }
    if pi.iter().any(|p| *p < 0.0) || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::Invalid(format!("{pi:?} is not a distribution")));
    }
    let id = match mode {
        ActMode::Greedy => {
            let mut best = 0;
            for (i, p) in pi.iter().enumerate() {
                if *p > pi[best] {
                    best = i;
                }
            }
            best
        }
        ActMode::Sample => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = None;
            for (i, p) in pi.iter().enumerate() {
                acc += p;
                if u < acc && *p > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave u above the final cumulative sum
            pick.unwrap_or_else(|| pi.iter().rposition(|p| *p > 0.0).unwrap_or(0))
        }
    };
    Ok(Action::from_id(id).expect("index below COUNT"))
}
