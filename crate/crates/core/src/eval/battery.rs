//! Finite-difference battery over every tape primitive, every differentiable
//! memory operation, and the end-to-end actor-critic loss.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    gradcheck_with, relative_error, Boundary, GradcheckOptions, OpKind, Tape, Tensor, Var, FD_STEP,
};
use crate::env::{Action, AgentPose, Heading, Observation, SENSOR_LEN};
use crate::error::{Error, Result};
use crate::memory::{diff, motion_targets_from};
use crate::policy::{AgentVariant, ModelConfig, ModelParams, ModelState};
use crate::trainer::{a3c_loss_with_advantages, LossTerms};

/// Tolerance for single operations.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for the end-to-end loss through the whole recurrent model.
pub const END_TO_END_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Small shapes and a 4x4x4 memory, 8-unit model; finishes in seconds.
    Toy,
    /// Larger shapes and the full-size model (sampled parameter coordinates).
    Full,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Scale::Toy),
            "full" => Ok(Scale::Full),
            other => Err(Error::Invalid(format!("unknown scale `{other}` (expected toy or full)"))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Toy => "toy",
            Scale::Full => "full",
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BatteryOptions {
    pub scale: Scale,
    /// Random instances per operation check.
    pub instances: usize,
    pub seed: u64,
    /// Sign-flip fault injected into the analytic gradients.
    pub fault: Option<OpKind>,
}

impl BatteryOptions {
    pub fn new(scale: Scale) -> Self {
        BatteryOptions {
            scale,
            instances: 100,
            seed: 0,
            fault: None,
        }
    }
}

/// Outcome of one named check over all its instances.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    pub failed_instances: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatteryReport {
    pub scale: Scale,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl BatteryReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// One line per check.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<24} instances={:<4} max_rel_err={:.3e} tol={:.0e}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.instances,
                c.max_rel_error,
                c.tolerance
            ));
        }
        out
    }
}

type Built = (Tensor, Box<dyn Fn(&mut Tape, Var) -> Result<Var>>);

struct Dims {
    vec: usize,
    rows: usize,
    h: usize,
    w: usize,
    channels: usize,
}

impl Dims {
    fn of(scale: Scale) -> Self {
        match scale {
            Scale::Toy => Dims {
                vec: 5,
                rows: 3,
                h: 4,
                w: 4,
                channels: 4,
            },
            Scale::Full => Dims {
                vec: 12,
                rows: 8,
                h: 8,
                w: 8,
                channels: 8,
            },
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// `Σ c ⊙ y` for fixed random `c`, so no output direction is privileged.
fn project(tape: &mut Tape, y: Var, coeffs: &[f64]) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let c = tape.constant(Tensor::new(shape, coeffs.to_vec())?);
    let m = tape.mul(y, c)?;
    Ok(tape.sum(m))
}

/// Splits the flat input into consecutive pieces of the given shapes.
fn split(tape: &mut Tape, x: Var, shapes: &[Vec<usize>]) -> Result<Vec<Var>> {
    let mut offset = 0;
    let mut out = Vec::with_capacity(shapes.len());
    for s in shapes {
        let n: usize = s.iter().product::<usize>().max(1);
        let part = tape.slice(x, offset, n)?;
        out.push(tape.reshape(part, s)?);
        offset += n;
    }
    Ok(out)
}

/// Builds a check from input pieces (shape, range) and a body that maps them
/// to an output, which is then projected on random coefficients.
fn piecewise<F>(rng: &mut ChaCha8Rng, pieces: &[(Vec<usize>, f64, f64)], out_len: usize, body: F) -> Built
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
{
    let mut point = Vec::new();
    for (shape, lo, hi) in pieces {
        let n: usize = shape.iter().product::<usize>().max(1);
        point.extend(uniform(rng, n, *lo, *hi));
    }
    let coeffs = uniform(rng, out_len, -1.0, 1.0);
    let shapes: Vec<Vec<usize>> = pieces.iter().map(|p| p.0.clone()).collect();
    let f = move |tape: &mut Tape, x: Var| -> Result<Var> {
        let parts = split(tape, x, &shapes)?;
        let y = body(tape, &parts)?;
        if tape.value(y).is_scalar() {
            Ok(y)
        } else {
            project(tape, y, &coeffs)
        }
    };
    (Tensor::vector(point), Box::new(f))
}

type Builder = fn(&mut ChaCha8Rng, &Dims) -> Built;

fn primitive_checks() -> Vec<(&'static str, Builder)> {
    vec![
        ("matvec", |r, d| {
            let (m, n) = (d.rows, d.vec);
            piecewise(r, &[(vec![m, n], -1.0, 1.0), (vec![n], -1.0, 1.0)], m, |t, p| t.matvec(p[0], p[1]))
        }),
        ("vecmat", |r, d| {
            let (m, n) = (d.rows, d.vec);
            piecewise(r, &[(vec![m], -1.0, 1.0), (vec![m, n], -1.0, 1.0)], n, |t, p| t.vecmat(p[0], p[1]))
        }),
        ("add", |r, d| {
            let n = d.vec;
            piecewise(r, &[(vec![n], -2.0, 2.0), (vec![n], -2.0, 2.0)], n, |t, p| t.add(p[0], p[1]))
        }),
        ("sub", |r, d| {
            let n = d.vec;
            piecewise(r, &[(vec![n], -2.0, 2.0), (vec![n], -2.0, 2.0)], n, |t, p| t.sub(p[0], p[1]))
        }),
        ("mul", |r, d| {
            let n = d.vec;
            piecewise(r, &[(vec![n], -2.0, 2.0), (vec![n], -2.0, 2.0)], n, |t, p| t.mul(p[0], p[1]))
        }),
        ("scale", |r, d| {
            let c = r.gen_range(-3.0..3.0);
            piecewise(r, &[(vec![d.vec], -2.0, 2.0)], d.vec, move |t, p| Ok(t.scale(p[0], c)))
        }),
        ("add_const", |r, d| {
            let c = r.gen_range(-3.0..3.0);
            // squared so the constant offset changes the gradient
            piecewise(r, &[(vec![d.vec], -2.0, 2.0)], d.vec, move |t, p| {
                let y = t.add_const(p[0], c);
                t.mul(y, y)
            })
        }),
        ("rsub_const", |r, d| {
            let c = r.gen_range(-3.0..3.0);
            piecewise(r, &[(vec![d.vec], -2.0, 2.0)], d.vec, move |t, p| {
                let y = t.rsub_const(c, p[0]);
                t.mul(y, y)
            })
        }),
        ("mul_scalar", |r, d| {
            let n = d.vec;
            piecewise(r, &[(vec![n], -2.0, 2.0), (vec![], -2.0, 2.0)], n, |t, p| t.mul_scalar(p[0], p[1]))
        }),
        ("div_scalar", |r, d| {
            let n = d.vec;
            piecewise(r, &[(vec![n], -2.0, 2.0), (vec![], 0.5, 2.0)], n, |t, p| t.div_scalar(p[0], p[1]))
        }),
        ("sigmoid", |r, d| piecewise(r, &[(vec![d.vec], -4.0, 4.0)], d.vec, |t, p| Ok(t.sigmoid(p[0])))),
        ("tanh", |r, d| piecewise(r, &[(vec![d.vec], -3.0, 3.0)], d.vec, |t, p| Ok(t.tanh(p[0])))),
        ("softplus", |r, d| piecewise(r, &[(vec![d.vec], -4.0, 4.0)], d.vec, |t, p| Ok(t.softplus(p[0])))),
        ("exp", |r, d| piecewise(r, &[(vec![d.vec], -2.0, 2.0)], d.vec, |t, p| Ok(t.exp(p[0])))),
        ("ln", |r, d| piecewise(r, &[(vec![d.vec], 0.2, 3.0)], d.vec, |t, p| Ok(t.ln(p[0])))),
        ("pow", |r, d| {
            let n = d.vec;
            piecewise(r, &[(vec![n], 0.2, 2.0), (vec![], 0.5, 3.0)], n, |t, p| t.pow(p[0], p[1]))
        }),
        ("softmax", |r, d| piecewise(r, &[(vec![d.vec], -3.0, 3.0)], d.vec, |t, p| Ok(t.softmax(p[0])))),
        ("log_softmax", |r, d| {
            piecewise(r, &[(vec![d.vec], -3.0, 3.0)], d.vec, |t, p| Ok(t.log_softmax(p[0])))
        }),
        ("concat", |r, d| {
            let n = d.vec;
            piecewise(r, &[(vec![n], -2.0, 2.0), (vec![3], -2.0, 2.0)], n + 3, |t, p| {
                let a = t.tanh(p[0]);
                t.concat(&[a, p[1]])
            })
        }),
        ("slice", |r, d| {
            let n = d.vec;
            piecewise(r, &[(vec![n], -2.0, 2.0)], n - 2, move |t, p| {
                let s = t.slice(p[0], 1, n - 2)?;
                Ok(t.exp(s))
            })
        }),
        ("sum", |r, d| {
            piecewise(r, &[(vec![d.vec], -2.0, 2.0)], 1, |t, p| {
                let s = t.sum(p[0]);
                let s2 = t.mul(s, s)?;
                Ok(s2)
            })
        }),
        ("reshape", |r, d| {
            let (m, n) = (d.rows, d.vec);
            piecewise(r, &[(vec![m * n], -2.0, 2.0)], m * n, move |t, p| {
                let y = t.reshape(p[0], &[m, n])?;
                Ok(t.tanh(y))
            })
        }),
        ("cosine_sim", |r, d| {
            let (m, n) = (d.rows, d.channels);
            piecewise(r, &[(vec![m, n], -1.0, 1.0), (vec![n], -1.0, 1.0)], m, |t, p| {
                t.cosine_sim(p[0], p[1], diff::COSINE_EPS)
            })
        }),
        ("conv3x3_circular", |r, d| {
            let (h, w) = (d.h, d.w);
            piecewise(r, &[(vec![h, w], 0.0, 1.0), (vec![9], 0.0, 1.0)], h * w, |t, p| {
                t.conv3x3(p[0], p[1], Boundary::Circular)
            })
        }),
        ("conv3x3_zero", |r, d| {
            let (h, w) = (d.h, d.w);
            piecewise(r, &[(vec![h, w], 0.0, 1.0), (vec![9], 0.0, 1.0)], h * w, |t, p| {
                t.conv3x3(p[0], p[1], Boundary::Zero)
            })
        }),
        ("outer", |r, d| {
            let (m, n) = (d.rows, d.channels);
            piecewise(r, &[(vec![m], -2.0, 2.0), (vec![n], -2.0, 2.0)], m * n, |t, p| Ok(t.outer(p[0], p[1])))
        }),
        ("scatter", |r, d| {
            let n = d.h * d.w;
            let targets: Vec<usize> = (0..n).map(|_| r.gen_range(0..n)).collect();
            let shape = vec![d.h, d.w];
            piecewise(r, &[(vec![d.h, d.w], -1.0, 1.0)], n, move |t, p| {
                let s = t.scatter(p[0], targets.clone(), &shape)?;
                t.mul(s, s)
            })
        }),
    ]
}

/// Checks whose input includes an access weight take it raw and
/// normalise on the tape, so perturbations stay on the simplex.
fn simplex(tape: &mut Tape, w: Var) -> Result<Var> {
    let s = tape.sum(w);
    tape.div_scalar(w, s)
}

fn memory_checks() -> Vec<(&'static str, Builder)> {
    vec![
        ("content_weight", |r, d| {
            let (h, w, c) = (d.h, d.w, d.channels);
            piecewise(
                r,
                &[(vec![h * w, c], -1.0, 1.0), (vec![c], -1.0, 1.0), (vec![1], 0.2, 5.0)],
                h * w,
                move |t, p| diff::content_weight(t, p[0], p[1], p[2], h, w),
            )
        }),
        ("interpolate", |r, d| {
            let (h, w) = (d.h, d.w);
            piecewise(
                r,
                &[(vec![h, w], 0.05, 1.0), (vec![h, w], 0.05, 1.0), (vec![1], 0.05, 0.95)],
                h * w,
                |t, p| {
                    let a = simplex(t, p[0])?;
                    let b = simplex(t, p[1])?;
                    diff::interpolate(t, a, b, p[2])
                },
            )
        }),
        ("shift", |r, d| {
            let (h, w) = (d.h, d.w);
            piecewise(r, &[(vec![h, w], 0.05, 1.0), (vec![9], -2.0, 2.0)], h * w, |t, p| {
                let wt = simplex(t, p[0])?;
                let k = t.softmax(p[1]);
                diff::shift(t, wt, k, Boundary::Circular)
            })
        }),
        ("sharpen", |r, d| {
            let (h, w) = (d.h, d.w);
            piecewise(r, &[(vec![h, w], 0.05, 1.0), (vec![1], 1.0, 4.0)], h * w, |t, p| {
                let wt = simplex(t, p[0])?;
                diff::sharpen(t, wt, p[1])
            })
        }),
        ("motion_shift", |r, d| {
            let (h, w) = (d.h, d.w);
            let action = Action::ALL[r.gen_range(0..4)];
            let pivot = (r.gen_range(0..w as i32), r.gen_range(0..h as i32));
            let heading = Heading::ALL[r.gen_range(0..4)];
            let targets = motion_targets_from(h, w, action, pivot, heading);
            piecewise(r, &[(vec![h, w], 0.05, 1.0)], h * w, move |t, p| {
                let wt = simplex(t, p[0])?;
                diff::motion_shift(t, wt, targets.clone())
            })
        }),
        ("write", |r, d| {
            let (h, w, c) = (d.h, d.w, d.channels);
            piecewise(
                r,
                &[
                    (vec![h * w, c], -1.0, 1.0),
                    (vec![h, w], 0.05, 1.0),
                    (vec![c], 0.05, 0.95),
                    (vec![c], -1.0, 1.0),
                ],
                h * w * c,
                |t, p| {
                    let wt = simplex(t, p[1])?;
                    diff::write(t, p[0], wt, p[2], p[3])
                },
            )
        }),
        ("read", |r, d| {
            let (h, w, c) = (d.h, d.w, d.channels);
            piecewise(r, &[(vec![h * w, c], -1.0, 1.0), (vec![h, w], 0.05, 1.0)], c, |t, p| {
                let wt = simplex(t, p[1])?;
                diff::read(t, p[0], wt)
            })
        }),
        ("squash_controls", |r, d| {
            let c = d.channels;
            let n = diff::control_width(c, true);
            piecewise(r, &[(vec![n], -2.0, 2.0)], 3 * c + 12, move |t, p| {
                let v = diff::squash_controls(t, p[0], c, true)?;
                t.concat(&[v.key, v.strength, v.gate, v.shift, v.sharpen, v.erase.unwrap(), v.add.unwrap()])
            })
        }),
        ("address", |r, d| {
            let (h, w, c) = (d.h, d.w, d.channels);
            let n = diff::control_width(c, false);
            piecewise(
                r,
                &[(vec![h * w, c], -1.0, 1.0), (vec![h, w], 0.05, 1.0), (vec![n], -1.5, 1.5)],
                h * w,
                move |t, p| {
                    let prior = simplex(t, p[1])?;
                    let ctl = diff::squash_controls(t, p[2], c, false)?;
                    Ok(diff::address(t, p[0], prior, &ctl, h, w, Boundary::Circular)?.weight)
                },
            )
        }),
    ]
}

fn run_check(name: &str, build: Builder, opts: &BatteryOptions, index: u64) -> Result<CheckResult> {
    let dims = Dims::of(opts.scale);
    let mut rng = ChaCha8Rng::seed_from_u64(crate::trainer::derive_seed(&[opts.seed, index]));
    let mut max_rel: f64 = 0.0;
    let mut failed = 0;
    for _ in 0..opts.instances {
        let (point, f) = build(&mut rng, &dims);
        let report = gradcheck_with(|t, x| f(t, x), &point, OP_TOLERANCE, GradcheckOptions { fault: opts.fault })?;
        max_rel = max_rel.max(report.max_rel_error);
        failed += (!report.passed) as usize;
    }
    Ok(CheckResult {
        name: name.to_string(),
        instances: opts.instances,
        failed_instances: failed,
        max_rel_error: max_rel,
        tolerance: OP_TOLERANCE,
        passed: failed == 0,
    })
}

/// A random sensor reading with cells free, wall, or unknown.
fn random_observation(rng: &mut ChaCha8Rng, last_action: Action) -> Observation {
    let mut sensor = [0.0; SENSOR_LEN];
    for s in sensor.iter_mut() {
        *s = [0.0, 0.5, 1.0][rng.gen_range(0..3)];
    }
    Observation { sensor, last_action }
}

/// The actor-critic loss of a fixed 3-step rollout as a function of the
/// flat parameter vector.
struct EndToEnd {
    params: ModelParams,
    state: ModelState,
    observations: Vec<Observation>,
    actions: Vec<Action>,
    returns: Vec<f64>,
    /// Policy-term advantages, held fixed as in training.
    advantages: Vec<f64>,
}

impl EndToEnd {
    fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let params = ModelParams::init(config, rng.gen())?;
        let side = config.memory.width.min(config.memory.height) as i32;
        let start = AgentPose::new(rng.gen_range(0..side), rng.gen_range(0..side), Heading::ALL[rng.gen_range(0..4)]);
        let state = ModelState::reset(&config, start)?;
        let actions: Vec<Action> = (0..3).map(|_| Action::ALL[rng.gen_range(0..4)]).collect();
        let mut observations = Vec::new();
        let mut last = Action::StandStill;
        for a in &actions {
            observations.push(random_observation(rng, last));
            last = *a;
        }
        let returns = uniform(rng, 3, -2.0, 2.0);
        let advantages = uniform(rng, 3, -2.0, 2.0);
        Ok(EndToEnd {
            params,
            state,
            observations,
            actions,
            returns,
            advantages,
        })
    }

    fn loss(&self, tape: &mut Tape, flat: Var) -> Result<Var> {
        let bound = self.params.bind_flat(tape, flat)?;
        let mut s = self.state.to_tape(tape);
        let mut terms = Vec::new();
        for (obs, a) in self.observations.iter().zip(&self.actions) {
            let out = self.params.step(tape, &bound, &s, obs)?;
            terms.push(LossTerms {
                log_probs: out.log_probs,
                action: *a,
                value: out.value,
            });
            s = out.state;
        }
        Ok(a3c_loss_with_advantages(tape, &terms, &self.returns, &self.advantages, 0.01, 0.5)?.total)
    }
}

fn end_to_end_check(name: &str, config: ModelConfig, opts: &BatteryOptions, instances: usize, index: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(crate::trainer::derive_seed(&[opts.seed, index]));
    let mut max_rel: f64 = 0.0;
    let mut failed = 0;
    for _ in 0..instances {
        let case = EndToEnd::new(config, &mut rng)?;
        let point = Tensor::vector(case.params.params().flatten());
        let passed = match opts.scale {
            Scale::Toy => {
                let r = gradcheck_with(
                    |t, x| case.loss(t, x),
                    &point,
                    END_TO_END_TOLERANCE,
                    GradcheckOptions { fault: opts.fault },
                )?;
                max_rel = max_rel.max(r.max_rel_error);
                r.passed
            }
            Scale::Full => {
                let err = sampled_check(&case, &point, 64, opts.fault, &mut rng)?;
                max_rel = max_rel.max(err);
                err < END_TO_END_TOLERANCE
            }
        };
        failed += (!passed) as usize;
    }
    Ok(CheckResult {
        name: name.to_string(),
        instances,
        failed_instances: failed,
        max_rel_error: max_rel,
        tolerance: END_TO_END_TOLERANCE,
        passed: failed == 0,
    })
}

/// Central differences on a random subset of coordinates, for models too
/// large to perturb every parameter. Half the coordinates come from the
/// largest analytic gradients so that live paths are always covered.
fn sampled_check(
    case: &EndToEnd,
    point: &Tensor,
    coords: usize,
    fault: Option<OpKind>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    tape.inject_fault(fault);
    let x = tape.input(point.clone());
    let y = case.loss(&mut tape, x)?;
    let grads = tape.backward(y)?;
    let analytic = grads.wrt(x).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; point.len()]);

    let mut order: Vec<usize> = (0..point.len()).collect();
    order.sort_by(|a, b| analytic[*b].abs().total_cmp(&analytic[*a].abs()));
    let mut picked: Vec<usize> = order[..coords / 2].to_vec();
    picked.extend((0..coords - coords / 2).map(|_| rng.gen_range(0..point.len())));

    let eval = |values: Vec<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let x = t.input(Tensor::new(point.shape().to_vec(), values)?);
        let y = case.loss(&mut t, x)?;
        Ok(t.scalar_value(y))
    };
    let mut worst: f64 = 0.0;
    for i in picked {
        let mut plus = point.data().to_vec();
        plus[i] += FD_STEP;
        let mut minus = point.data().to_vec();
        minus[i] -= FD_STEP;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * FD_STEP);
        let err = relative_error(analytic[i], numeric);
        worst = worst.max(if err.is_finite() { err } else { f64::INFINITY });
    }
    Ok(worst)
}

/// Runs every check. An `Err` means the battery could not be set up; check
/// failures are reported in the result.
pub fn run_battery(opts: &BatteryOptions) -> Result<BatteryReport> {
    if opts.instances == 0 {
        return Err(Error::Invalid("the battery needs at least one instance per check".into()));
    }
    let mut checks = Vec::new();
    for (index, (name, build)) in primitive_checks().into_iter().chain(memory_checks()).enumerate() {
        checks.push(run_check(name, build, opts, index as u64)?);
    }
    let (config, instances) = match opts.scale {
        Scale::Toy => (ModelConfig::toy(AgentVariant::NeuralSlam), 3),
        Scale::Full => (ModelConfig::new(AgentVariant::NeuralSlam), 2),
    };
    checks.push(end_to_end_check("end_to_end_neural_slam", config, opts, instances, 1000)?);
    for (i, v) in [AgentVariant::A3c, AgentVariant::A3cNav1, AgentVariant::A3cNav2, AgentVariant::A3cExt]
        .into_iter()
        .enumerate()
    {
        let config = ModelConfig { variant: v, ..config };
        checks.push(end_to_end_check(&format!("end_to_end_{}", v.name().replace('-', "_")), config, opts, 1, 1001 + i as u64)?);
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(BatteryReport {
        scale: opts.scale,
        checks,
        passed,
    })
}

/// Names of the battery's operation checks, in run order.
pub fn check_names() -> Vec<&'static str> {
    primitive_checks().into_iter().chain(memory_checks()).map(|(n, _)| n).collect()
}
