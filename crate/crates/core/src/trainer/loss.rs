//! n-step returns and the actor-critic objective.

use crate::autodiff::{Tape, Var};
use crate::env::{Action, Observation};
use crate::error::{Error, Result};

/// One recorded transition.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStep {
    pub observation: Observation,
    pub action: Action,
    pub reward: f64,
    pub value: f64,
    pub log_prob: f64,
    pub entropy: f64,
}

/// Up to `K` consecutive transitions of one worker.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub steps: Vec<RolloutStep>,
    /// `V(s^K)`, or 0 when the rollout ended the episode.
    pub bootstrap: f64,
    pub terminal: bool,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// Sets the bootstrap from the value after the last step; a terminal
    /// rollout always bootstraps 0.
    pub fn finish(&mut self, terminal: bool, next_value: f64) {
        self.terminal = terminal;
        self.bootstrap = if terminal { 0.0 } else { next_value };
    }
}

/// `G^t = R^t + γ G^{t+1}`, starting from the bootstrap value.
pub fn nstep_returns(buffer: &RolloutBuffer, gamma: f64) -> Vec<f64> {
    returns_from(&buffer.rewards(), if buffer.terminal { 0.0 } else { buffer.bootstrap }, gamma)
}

pub fn returns_from(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = bootstrap;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        g = r + gamma * g;
        *o = g;
    }
    out
}

/// Tape nodes of one step that the loss needs.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    /// Log-probabilities over all actions, length 4.
    pub log_probs: Var,
    pub action: Action,
    /// Scalar state value.
    pub value: Var,
}

/// Loss and its parts, summed over the rollout.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    /// `-Σ log π(a) · A`, with the advantage held constant.
    pub policy: f64,
    /// `Σ H(π)`.
    pub entropy: f64,
    /// `Σ ½ (G - V)²`.
    pub value: f64,
}

/// Shannon entropy of a distribution given as log-probabilities.
pub fn entropy_of(log_probs: &[f64]) -> f64 {
    -log_probs
        .iter()
        .map(|lp| if lp.is_finite() { lp.exp() * lp } else { 0.0 })
        .sum::<f64>()
}

/// `Σ_t [ -log π(a^t) · (G^t - V^t) - λ H(π^t) + c (G^t - V^t)² ]`.
///
/// The advantage in the policy term is read off as a constant, so the
/// policy gradient never reaches the value estimate. With `c = 0.5` the
/// value term is `½ (G - V)²`.
pub fn a3c_loss(
    tape: &mut Tape,
    terms: &[LossTerms],
    returns: &[f64],
    entropy_coef: f64,
    value_coef: f64,
) -> Result<LossVars> {
    let advantages: Vec<f64> = terms
        .iter()
        .zip(returns)
        .map(|(t, g)| g - tape.scalar_value(t.value))
        .collect();
    a3c_loss_with_advantages(tape, terms, returns, &advantages, entropy_coef, value_coef)
}

/// [`a3c_loss`] with the policy-term advantages given explicitly. Holding
/// them fixed makes the loss an ordinary function of the parameters, which
/// is what finite differences need.
pub fn a3c_loss_with_advantages(
    tape: &mut Tape,
    terms: &[LossTerms],
    returns: &[f64],
    advantages: &[f64],
    entropy_coef: f64,
    value_coef: f64,
) -> Result<LossVars> {
    if terms.len() != returns.len() || terms.len() != advantages.len() || terms.is_empty() {
        return Err(Error::Invalid(format!(
            "{} loss terms for {} returns and {} advantages",
            terms.len(),
            returns.len(),
            advantages.len()
        )));
    }
    let (mut policy, mut entropy, mut value) = (0.0, 0.0, 0.0);
    let mut parts = Vec::with_capacity(terms.len());
    for ((t, g), advantage) in terms.iter().zip(returns).zip(advantages) {
        let lp = tape.slice(t.log_probs, t.action.id(), 1)?;
        let lp = tape.reshape(lp, &[])?;
        let pg = tape.scale(lp, -advantage);
        policy += tape.scalar_value(pg);

        let p = tape.exp(t.log_probs);
        let plp = tape.mul(p, t.log_probs)?;
        let neg_h = tape.sum(plp);
        entropy -= tape.scalar_value(neg_h);
        let ent = tape.scale(neg_h, entropy_coef);

        let err = tape.rsub_const(*g, t.value);
        let sq = tape.mul(err, err)?;
        value += 0.5 * tape.scalar_value(sq);
        let vl = tape.scale(sq, value_coef);

        let step = tape.add(pg, ent)?;
        parts.push(tape.add(step, vl)?);
    }
    let mut total = parts[0];
    for p in &parts[1..] {
        total = tape.add(total, *p)?;
    }
    Ok(LossVars {
        total,
        policy,
        entropy,
        value,
    })
}
