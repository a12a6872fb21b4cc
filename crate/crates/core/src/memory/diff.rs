//! Differentiable addressing and memory access, recorded on a [`Tape`].
//!
//! Access weights live on the tape as `[H, W]` tensors; memory as `[H*W, C]`.

use crate::autodiff::{Boundary, Tape, Var};
use crate::error::Result;

/// Denominator guard for cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;
/// Denominator guard for sharpening.
pub const SHARPEN_EPS: f64 = 1e-12;

/// Squashed control variables of one head, as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct HeadControlVars {
    pub key: Var,
    pub strength: Var,
    pub gate: Var,
    pub shift: Var,
    pub sharpen: Var,
    pub erase: Option<Var>,
    pub add: Option<Var>,
}

/// Number of raw outputs a head needs: `C + 12` to read, `3C + 12` to write.
pub fn control_width(channels: usize, write: bool) -> usize {
    if write {
        3 * channels + 12
    } else {
        channels + 12
    }
}

/// Splits a raw head output `[k | β | g | ρ(9) | ζ | e | a]` and squashes
/// each piece into its valid range: β = softplus, g = sigmoid, ρ = softmax,
/// ζ = 1 + softplus, e = sigmoid; k and a stay linear.
pub fn squash_controls(tape: &mut Tape, raw: Var, channels: usize, write: bool) -> Result<HeadControlVars> {
    let c = channels;
    let key = tape.slice(raw, 0, c)?;
    let beta_raw = tape.slice(raw, c, 1)?;
    let gate_raw = tape.slice(raw, c + 1, 1)?;
    let shift_raw = tape.slice(raw, c + 2, 9)?;
    let sharpen_raw = tape.slice(raw, c + 11, 1)?;
    let strength = tape.softplus(beta_raw);
    let gate = tape.sigmoid(gate_raw);
    let shift = tape.softmax(shift_raw);
    let sp = tape.softplus(sharpen_raw);
    let sharpen = tape.add_const(sp, 1.0);
    let (erase, add) = if write {
        let e_raw = tape.slice(raw, c + 12, c)?;
        let add = tape.slice(raw, 2 * c + 12, c)?;
        (Some(tape.sigmoid(e_raw)), Some(add))
    } else {
        (None, None)
    };
    Ok(HeadControlVars {
        key,
        strength,
        gate,
        shift,
        sharpen,
        erase,
        add,
    })
}

/// Softmax over slots of `β · cos(k, M_slot)`, shaped `[h, w]`.
pub fn content_weight(tape: &mut Tape, memory: Var, key: Var, strength: Var, h: usize, w: usize) -> Result<Var> {
    let sim = tape.cosine_sim(memory, key, COSINE_EPS)?;
    let logits = tape.mul_scalar(sim, strength)?;
    let weights = tape.softmax(logits);
    tape.reshape(weights, &[h, w])
}

/// `g · content + (1 - g) · prior`.
pub fn interpolate(tape: &mut Tape, content: Var, prior: Var, gate: Var) -> Result<Var> {
    let a = tape.mul_scalar(content, gate)?;
    let keep = tape.rsub_const(1.0, gate);
    let b = tape.mul_scalar(prior, keep)?;
    tape.add(a, b)
}

/// Convolution with the 3x3 shift kernel.
pub fn shift(tape: &mut Tape, weight: Var, kernel: Var, boundary: Boundary) -> Result<Var> {
    tape.conv3x3(weight, kernel, boundary)
}

/// `w^ζ / (Σ w^ζ + ε)`, evaluated on `w / max(w)` so that `ε` cannot
/// swamp the sum when every entry is small. The rescale cancels in the
/// ratio and is treated as a constant.
pub fn sharpen(tape: &mut Tape, weight: Var, zeta: Var) -> Result<Var> {
    let peak = tape.data(weight).iter().copied().fold(0.0, f64::max);
    let scaled = if peak > 0.0 { tape.scale(weight, 1.0 / peak) } else { weight };
    let powered = tape.pow(scaled, zeta)?;
    let total = tape.sum(powered);
    let total = tape.add_const(total, SHARPEN_EPS);
    tape.div_scalar(powered, total)
}

/// Motion model on the tape: every slot's mass moves to `targets[slot]`,
/// then the weight is renormalised. The targets come from the discrete
/// pose estimate and are held fixed; gradient flows to the moved mass.
pub fn motion_shift(tape: &mut Tape, weight: Var, targets: Vec<usize>) -> Result<Var> {
    let shape = tape.value(weight).shape().to_vec();
    let moved = tape.scatter(weight, targets, &shape)?;
    let total = tape.sum(moved);
    tape.div_scalar(moved, total)
}

/// Full addressing pipeline of one head: content weighting, interpolation
/// with the motion-predicted prior, shift, and sharpen.
#[derive(Clone, Copy, Debug)]
pub struct AddressingStages {
    pub content: Var,
    pub gated: Var,
    pub shifted: Var,
    pub weight: Var,
}

pub fn address(
    tape: &mut Tape,
    memory: Var,
    prior: Var,
    controls: &HeadControlVars,
    h: usize,
    w: usize,
    boundary: Boundary,
) -> Result<AddressingStages> {
    let content = content_weight(tape, memory, controls.key, controls.strength, h, w)?;
    let gated = interpolate(tape, content, prior, controls.gate)?;
    let shifted = shift(tape, gated, controls.shift, boundary)?;
    let weight = sharpen(tape, shifted, controls.sharpen)?;
    Ok(AddressingStages {
        content,
        gated,
        shifted,
        weight,
    })
}

/// `M ⊙ (1 - w eᵀ) + w aᵀ`.
pub fn write(tape: &mut Tape, memory: Var, weight: Var, erase: Var, add: Var) -> Result<Var> {
    let we = tape.outer(weight, erase);
    let keep = tape.rsub_const(1.0, we);
    let kept = tape.mul(memory, keep)?;
    let wa = tape.outer(weight, add);
    tape.add(kept, wa)
}

/// `Σ_slots w(slot) · M_slot`.
pub fn read(tape: &mut Tape, memory: Var, weight: Var) -> Result<Var> {
    tape.vecmat(weight, memory)
}
