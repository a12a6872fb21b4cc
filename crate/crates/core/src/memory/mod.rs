//! External memory with SLAM-structured addressing.
//!
//! The memory is a global `H x W x C` grid of log-odds features. Each head
//! keeps an access weight over the `H x W` slots that doubles as its belief
//! over the agent's sensing footprint. World cell `(x, y)` maps to memory
//! slot `(x, y)`; memory is at least as large as any world it is used on.

pub mod diff;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Boundary, Tape, Tensor};
use crate::env::{footprint, Action, AgentPose, Heading};
use crate::error::{Error, Result};

pub use diff::{control_width, AddressingStages, HeadControlVars, COSINE_EPS, SHARPEN_EPS};

/// Default isotropic spread of the initial belief, in cells.
pub const DEFAULT_PRIOR_SIGMA: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl MemoryShape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        MemoryShape {
            height,
            width,
            channels,
        }
    }

    pub fn slots(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }
}

impl Default for MemoryShape {
    fn default() -> Self {
        MemoryShape::new(16, 16, 32)
    }
}

/// `H x W x C` memory, stored slot-major as a `[H*W, C]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ExternalMemory {
    shape: MemoryShape,
    values: Tensor,
}

impl ExternalMemory {
    pub fn zeros(shape: MemoryShape) -> Self {
        ExternalMemory {
            shape,
            values: Tensor::zeros(&[shape.slots(), shape.channels]),
        }
    }

    pub fn from_tensor(shape: MemoryShape, values: Tensor) -> Result<Self> {
        if values.shape() != [shape.slots(), shape.channels] {
            return Err(Error::shape(
                "memory",
                format!("{:?} for a {shape:?} memory", values.shape()),
            ));
        }
        Ok(ExternalMemory { shape, values })
    }

    pub fn shape(&self) -> MemoryShape {
        self.shape
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn slot(&self, x: usize, y: usize) -> &[f64] {
        let c = self.shape.channels;
        let i = y * self.shape.width + x;
        &self.values.data()[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.values.is_finite()
    }
}

/// Nonnegative attention over memory slots, row-major `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AccessWeight {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl AccessWeight {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(
                "access_weight",
                format!("{} values for {height}x{width}", values.len()),
            ));
        }
        Ok(AccessWeight {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        AccessWeight {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn one_hot(height: usize, width: usize, x: usize, y: usize) -> Self {
        let mut w = AccessWeight::zeros(height, width);
        w.values[y * width + x] = 1.0;
        w
    }

    pub fn uniform(height: usize, width: usize) -> Self {
        let n = height * width;
        AccessWeight {
            height,
            width,
            values: vec![1.0 / n as f64; n],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [h, w] => AccessWeight::new(*h, *w, t.data().to_vec()),
            other => Err(Error::shape("access_weight", format!("tensor of shape {other:?}"))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width], self.values.clone()).expect("consistent shape")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    fn normalized(mut self) -> Self {
        let total = self.sum();
        if total > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= total);
        }
        self
    }
}

/// Control values of one head after squashing.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadControls {
    pub key: Vec<f64>,
    pub strength: f64,
    pub gate: f64,
    pub shift: [f64; 9],
    pub sharpen: f64,
    pub erase: Option<Vec<f64>>,
    pub add: Option<Vec<f64>>,
}

impl HeadControls {
    pub fn from_vars(tape: &Tape, v: &HeadControlVars) -> Self {
        let mut shift = [0.0; 9];
        shift.copy_from_slice(tape.data(v.shift));
        HeadControls {
            key: tape.data(v.key).to_vec(),
            strength: tape.scalar_value(v.strength),
            gate: tape.scalar_value(v.gate),
            shift,
            sharpen: tape.scalar_value(v.sharpen),
            erase: v.erase.map(|e| tape.data(e).to_vec()),
            add: v.add.map(|a| tape.data(a).to_vec()),
        }
    }
}

/// Belief initialised from the known start pose: an isotropic Gaussian
/// around the agent's cell evaluated on the sensing footprint, zero
/// elsewhere, normalised to sum 1.
pub fn init_prior(shape: MemoryShape, start: AgentPose, sigma: f64) -> Result<AccessWeight> {
    let mut w = AccessWeight::zeros(shape.height, shape.width);
    let mut any = false;
    for (x, y) in footprint(start) {
        if !shape.contains(x, y) {
            continue;
        }
        let d2 = ((x - start.x).pow(2) + (y - start.y).pow(2)) as f64;
        let g = if sigma.is_infinite() {
            1.0
        } else {
            (-d2 / (2.0 * sigma * sigma)).exp()
        };
        w.values[y as usize * shape.width + x as usize] = g;
        any = true;
    }
    if !any {
        return Err(Error::FootprintOutside {
            height: shape.height,
            width: shape.width,
        });
    }
    Ok(w.normalized())
}

/// Pose recovered from a belief.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseEstimate {
    /// Center of mass, in cell coordinates.
    pub x: f64,
    pub y: f64,
    /// Nearest cell to the center of mass.
    pub cell: (i32, i32),
    pub heading: Heading,
}

/// Mass of `w` inside the sensing footprint of `pose`.
pub fn footprint_mass(w: &AccessWeight, pose: AgentPose) -> f64 {
    footprint(pose)
        .iter()
        .filter(|&&(x, y)| x >= 0 && y >= 0 && (x as usize) < w.width && (y as usize) < w.height)
        .map(|&(x, y)| w.at(x as usize, y as usize))
        .sum()
}

/// Position from the center of mass; heading is the one whose footprint,
/// anchored at the position cell, holds the most mass (ties go N, E, S, W).
pub fn localize(w: &AccessWeight) -> Result<PoseEstimate> {
    let total = w.sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::ZeroWeight);
    }
    let (mut mx, mut my) = (0.0, 0.0);
    for y in 0..w.height {
        for x in 0..w.width {
            let v = w.at(x, y);
            mx += v * x as f64;
            my += v * y as f64;
        }
    }
    let (x, y) = (mx / total, my / total);
    let cell = (
        (x.round() as i32).clamp(0, w.width as i32 - 1),
        (y.round() as i32).clamp(0, w.height as i32 - 1),
    );
    let mut best = Heading::North;
    let mut best_mass = f64::NEG_INFINITY;
    for h in Heading::ALL {
        let m = footprint_mass(w, AgentPose::new(cell.0, cell.1, h));
        if m > best_mass {
            best = h;
            best_mass = m;
        }
    }
    Ok(PoseEstimate {
        x,
        y,
        cell,
        heading: best,
    })
}

/// Applies the motion model for `action` to a belief. Translations and
/// rotations move whole cells about the localized pose; mass leaving the
/// grid is clamped onto the border and the result renormalised.
pub fn motion_predict(w: &AccessWeight, action: Action) -> AccessWeight {
    match motion_targets(w, action) {
        Some(targets) => apply_targets(w, &targets),
        None => w.clone(),
    }
}

/// Motion model with an explicit pivot cell and heading instead of ones
/// localized from `w`.
pub fn motion_predict_from(w: &AccessWeight, action: Action, pivot: (i32, i32), heading: Heading) -> AccessWeight {
    let targets = motion_targets_from(w.height, w.width, action, pivot, heading);
    apply_targets(w, &targets)
}

/// Destination slot of every slot under the motion model, or `None` when
/// the belief does not move (Stand-still, or no mass to localize).
pub fn motion_targets(w: &AccessWeight, action: Action) -> Option<Vec<usize>> {
    if action == Action::StandStill {
        return None;
    }
    let est = localize(w).ok()?;
    Some(motion_targets_from(w.height, w.width, action, est.cell, est.heading))
}

pub fn motion_targets_from(
    height: usize,
    width: usize,
    action: Action,
    pivot: (i32, i32),
    heading: Heading,
) -> Vec<usize> {
    let (h, wd) = (height as i32, width as i32);
    let (cx, cy) = pivot;
    let mut out = Vec::with_capacity(height * width);
    for y in 0..h {
        for x in 0..wd {
            let (tx, ty) = match action {
                Action::StandStill => (x, y),
                Action::GoStraight => {
                    let (dx, dy) = heading.forward();
                    (x + dx, y + dy)
                }
                // with y pointing down, a left turn maps the offset (dx, dy) to (dy, -dx)
                Action::TurnLeft => (cx + (y - cy), cy - (x - cx)),
                Action::TurnRight => (cx - (y - cy), cy + (x - cx)),
            };
            out.push((ty.clamp(0, h - 1) * wd + tx.clamp(0, wd - 1)) as usize);
        }
    }
    out
}

fn apply_targets(w: &AccessWeight, targets: &[usize]) -> AccessWeight {
    let mut out = AccessWeight::zeros(w.height, w.width);
    for (v, t) in w.values.iter().zip(targets) {
        out.values[*t] += v;
    }
    out.normalized()
}

/// Occupancy probability per slot: sigmoid of the slot's channel-mean
/// log-odds. Returned row-major `[H, W]`.
pub fn readout_map(memory: &ExternalMemory) -> Vec<f64> {
    let c = memory.shape.channels;
    memory
        .values
        .data()
        .chunks(c)
        .map(|slot| {
            let mean = slot.iter().sum::<f64>() / c as f64;
            1.0 - 1.0 / (1.0 + mean.exp())
        })
        .collect()
}

fn weight_var(tape: &mut Tape, w: &AccessWeight) -> crate::autodiff::Var {
    tape.constant(w.to_tensor())
}

fn scalar_var(tape: &mut Tape, v: f64) -> crate::autodiff::Var {
    tape.constant(Tensor::scalar(v))
}

/// Content-based weight for `key` at strength `beta`.
pub fn content_weight(memory: &ExternalMemory, key: &[f64], beta: f64) -> Result<AccessWeight> {
    let mut t = Tape::new();
    let m = t.constant(memory.values.clone());
    let k = t.constant(Tensor::vector(key.to_vec()));
    let b = scalar_var(&mut t, beta);
    let out = diff::content_weight(&mut t, m, k, b, memory.shape.height, memory.shape.width)?;
    AccessWeight::from_tensor(t.value(out))
}

pub fn interpolate(content: &AccessWeight, prior: &AccessWeight, gate: f64) -> Result<AccessWeight> {
    let mut t = Tape::new();
    let c = weight_var(&mut t, content);
    let p = weight_var(&mut t, prior);
    let g = scalar_var(&mut t, gate);
    let out = diff::interpolate(&mut t, c, p, g)?;
    AccessWeight::from_tensor(t.value(out))
}

/// Shift by a 3x3 kernel; `kernel[(dy + 1) * 3 + (dx + 1)]` moves mass by
/// `dx` columns and `dy` rows.
pub fn shift(weight: &AccessWeight, kernel: &[f64; 9], boundary: Boundary) -> Result<AccessWeight> {
    let mut t = Tape::new();
    let w = weight_var(&mut t, weight);
    let k = t.constant(Tensor::vector(kernel.to_vec()));
    let out = diff::shift(&mut t, w, k, boundary)?;
    AccessWeight::from_tensor(t.value(out))
}

pub fn sharpen(weight: &AccessWeight, zeta: f64) -> Result<AccessWeight> {
    let mut t = Tape::new();
    let w = weight_var(&mut t, weight);
    let z = scalar_var(&mut t, zeta);
    let out = diff::sharpen(&mut t, w, z)?;
    AccessWeight::from_tensor(t.value(out))
}

pub fn write(memory: &ExternalMemory, weight: &AccessWeight, erase: &[f64], add: &[f64]) -> Result<ExternalMemory> {
    let mut t = Tape::new();
    let m = t.constant(memory.values.clone());
    let w = weight_var(&mut t, weight);
    let e = t.constant(Tensor::vector(erase.to_vec()));
    let a = t.constant(Tensor::vector(add.to_vec()));
    let out = diff::write(&mut t, m, w, e, a)?;
    ExternalMemory::from_tensor(memory.shape, t.value(out).clone())
}

pub fn read(memory: &ExternalMemory, weight: &AccessWeight) -> Result<Vec<f64>> {
    let mut t = Tape::new();
    let m = t.constant(memory.values.clone());
    let w = weight_var(&mut t, weight);
    let out = diff::read(&mut t, m, w)?;
    Ok(t.data(out).to_vec())
}
