//! Define-by-run reverse-mode tape.
//!
//! Every primitive appends one node holding its forward value. `backward`
//! walks the node list in reverse, which is a valid reverse topological
//! order because inputs always precede their consumers.

use std::fmt;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boundary rule for the 3x3 convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Boundary {
    /// Indices wrap modulo the grid size.
    #[default]
    Circular,
    /// Out-of-range taps read zero.
    Zero,
}

/// Primitive kinds, used for diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Param,
    MatVec,
    VecMat,
    Add,
    Sub,
    Mul,
    Scale,
    AddConst,
    MulScalar,
    DivScalar,
    Sigmoid,
    Tanh,
    Softplus,
    Exp,
    Ln,
    Pow,
    Softmax,
    LogSoftmax,
    Concat,
    Slice,
    Sum,
    Reshape,
    CosineSim,
    Conv3x3,
    Outer,
    Scatter,
}

impl OpKind {
    pub const ALL: [OpKind; 27] = [
        OpKind::Leaf,
        OpKind::Param,
        OpKind::MatVec,
        OpKind::VecMat,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::AddConst,
        OpKind::MulScalar,
        OpKind::DivScalar,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Softplus,
        OpKind::Exp,
        OpKind::Ln,
        OpKind::Pow,
        OpKind::Softmax,
        OpKind::LogSoftmax,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::Sum,
        OpKind::Reshape,
        OpKind::CosineSim,
        OpKind::Conv3x3,
        OpKind::Outer,
        OpKind::Scatter,
    ];
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for OpKind {
    type Err = Error;

    /// Accepts the variant name in any case, with or without underscores.
    fn from_str(s: &str) -> Result<Self> {
        let key = s.replace('_', "").to_ascii_lowercase();
        OpKind::ALL
            .into_iter()
            .find(|k| k.to_string().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Invalid(format!("unknown operation `{s}`")))
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatVec(Var, Var),
    VecMat(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulScalar(Var, Var),
    DivScalar(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Pow(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sum(Var),
    Reshape(Var),
    CosineSim(Var, Var, f64),
    Conv3x3(Var, Var, Boundary),
    Outer(Var, Var),
    Scatter(Var, Vec<usize>),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Param => OpKind::Param,
            Op::MatVec(..) => OpKind::MatVec,
            Op::VecMat(..) => OpKind::VecMat,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddConst(..) => OpKind::AddConst,
            Op::MulScalar(..) => OpKind::MulScalar,
            Op::DivScalar(..) => OpKind::DivScalar,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Softplus(_) => OpKind::Softplus,
            Op::Exp(_) => OpKind::Exp,
            Op::Ln(_) => OpKind::Ln,
            Op::Pow(..) => OpKind::Pow,
            Op::Softmax(_) => OpKind::Softmax,
            Op::LogSoftmax(_) => OpKind::LogSoftmax,
            Op::Concat(_) => OpKind::Concat,
            Op::Slice(..) => OpKind::Slice,
            Op::Sum(_) => OpKind::Sum,
            Op::Reshape(_) => OpKind::Reshape,
            Op::CosineSim(..) => OpKind::CosineSim,
            Op::Conv3x3(..) => OpKind::Conv3x3,
            Op::Outer(..) => OpKind::Outer,
            Op::Scatter(..) => OpKind::Scatter,
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to a node, if any flowed into it.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.nodes.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient for parameter `index`, summed over every leaf that
    /// registered it. Returns `None` when no gradient reached it.
    pub fn param(&self, index: usize) -> Option<Vec<f64>> {
        let mut out: Option<Vec<f64>> = None;
        for &(p, node) in &self.params {
            if p != index {
                continue;
            }
            if let Some(g) = self.nodes[node].as_ref() {
                match out.as_mut() {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    None => out = Some(g.clone()),
                }
            }
        }
        out
    }
}

/// Reverse-mode tape.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(usize, usize)>,
    fault: Option<OpKind>,
}

fn expect_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    let both_scalar = a.is_scalar() && b.is_scalar();
    if a.shape() != b.shape() && !both_scalar {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn expect_scalar(op: &'static str, t: &Tensor) -> Result<()> {
    if !t.is_scalar() {
        return Err(Error::shape(
            op,
            format!("expected a scalar operand, got {:?}", t.shape()),
        ));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

fn pow_value(base: f64, exponent: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        base.powf(exponent)
    }
}

/// Taps of the 3x3 kernel as `(dy, dx)` offsets, row-major over the kernel.
const TAPS: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn source_index(y: usize, x: usize, dy: isize, dx: isize, h: usize, w: usize, b: Boundary) -> Option<usize> {
    let sy = y as isize - dy;
    let sx = x as isize - dx;
    match b {
        Boundary::Circular => {
            let sy = sy.rem_euclid(h as isize) as usize;
            let sx = sx.rem_euclid(w as isize) as usize;
            Some(sy * w + sx)
        }
        Boundary::Zero => {
            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                None
            } else {
                Some(sy as usize * w + sx as usize)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Flip the sign of every gradient that flows backward through primitives
    /// of `kind`. Used only as a negative control for gradient checks.
    pub fn inject_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked (query it with [`Gradients::wrt`]).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf bound to parameter `index` of some parameter set.
    pub fn param(&mut self, index: usize, value: Tensor) -> Var {
        let v = self.push(value, Op::Param, true);
        self.params.push((index, v.0));
        v
    }

    /// Copy of `v`'s value as a fresh constant; gradient stops here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let (mt, xt) = (self.value(m), self.value(x));
        if mt.shape().len() != 2 || xt.len() != mt.shape()[1] {
            return Err(Error::shape(
                "matvec",
                format!("matrix {:?} times vector {:?}", mt.shape(), xt.shape()),
            ));
        }
        let (rows, cols) = (mt.shape()[0], mt.shape()[1]);
        let (md, xd) = (mt.data(), xt.data());
        let out: Vec<f64> = (0..rows)
            .map(|r| {
                md[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(xd)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let rg = self.rg(m) || self.rg(x);
        Ok(self.push(Tensor::from_parts(vec![rows], out), Op::MatVec(m, x), rg))
    }

    /// `x^T m` for `x` of length rows and `m` of shape `[rows, cols]`.
    pub fn vecmat(&mut self, x: Var, m: Var) -> Result<Var> {
        let (xt, mt) = (self.value(x), self.value(m));
        if mt.shape().len() != 2 || xt.len() != mt.shape()[0] {
            return Err(Error::shape(
                "vecmat",
                format!("vector {:?} times matrix {:?}", xt.shape(), mt.shape()),
            ));
        }
        let (rows, cols) = (mt.shape()[0], mt.shape()[1]);
        let (md, xd) = (mt.data(), xt.data());
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            let w = xd[r];
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(&md[r * cols..(r + 1) * cols]) {
                *o += w * v;
            }
        }
        let rg = self.rg(m) || self.rg(x);
        Ok(self.push(Tensor::from_parts(vec![cols], out), Op::VecMat(x, m), rg))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (at, bt) = (self.value(a), self.value(b));
        expect_same(name, at, bt)?;
        let out = at.data().iter().zip(bt.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok((Tensor::from_parts(at.shape().to_vec(), out), self.rg(a) || self.rg(b)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64) -> (Tensor, bool) {
        let at = self.value(a);
        let out = at.data().iter().map(|x| f(*x)).collect();
        (Tensor::from_parts(at.shape().to_vec(), out), self.rg(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (t, rg) = self.unary(a, |x| x * c);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let (t, rg) = self.unary(a, |x| x + c);
        self.push(t, Op::AddConst(a), rg)
    }

    /// `c - a`, elementwise.
    pub fn rsub_const(&mut self, c: f64, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_const(neg, c)
    }

    /// Tensor times a scalar node.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        expect_scalar("mul_scalar", self.value(s))?;
        let c = self.scalar_value(s);
        let (t, rg) = self.unary(a, |x| x * c);
        let rg = rg || self.rg(s);
        Ok(self.push(t, Op::MulScalar(a, s), rg))
    }

    /// Tensor divided by a scalar node.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        expect_scalar("div_scalar", self.value(s))?;
        let c = self.scalar_value(s);
        let (t, rg) = self.unary(a, |x| x / c);
        let rg = rg || self.rg(s);
        Ok(self.push(t, Op::DivScalar(a, s), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (t, rg) = self.unary(a, sigmoid);
        self.push(t, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (t, rg) = self.unary(a, f64::tanh);
        self.push(t, Op::Tanh(a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let (t, rg) = self.unary(a, softplus);
        self.push(t, Op::Softplus(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let (t, rg) = self.unary(a, f64::exp);
        self.push(t, Op::Exp(a), rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let (t, rg) = self.unary(a, f64::ln);
        self.push(t, Op::Ln(a), rg)
    }

    /// Elementwise `a^p` for nonnegative `a` and a scalar node `p`.
    /// `0^p` is taken as 0 (valid for the `p >= 1` exponents used here).
    pub fn pow(&mut self, a: Var, p: Var) -> Result<Var> {
        expect_scalar("pow", self.value(p))?;
        let e = self.scalar_value(p);
        let (t, rg) = self.unary(a, |x| pow_value(x, e));
        let rg = rg || self.rg(p);
        Ok(self.push(t, Op::Pow(a, p), rg))
    }

    /// Softmax over all elements, shape preserved.
    pub fn softmax(&mut self, a: Var) -> Var {
        let at = self.value(a);
        let mut out = at.data().to_vec();
        softmax_in_place(&mut out);
        let t = Tensor::from_parts(at.shape().to_vec(), out);
        let rg = self.rg(a);
        self.push(t, Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let at = self.value(a);
        let max = at.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + at.data().iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let out = at.data().iter().map(|x| x - lse).collect();
        let t = Tensor::from_parts(at.shape().to_vec(), out);
        let rg = self.rg(a);
        self.push(t, Op::LogSoftmax(a), rg)
    }

    /// Concatenate the flattened inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let n: usize = parts.iter().map(|p| self.value(*p).len()).sum();
        let mut out = Vec::with_capacity(n);
        for p in parts {
            out.extend_from_slice(self.data(*p));
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(Tensor::from_parts(vec![n], out), Op::Concat(parts.to_vec()), rg))
    }

    /// Flat slice `[start, start + len)` as a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let at = self.value(a);
        if start + len > at.len() {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} of {:?}", start + len, at.shape()),
            ));
        }
        let out = at.data()[start..start + len].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![len], out), Op::Slice(a, start), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshaped(shape.to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Cosine similarity between every row of `m` (`[n, c]`) and `k` (`[c]`).
    /// `eps` is added to the norm product in the denominator.
    pub fn cosine_sim(&mut self, m: Var, k: Var, eps: f64) -> Result<Var> {
        let (mt, kt) = (self.value(m), self.value(k));
        if mt.shape().len() != 2 || kt.len() != mt.shape()[1] {
            return Err(Error::shape(
                "cosine_sim",
                format!("rows {:?} against key {:?}", mt.shape(), kt.shape()),
            ));
        }
        let (n, c) = (mt.shape()[0], mt.shape()[1]);
        let kd = kt.data();
        let knorm = kd.iter().map(|v| v * v).sum::<f64>().sqrt();
        let md = mt.data();
        let out = (0..n)
            .map(|i| {
                let row = &md[i * c..(i + 1) * c];
                let dot: f64 = row.iter().zip(kd).map(|(a, b)| a * b).sum();
                let rn = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                dot / (rn * knorm + eps)
            })
            .collect();
        let rg = self.rg(m) || self.rg(k);
        Ok(self.push(Tensor::from_parts(vec![n], out), Op::CosineSim(m, k, eps), rg))
    }

    /// 3x3 convolution of a 2-D field `w` (`[h, w]`) with a 9-element kernel.
    ///
    /// `out(y, x) = sum over taps (dy, dx) of w(y - dy, x - dx) * kernel(dy, dx)`,
    /// so the tap at `(dy, dx)` moves mass by `+dy` rows and `+dx` columns.
    pub fn conv3x3(&mut self, w: Var, kernel: Var, boundary: Boundary) -> Result<Var> {
        let (wt, kt) = (self.value(w), self.value(kernel));
        if wt.shape().len() != 2 || kt.len() != 9 {
            return Err(Error::shape(
                "conv3x3",
                format!("field {:?} with kernel {:?}", wt.shape(), kt.shape()),
            ));
        }
        let (h, wd) = (wt.shape()[0], wt.shape()[1]);
        let (src, kd) = (wt.data(), kt.data());
        let mut out = vec![0.0; h * wd];
        for y in 0..h {
            for x in 0..wd {
                let mut acc = 0.0;
                for (t, &(dy, dx)) in TAPS.iter().enumerate() {
                    if let Some(i) = source_index(y, x, dy, dx, h, wd, boundary) {
                        acc += src[i] * kd[t];
                    }
                }
                out[y * wd + x] = acc;
            }
        }
        let rg = self.rg(w) || self.rg(kernel);
        Ok(self.push(
            Tensor::from_parts(vec![h, wd], out),
            Op::Conv3x3(w, kernel, boundary),
            rg,
        ))
    }

    /// Outer product of two vectors, shape `[len(a), len(b)]`.
    pub fn outer(&mut self, a: Var, b: Var) -> Var {
        let (ad, bd) = (self.data(a), self.data(b));
        let (n, c) = (ad.len(), bd.len());
        let mut out = Vec::with_capacity(n * c);
        for x in ad {
            out.extend(bd.iter().map(|y| x * y));
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(vec![n, c], out), Op::Outer(a, b), rg)
    }

    /// `out[targets[i]] += a[i]`, with `out` shaped `shape`. Several inputs
    /// may share a target.
    pub fn scatter(&mut self, a: Var, targets: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let ad = self.data(a);
        let n: usize = shape.iter().product();
        if targets.len() != ad.len() || targets.iter().any(|t| *t >= n) {
            return Err(Error::shape(
                "scatter",
                format!("{} targets into {shape:?} for an input of {} values", targets.len(), ad.len()),
            ));
        }
        let mut out = vec![0.0; n];
        for (v, t) in ad.iter().zip(&targets) {
            out[*t] += v;
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(shape.to_vec(), out), Op::Scatter(a, targets), rg))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(mut g) = grads[i].take() else {
                continue;
            };
            if self.fault == Some(node.op.kind()) {
                g.iter_mut().for_each(|v| *v = -*v);
            }
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients {
            nodes: grads,
            params: self.params.clone(),
        })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatVec(m, x) => {
                let mt = self.value(*m);
                let (rows, cols) = (mt.shape()[0], mt.shape()[1]);
                let (md, xd) = (mt.data(), self.data(*x));
                if self.rg(*m) {
                    let dm = slot(grads, *m, rows * cols);
                    for r in 0..rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for (d, xv) in dm[r * cols..(r + 1) * cols].iter_mut().zip(xd) {
                            *d += gr * xv;
                        }
                    }
                }
                if self.rg(*x) {
                    let dx = slot(grads, *x, cols);
                    for r in 0..rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for (d, mv) in dx.iter_mut().zip(&md[r * cols..(r + 1) * cols]) {
                            *d += gr * mv;
                        }
                    }
                }
            }
            Op::VecMat(x, m) => {
                let mt = self.value(*m);
                let (rows, cols) = (mt.shape()[0], mt.shape()[1]);
                let (md, xd) = (mt.data(), self.data(*x));
                if self.rg(*x) {
                    let dx = slot(grads, *x, rows);
                    for r in 0..rows {
                        dx[r] += md[r * cols..(r + 1) * cols]
                            .iter()
                            .zip(g)
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
                if self.rg(*m) {
                    let dm = slot(grads, *m, rows * cols);
                    for r in 0..rows {
                        let xr = xd[r];
                        if xr == 0.0 {
                            continue;
                        }
                        for (d, gv) in dm[r * cols..(r + 1) * cols].iter_mut().zip(g) {
                            *d += xr * gv;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.iter().copied());
                self.acc(grads, *b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.iter().copied());
                self.acc(grads, *b, g.iter().map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                self.acc(grads, *a, g.iter().zip(bd).map(|(g, b)| g * b));
                self.acc(grads, *b, g.iter().zip(ad).map(|(g, a)| g * a));
            }
            Op::Scale(a, c) => self.acc(grads, *a, g.iter().map(|v| v * c)),
            Op::AddConst(a) | Op::Reshape(a) => self.acc(grads, *a, g.iter().copied()),
            Op::MulScalar(a, s) => {
                let c = self.scalar_value(*s);
                self.acc(grads, *a, g.iter().map(|v| v * c));
                let ds: f64 = g.iter().zip(self.data(*a)).map(|(g, x)| g * x).sum();
                self.acc(grads, *s, std::iter::once(ds));
            }
            Op::DivScalar(a, s) => {
                let c = self.scalar_value(*s);
                self.acc(grads, *a, g.iter().map(|v| v / c));
                let ds: f64 = -g.iter().zip(out).map(|(g, y)| g * y).sum::<f64>() / c;
                self.acc(grads, *s, std::iter::once(ds));
            }
            Op::Sigmoid(a) => self.acc(grads, *a, g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y))),
            Op::Tanh(a) => self.acc(grads, *a, g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y))),
            Op::Softplus(a) => {
                let ad = self.data(*a);
                self.acc(grads, *a, g.iter().zip(ad).map(|(g, x)| g * sigmoid(*x)));
            }
            Op::Exp(a) => self.acc(grads, *a, g.iter().zip(out).map(|(g, y)| g * y)),
            Op::Ln(a) => {
                let ad = self.data(*a);
                self.acc(grads, *a, g.iter().zip(ad).map(|(g, x)| g / x));
            }
            Op::Pow(a, p) => {
                let e = self.scalar_value(*p);
                let ad = self.data(*a);
                self.acc(
                    grads,
                    *a,
                    g.iter().zip(ad).map(|(g, x)| {
                        if *x == 0.0 {
                            0.0
                        } else {
                            g * e * x.powf(e - 1.0)
                        }
                    }),
                );
                let dp: f64 = g
                    .iter()
                    .zip(ad)
                    .zip(out)
                    .map(|((g, x), y)| if *x > 0.0 { g * y * x.ln() } else { 0.0 })
                    .sum();
                self.acc(grads, *p, std::iter::once(dp));
            }
            Op::Softmax(a) => {
                let dot: f64 = g.iter().zip(out).map(|(g, y)| g * y).sum();
                self.acc(grads, *a, g.iter().zip(out).map(|(g, y)| y * (g - dot)));
            }
            Op::LogSoftmax(a) => {
                let total: f64 = g.iter().sum();
                self.acc(grads, *a, g.iter().zip(out).map(|(g, y)| g - y.exp() * total));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    self.acc(grads, *p, g[offset..offset + n].iter().copied());
                    offset += n;
                }
            }
            Op::Slice(a, start) => {
                if self.rg(*a) {
                    let n = self.value(*a).len();
                    let da = slot(grads, *a, n);
                    for (d, v) in da[*start..*start + g.len()].iter_mut().zip(g) {
                        *d += v;
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.acc(grads, *a, std::iter::repeat_n(g[0], n));
            }
            Op::CosineSim(m, k, eps) => self.backprop_cosine(*m, *k, *eps, g, grads),
            Op::Conv3x3(w, kernel, boundary) => {
                let wt = self.value(*w);
                let (h, wd) = (wt.shape()[0], wt.shape()[1]);
                let (src, kd) = (wt.data(), self.data(*kernel));
                let want_w = self.rg(*w);
                let want_k = self.rg(*kernel);
                let mut dw = if want_w { vec![0.0; h * wd] } else { Vec::new() };
                let mut dk = [0.0; 9];
                for y in 0..h {
                    for x in 0..wd {
                        let gv = g[y * wd + x];
                        for (t, &(dy, dx)) in TAPS.iter().enumerate() {
                            if let Some(i) = source_index(y, x, dy, dx, h, wd, *boundary) {
                                if want_w {
                                    dw[i] += gv * kd[t];
                                }
                                dk[t] += gv * src[i];
                            }
                        }
                    }
                }
                if want_w {
                    self.acc(grads, *w, dw.into_iter());
                }
                if want_k {
                    self.acc(grads, *kernel, dk.into_iter());
                }
            }
            Op::Outer(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                let c = bd.len();
                if self.rg(*a) {
                    let da = slot(grads, *a, ad.len());
                    for (i, d) in da.iter_mut().enumerate() {
                        *d += g[i * c..(i + 1) * c].iter().zip(bd).map(|(g, b)| g * b).sum::<f64>();
                    }
                }
                if self.rg(*b) {
                    let db = slot(grads, *b, c);
                    for (i, av) in ad.iter().enumerate() {
                        for (d, gv) in db.iter_mut().zip(&g[i * c..(i + 1) * c]) {
                            *d += av * gv;
                        }
                    }
                }
            }
            Op::Scatter(a, targets) => self.acc(grads, *a, targets.iter().map(|t| g[*t])),
        }
    }

    fn backprop_cosine(&self, m: Var, k: Var, eps: f64, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mt = self.value(m);
        let (n, c) = (mt.shape()[0], mt.shape()[1]);
        let (md, kd) = (mt.data(), self.data(k));
        let knorm = kd.iter().map(|v| v * v).sum::<f64>().sqrt();
        let want_m = self.rg(m);
        let want_k = self.rg(k);
        let mut dm = if want_m { vec![0.0; n * c] } else { Vec::new() };
        let mut dk = vec![0.0; c];
        for i in 0..n {
            let gi = g[i];
            if gi == 0.0 {
                continue;
            }
            let row = &md[i * c..(i + 1) * c];
            let dot: f64 = row.iter().zip(kd).map(|(a, b)| a * b).sum();
            let rn = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let denom = rn * knorm + eps;
            let s = dot / denom;
            // d(dot)/d(row) = k, d(denom)/d(row) = knorm * row / rn
            let row_coef = if rn > 0.0 { s * knorm / (rn * denom) } else { 0.0 };
            let key_coef = if knorm > 0.0 { s * rn / (knorm * denom) } else { 0.0 };
            if want_m {
                for j in 0..c {
                    dm[i * c + j] += gi * (kd[j] / denom - row_coef * row[j]);
                }
            }
            if want_k {
                for j in 0..c {
                    dk[j] += gi * (row[j] / denom - key_coef * kd[j]);
                }
            }
        }
        if want_m {
            self.acc(grads, m, dm.into_iter());
        }
        if want_k {
            self.acc(grads, k, dk.into_iter());
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: impl Iterator<Item = f64>) {
        if !self.rg(v) {
            return;
        }
        let n = self.value(v).len();
        let d = slot(grads, v, n);
        for (a, b) in d.iter_mut().zip(contrib) {
            *a += b;
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}
