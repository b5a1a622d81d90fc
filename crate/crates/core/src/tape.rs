//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every primitive in insertion order. Handles returned by
//! the recording methods are plain indices ([`Var`]), so a node can only refer
//! to nodes created before it and the tape is always topologically sorted.
//! [`Tape::backward`] walks the nodes once in reverse and adds the resulting
//! gradients into each tracked node's `grad` slot.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a binary elementwise op lines its operands up.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Broadcast {
    Same,
    /// Right operand is a vector matching the trailing axis of the left.
    Row,
    LhsScalar,
    RhsScalar,
}

/// Parameters of a recorded fake-quantization node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FakeQuantParams {
    pub x_min: f64,
    pub x_max: f64,
    pub levels: u32,
    /// Zero the straight-through gradient outside `[x_min, x_max]`.
    pub clip_gradient: bool,
}

impl FakeQuantParams {
    pub fn scale(&self) -> f64 {
        (self.x_max - self.x_min) / f64::from(self.levels)
    }

    pub fn is_degenerate(&self) -> bool {
        // NaN ranges fall through to the degenerate path as well.
        !(self.x_max > self.x_min)
    }

    /// Integer code for `x`, in `0..=levels`.
    pub fn code(&self, x: f64) -> u32 {
        if self.is_degenerate() {
            return 0;
        }
        let s = self.scale();
        ((x - self.x_min) / s).clamp(0.0, f64::from(self.levels)).round() as u32
    }

    pub fn apply(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            return self.x_min;
        }
        self.scale() * f64::from(self.code(x)) + self.x_min
    }

    pub fn ste(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else if !self.clip_gradient || (self.x_min..=self.x_max).contains(&x) {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Div(Var, Var, Broadcast),
    Scale(Var, f64),
    Relu(Var),
    Log(Var),
    Softmax { input: Var, temperature: f64 },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    CrossEntropy { logits: Var, targets: Vec<usize> },
    KlDiv { teacher: Var, student: Var },
    Mse(Var, Var),
    FakeQuant(Var, FakeQuantParams),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Tolerance on probability-row sums accepted by [`Tape::kl_div`].
pub const PROB_ROW_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Its `requires_grad` flag decides whether
    /// gradients are collected for it.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf)
    }

    /// Records a tensor that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t.requires_grad(false), Op::Leaf)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_raw(t.requires_grad(true), Op::Leaf)
    }

    pub fn scalar_param(&mut self, v: f64) -> Var {
        self.param(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.value.zero_grad());
    }

    fn push_raw(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, parents: &[Var]) -> Var {
        let tracked = parents.iter().any(|p| self.nodes[p.0].value.tracks_grad());
        let value = Tensor::new(shape, data)
            .expect("op produced inconsistent shape")
            .requires_grad(tracked);
        self.push_raw(value, op)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (x, y) = (self.data(a), self.data(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let xv = x[i * k + p];
                let yr = &y[p * n..(p + 1) * n];
                let or = &mut out[i * n..(i + 1) * n];
                for (o, yv) in or.iter_mut().zip(yr) {
                    *o += xv * yv;
                }
            }
        }
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var, allow_row: bool) -> Result<Broadcast> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            Ok(Broadcast::Same)
        } else if tb.len() == 1 {
            Ok(Broadcast::RhsScalar)
        } else if ta.len() == 1 {
            Ok(Broadcast::LhsScalar)
        } else if allow_row && tb.shape().len() == 1 && tb.len() == ta.last_dim() {
            Ok(Broadcast::Row)
        } else {
            Err(Error::Dimension {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            })
        }
    }

    fn elementwise(
        &self,
        a: Var,
        b: Var,
        mode: Broadcast,
        f: impl Fn(f64, f64) -> f64,
    ) -> (Vec<usize>, Vec<f64>) {
        let (ta, tb) = (self.value(a), self.value(b));
        match mode {
            Broadcast::Same | Broadcast::RhsScalar | Broadcast::Row => {
                let y = tb.data();
                let data = ta
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, y[rhs_index(mode, i, y.len())]))
                    .collect();
                (ta.shape().to_vec(), data)
            }
            Broadcast::LhsScalar => {
                let x = ta.data()[0];
                let data = tb.data().iter().map(|&y| f(x, y)).collect();
                (tb.shape().to_vec(), data)
            }
        }
    }

    /// Elementwise sum. The right operand may also be a scalar or a
    /// bias vector broadcast across rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = self.broadcast("add", a, b, true)?;
        let (shape, data) = self.elementwise(a, b, mode, |x, y| x + y);
        Ok(self.push(shape, data, Op::Add(a, b, mode), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = self.broadcast("mul", a, b, false)?;
        let (shape, data) = self.elementwise(a, b, mode, |x, y| x * y);
        Ok(self.push(shape, data, Op::Mul(a, b, mode), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = self.broadcast("div", a, b, false)?;
        let (shape, data) = self.elementwise(a, b, mode, |x, y| x / y);
        Ok(self.push(shape, data, Op::Div(a, b, mode), &[a, b]))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let shape = t.shape().to_vec();
        let data = t.data().iter().map(|x| x * c).collect();
        self.push(shape, data, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let shape = t.shape().to_vec();
        let data = t.data().iter().map(|&x| x.max(0.0)).collect();
        self.push(shape, data, Op::Relu(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let shape = t.shape().to_vec();
        let data = t.data().iter().map(|x| x.ln()).collect();
        self.push(shape, data, Op::Log(a), &[a])
    }

    /// Softmax over the trailing axis of `z / temperature`.
    pub fn softmax(&mut self, z: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let t = self.value(z);
        let shape = t.shape().to_vec();
        let mut data = Vec::with_capacity(t.len());
        for r in 0..t.rows() {
            data.extend(softmax_row(t.row(r), temperature));
        }
        Ok(self.push(
            shape,
            data,
            Op::Softmax {
                input: z,
                temperature,
            },
            &[z],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(vec![], vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let m = d.iter().sum::<f64>() / d.len() as f64;
        self.push(vec![], vec![m], Op::Mean(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(a).reshaped(shape.into())?;
        let (shape, data) = (t.shape().to_vec(), t.into_data());
        Ok(self.push(shape, data, Op::Reshape(a), &[a]))
    }

    /// Batch mean of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (rows, classes) = (t.rows(), t.last_dim());
        if t.shape().len() != 2 || rows != targets.len() {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if rows == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut total = 0.0;
        for (r, &y) in targets.iter().enumerate() {
            if y >= classes {
                return Err(Error::TargetIndex {
                    row: r,
                    value: y,
                    classes,
                });
            }
            let row = t.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let loss = total / rows as f64;
        Ok(self.push(
            vec![],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    /// Batch mean of `KL(teacher ‖ student)` for probability rows. The
    /// teacher side never receives gradient.
    pub fn kl_div(&mut self, teacher: Var, student: Var) -> Result<Var> {
        let (tt, ts) = (self.value(teacher), self.value(student));
        if tt.shape() != ts.shape() || tt.shape().len() != 2 {
            return Err(Error::Dimension {
                op: "kl_div",
                lhs: tt.shape().to_vec(),
                rhs: ts.shape().to_vec(),
            });
        }
        for (name, t) in [("teacher", tt), ("student", ts)] {
            for r in 0..t.rows() {
                let s: f64 = t.row(r).iter().sum();
                if (s - 1.0).abs() > PROB_ROW_TOLERANCE || t.row(r).iter().any(|&p| p < 0.0) {
                    return Err(Error::Contract(format!(
                        "{name} row {r} is not a probability vector (sum {s})"
                    )));
                }
            }
        }
        let rows = tt.rows();
        let total: f64 = tt
            .data()
            .iter()
            .zip(ts.data())
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, &q)| p * (p.ln() - q.ln()))
            .sum();
        let loss = total / rows as f64;
        Ok(self.push(
            vec![],
            vec![loss],
            Op::KlDiv { teacher, student },
            &[student],
        ))
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension {
                op: "mse",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let n = ta.len() as f64;
        let loss = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / n;
        Ok(self.push(vec![], vec![loss], Op::Mse(a, b), &[a, b]))
    }

    /// Quantize-dequantize with a straight-through gradient.
    pub fn fake_quant(&mut self, x: Var, params: FakeQuantParams) -> Var {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let data = t.data().iter().map(|&v| params.apply(v)).collect();
        self.push(shape, data, Op::FakeQuant(x, params), &[x])
    }

    /// Back-propagates from a scalar node, adding into the `grad` slot of
    /// every tracked node. Tracked nodes the loss does not depend on get a
    /// zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Dimension {
                op: "backward",
                lhs: self.value(loss).shape().to_vec(),
                rhs: vec![],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.tracks_grad() {
                continue;
            }
            for (p, local) in self.local_grads(i, &g) {
                if !self.nodes[p.0].value.tracks_grad() {
                    continue;
                }
                match &mut grads[p.0] {
                    Some(acc) => acc.iter_mut().zip(&local).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(local),
                }
            }
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if !node.value.tracks_grad() {
                continue;
            }
            match grads.get_mut(i).and_then(Option::take) {
                Some(g) => node.value.accumulate_grad(&g),
                None => {
                    let zeros = vec![0.0; node.value.len()];
                    node.value.accumulate_grad(&zeros);
                }
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `i` to each of its parents given the
    /// upstream gradient `g`.
    fn local_grads(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (x, y) = (self.data(*a), self.data(*b));
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                for r in 0..m {
                    let gr = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let yr = &y[p * n..(p + 1) * n];
                        ga[r * k + p] = gr.iter().zip(yr).map(|(u, v)| u * v).sum();
                        let xv = x[r * k + p];
                        for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(gr) {
                            *o += xv * gv;
                        }
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Add(a, b, mode) => self.binary_grads(*a, *b, *mode, g, |_, _| 1.0, |_, _| 1.0),
            Op::Mul(a, b, mode) => self.binary_grads(*a, *b, *mode, g, |_, y| y, |x, _| x),
            Op::Div(a, b, mode) => {
                self.binary_grads(*a, *b, *mode, g, |_, y| 1.0 / y, |x, y| -x / (y * y))
            }
            Op::Scale(a, c) => vec![(*a, g.iter().map(|v| v * c).collect())],
            Op::Relu(a) => {
                let x = self.data(*a);
                let ga = g
                    .iter()
                    .zip(x)
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                vec![(*a, ga)]
            }
            Op::Log(a) => {
                let x = self.data(*a);
                vec![(*a, g.iter().zip(x).map(|(gv, xv)| gv / xv).collect())]
            }
            Op::Softmax { input, temperature } => {
                let y = node.value.data();
                let c = node.value.last_dim();
                let mut gz = vec![0.0; y.len()];
                for r in 0..node.value.rows() {
                    let (yr, gr) = (&y[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gz[r * c + j] = yr[j] * (gr[j] - dot) / temperature;
                    }
                }
                vec![(*input, gz)]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; self.value(*a).len()])],
            Op::Mean(a) => {
                let n = self.value(*a).len();
                vec![(*a, vec![g[0] / n as f64; n])]
            }
            Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::CrossEntropy { logits, targets } => {
                let t = self.value(*logits);
                let (rows, c) = (t.rows(), t.last_dim());
                let mut gz = Vec::with_capacity(t.len());
                for (r, &y) in targets.iter().enumerate() {
                    let p = softmax_row(t.row(r), 1.0);
                    gz.extend(p.iter().enumerate().map(|(j, &pj)| {
                        let onehot = if j == y { 1.0 } else { 0.0 };
                        g[0] * (pj - onehot) / rows as f64
                    }));
                }
                debug_assert_eq!(gz.len(), rows * c);
                vec![(*logits, gz)]
            }
            Op::KlDiv { teacher, student } => {
                let (pt, ps) = (self.data(*teacher), self.data(*student));
                let rows = self.value(*student).rows() as f64;
                let gs = pt
                    .iter()
                    .zip(ps)
                    .map(|(&p, &q)| if p > 0.0 { -g[0] * p / (q * rows) } else { 0.0 })
                    .collect();
                vec![(*student, gs)]
            }
            Op::Mse(a, b) => {
                let (x, y) = (self.data(*a), self.data(*b));
                let n = x.len() as f64;
                let ga: Vec<f64> = x.iter().zip(y).map(|(u, v)| 2.0 * g[0] * (u - v) / n).collect();
                let gb = ga.iter().map(|v| -v).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::FakeQuant(x, params) => {
                let xs = self.data(*x);
                vec![(*x, g.iter().zip(xs).map(|(gv, &xv)| gv * params.ste(xv)).collect())]
            }
        }
    }

    /// Gradients of a broadcasting binary op onto both operands. `da` and
    /// `db` are the partial derivatives with respect to each operand.
    fn binary_grads(
        &self,
        a: Var,
        b: Var,
        mode: Broadcast,
        g: &[f64],
        da: impl Fn(f64, f64) -> f64,
        db: impl Fn(f64, f64) -> f64,
    ) -> Vec<(Var, Vec<f64>)> {
        let (x, y) = (self.data(a), self.data(b));
        let mut ga = vec![0.0; x.len()];
        let mut gb = vec![0.0; y.len()];
        for (i, gv) in g.iter().enumerate() {
            let (ia, ib) = match mode {
                Broadcast::LhsScalar => (0, i),
                _ => (i, rhs_index(mode, i, y.len())),
            };
            ga[ia] += gv * da(x[ia], y[ib]);
            gb[ib] += gv * db(x[ia], y[ib]);
        }
        vec![(a, ga), (b, gb)]
    }
}

fn rhs_index(mode: Broadcast, i: usize, n: usize) -> usize {
    match mode {
        Broadcast::Same => i,
        Broadcast::Row => i % n,
        Broadcast::RhsScalar | Broadcast::LhsScalar => 0,
    }
}

/// Numerically stable softmax of one row at the given temperature.
pub fn softmax_row(row: &[f64], temperature: f64) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| ((v - m) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
