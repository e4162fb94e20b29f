//! Recorded computation graph and reverse-mode gradients.
//!
//! A [`Graph`] is an append-only list of nodes. Every operation computes
//! its value eagerly and records its inputs; [`Graph::backward`] walks the
//! list in reverse and accumulates vector-Jacobian products. Parameters
//! are borrowed from a [`ParamStore`] rather than copied into the graph.

use alloc::vec;
use alloc::vec::Vec;

use super::{GradStore, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::math;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRow { m: Var, v: Var },
    Scale(Var, f64),
    Elu(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    WeightedSum { w: Var, m: Var },
    MeanRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Concat(Vec<Var>),
    Slice { a: Var, start: usize },
    Gather { table: Var, index: usize },
    Row { m: Var, index: usize },
    StackRows(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    AddN(Vec<Var>),
    Pick { a: Var, index: usize },
    KlDiag { mu_q: Var, lv_q: Var, mu_p: Var, lv_p: Var },
    Nll { logits: Var, target: usize, probs: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::Linear { .. } => "linear",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulRow { .. } => "mul_row",
            Op::Scale(..) => "scale",
            Op::Elu(_) => "elu",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::MeanRows(_) => "mean_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Gather { .. } => "gather",
            Op::Row { .. } => "row",
            Op::StackRows(_) => "stack_rows",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::AddN(_) => "add_n",
            Op::Pick { .. } => "pick",
            Op::KlDiag { .. } => "kl_diag_gaussian",
            Op::Nll { .. } => "nll",
        }
    }
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Computation record for one forward pass.
pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    validate: bool,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    /// A graph without parameters; only inputs and constants.
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
            validate: false,
        }
    }

    pub fn with_params(store: &'p ParamStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::with_capacity(1024),
            param_vars: vec![None; store.len()],
            validate: false,
        }
    }

    /// In validation mode `backward` refuses graphs holding NaN or Inf.
    pub fn set_validation(&mut self, on: bool) {
        self.validate = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn store(&self) -> Option<&'p ParamStore> {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.expect("param node without store").get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    /// `x Wᵀ + b` over the trailing axis of `x`; `W` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.value(x);
        let ws = self.value(w);
        if ws.rank() != 2 || xs.last_dim() != ws.shape()[1] {
            return Err(Error::Shape {
                op: "linear",
                lhs: xs.shape().to_vec(),
                rhs: ws.shape().to_vec(),
            });
        }
        let (out, inn) = (ws.shape()[0], ws.shape()[1]);
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return Err(Error::Shape {
                    op: "linear bias",
                    lhs: vec![out],
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let rows = xs.rows();
        let mut y = vec![0.0; rows * out];
        let wd = ws.data();
        let xd = xs.data();
        let bd = b.map(|b| self.value(b).data());
        for r in 0..rows {
            let xr = &xd[r * inn..(r + 1) * inn];
            let yr = &mut y[r * out..(r + 1) * out];
            for (o, yo) in yr.iter_mut().enumerate() {
                *yo = math::dot(&wd[o * inn..(o + 1) * inn], xr) + bd.map_or(0.0, |b| b[o]);
            }
        }
        let mut shape = xs.shape().to_vec();
        if shape.is_empty() {
            shape.push(out);
        } else {
            *shape.last_mut().unwrap() = out;
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(Tensor::new(shape, y)?, Op::Linear { x, w, b }, rg))
    }

    /// Linear layer from parameter ids.
    pub fn dense(&mut self, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var> {
        let w = self.param(w);
        let b = b.map(|b| self.param(b));
        self.linear(x, w, b)
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Multiplies every row of `m` (`[N, z]`) elementwise by `v` (`[z]`).
    pub fn mul_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tv.rank() != 1 || tm.last_dim() != tv.len() {
            return Err(Error::Shape {
                op: "mul_row",
                lhs: tm.shape().to_vec(),
                rhs: tv.shape().to_vec(),
            });
        }
        let z = tv.len();
        let vd = tv.data();
        let data = tm.data().iter().enumerate().map(|(i, x)| x * vd[i % z]).collect();
        let t = Tensor::new(tm.shape().to_vec(), data)?;
        let rg = self.rg(&[m, v]);
        Ok(self.push(t, Op::MulRow { m, v }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x * factor).collect())
            .expect("shape preserved");
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, factor), rg)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| f(*x)).collect())
            .expect("shape preserved");
        let rg = self.rg(&[a]);
        self.push(t, op, rg)
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Elu(a), math::elu)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), math::sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), math::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), math::exp)
    }

    /// Softmax over the trailing axis, with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let c = ta.last_dim();
        let mut out = Vec::with_capacity(ta.len());
        for r in 0..ta.rows() {
            out.extend(softmax_row(ta.row(r)));
        }
        debug_assert_eq!(out.len(), ta.len());
        let _ = c;
        let t = Tensor::new(ta.shape().to_vec(), out).expect("shape preserved");
        let rg = self.rg(&[a]);
        self.push(t, Op::Softmax(a), rg)
    }

    /// Log-softmax over the trailing axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut out = Vec::with_capacity(ta.len());
        for r in 0..ta.rows() {
            out.extend(log_softmax_row(ta.row(r)));
        }
        let t = Tensor::new(ta.shape().to_vec(), out).expect("shape preserved");
        let rg = self.rg(&[a]);
        self.push(t, Op::LogSoftmax(a), rg)
    }

    /// `Σ_i w_i · m_i` for weights `[N]` and rows `m: [N, z]`.
    pub fn weighted_sum(&mut self, w: Var, m: Var) -> Result<Var> {
        let (tw, tm) = (self.value(w), self.value(m));
        if tw.rank() != 1 || tm.rank() != 2 || tm.shape()[0] != tw.len() {
            return Err(Error::Shape {
                op: "weighted_sum",
                lhs: tw.shape().to_vec(),
                rhs: tm.shape().to_vec(),
            });
        }
        let z = tm.shape()[1];
        let mut out = vec![0.0; z];
        for (i, wi) in tw.data().iter().enumerate() {
            math::axpy(*wi, tm.row(i), &mut out);
        }
        let rg = self.rg(&[w, m]);
        Ok(self.push(Tensor::vector(out), Op::WeightedSum { w, m }, rg))
    }

    /// Mean of the rows of `[N, z]`.
    pub fn mean_rows(&mut self, m: Var) -> Result<Var> {
        let tm = self.value(m);
        if tm.rank() != 2 {
            return Err(Error::Shape {
                op: "mean_rows",
                lhs: tm.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (n, z) = (tm.shape()[0], tm.shape()[1]);
        let mut out = vec![0.0; z];
        for i in 0..n {
            math::axpy(1.0, tm.row(i), &mut out);
        }
        for v in &mut out {
            *v /= n as f64;
        }
        let rg = self.rg(&[m]);
        Ok(self.push(Tensor::vector(out), Op::MeanRows(m), rg))
    }

    /// Per-vector normalization over the trailing axis followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let z = tx.last_dim();
        if self.shape(gain) != [z] || self.shape(bias) != [z] {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: self.shape(gain).to_vec(),
            });
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / z as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / z as f64;
            let is = 1.0 / math::sqrt(var + eps);
            inv_std[r] = is;
            for j in 0..z {
                let h = (row[j] - mean) * is;
                xhat[r * z + j] = h;
                out[r * z + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Concatenates vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty { op: "concat" });
        }
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() > 1 {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: t.shape().to_vec(),
                    rhs: vec![],
                });
            }
            out.extend_from_slice(t.data());
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::vector(out), Op::Concat(parts.to_vec()), rg))
    }

    /// `a[start..start + len]` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 1 || len == 0 || start + len > ta.len() {
            return Err(Error::Index {
                what: "slice",
                index: start + len,
                size: ta.len(),
            });
        }
        let t = Tensor::vector(ta.data()[start..start + len].to_vec());
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Slice { a, start }, rg))
    }

    /// Row `index` of a `[V, e]` table (embedding lookup).
    pub fn gather(&mut self, table: Var, index: usize) -> Result<Var> {
        let tt = self.value(table);
        if tt.rank() != 2 || index >= tt.shape()[0] {
            return Err(Error::Index {
                what: "embedding table",
                index,
                size: tt.shape().first().copied().unwrap_or(0),
            });
        }
        let t = Tensor::vector(tt.row(index).to_vec());
        let rg = self.rg(&[table]);
        Ok(self.push(t, Op::Gather { table, index }, rg))
    }

    /// Row `index` of a matrix node.
    pub fn row(&mut self, m: Var, index: usize) -> Result<Var> {
        let tm = self.value(m);
        if tm.rank() != 2 || index >= tm.shape()[0] {
            return Err(Error::Index {
                what: "matrix rows",
                index,
                size: tm.shape().first().copied().unwrap_or(0),
            });
        }
        let t = Tensor::vector(tm.row(index).to_vec());
        let rg = self.rg(&[m]);
        Ok(self.push(t, Op::Row { m, index }, rg))
    }

    /// Stacks equal-length vectors into `[N, z]`.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows.first().ok_or(Error::Empty { op: "stack_rows" })?;
        let z = self.value(first).len();
        let mut out = Vec::with_capacity(rows.len() * z);
        for &r in rows {
            let t = self.value(r);
            if t.rank() != 1 || t.len() != z {
                return Err(Error::Shape {
                    op: "stack_rows",
                    lhs: vec![z],
                    rhs: t.shape().to_vec(),
                });
            }
            out.extend_from_slice(t.data());
        }
        let t = Tensor::matrix(rows.len(), z, out)?;
        let rg = self.rg(rows);
        Ok(self.push(t, Op::StackRows(rows.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape.to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Sum of same-shape tensors.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty { op: "add_n" })?;
        let mut acc = self.value(first).clone();
        for &p in &parts[1..] {
            self.same_shape("add_n", first, p)?;
            for (a, b) in acc.data_mut().iter_mut().zip(self.value(p).data()) {
                *a += b;
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(acc, Op::AddN(parts.to_vec()), rg))
    }

    /// Scalar element `a[index]` of a vector.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let ta = self.value(a);
        if index >= ta.len() {
            return Err(Error::Index {
                what: "pick",
                index,
                size: ta.len(),
            });
        }
        let t = Tensor::scalar(ta.data()[index]);
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Pick { a, index }, rg))
    }

    /// Closed-form `KL(q ‖ p)` between diagonal Gaussians given by mean and
    /// log-variance, summed over dimensions.
    pub fn kl_diag_gaussian(&mut self, mu_q: Var, lv_q: Var, mu_p: Var, lv_p: Var) -> Result<Var> {
        self.same_shape("kl_diag_gaussian", mu_q, lv_q)?;
        self.same_shape("kl_diag_gaussian", mu_q, mu_p)?;
        self.same_shape("kl_diag_gaussian", mu_q, lv_p)?;
        let kl = kl_diag_values(
            self.value(mu_q).data(),
            self.value(lv_q).data(),
            self.value(mu_p).data(),
            self.value(lv_p).data(),
        );
        let rg = self.rg(&[mu_q, lv_q, mu_p, lv_p]);
        Ok(self.push(
            Tensor::scalar(kl),
            Op::KlDiag {
                mu_q,
                lv_q,
                mu_p,
                lv_p,
            },
            rg,
        ))
    }

    /// `-log softmax(logits)[target]` for a logit vector.
    pub fn nll(&mut self, logits: Var, target: usize) -> Result<Var> {
        let tl = self.value(logits);
        if tl.rank() != 1 || target >= tl.len() {
            return Err(Error::Index {
                what: "nll target",
                index: target,
                size: tl.len(),
            });
        }
        let logp = log_softmax_row(tl.data());
        let probs: Vec<f64> = logp.iter().map(|v| math::exp(*v)).collect();
        let t = Tensor::scalar(-logp[target]);
        let rg = self.rg(&[logits]);
        Ok(self.push(t, Op::Nll { logits, target, probs }, rg))
    }

    /// Reparameterized draw `mu + exp(0.5 · log_var) ⊙ noise`; `noise` is a
    /// caller-supplied standard-normal sample and receives no gradient.
    pub fn gaussian_sample(&mut self, mu: Var, log_var: Var, noise: &Tensor) -> Result<Var> {
        self.same_shape("gaussian_sample", mu, log_var)?;
        if self.shape(mu) != noise.shape() {
            return Err(Error::Shape {
                op: "gaussian_sample",
                lhs: self.shape(mu).to_vec(),
                rhs: noise.shape().to_vec(),
            });
        }
        let eps = self.constant(noise.clone());
        let half = self.scale(log_var, 0.5);
        let std = self.exp(half);
        let spread = self.mul(std, eps)?;
        self.add(mu, spread)
    }

    /// First node holding a NaN or infinity, as an error.
    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if !self.value(Var(i)).all_finite() {
                return Err(Error::NonFinite { op: n.op.name() });
            }
        }
        Ok(())
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let tl = self.value(loss);
        if !tl.is_scalar() {
            return Err(Error::NonScalarLoss(tl.shape().to_vec()));
        }
        if self.validate {
            self.validate()?;
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = self.value(Var(i)).data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Linear { x, w, b } => {
                let tx = self.value(*x);
                let tw = self.value(*w);
                let (out, inn) = (tw.shape()[0], tw.shape()[1]);
                let rows = tx.rows();
                if self.requires_grad(*x) {
                    let wd = tw.data();
                    self.acc(grads, *x, |gx| {
                        for r in 0..rows {
                            let gr = &mut gx[r * inn..(r + 1) * inn];
                            for o in 0..out {
                                let d = dy[r * out + o];
                                if d != 0.0 {
                                    math::axpy(d, &wd[o * inn..(o + 1) * inn], gr);
                                }
                            }
                        }
                    });
                }
                if self.requires_grad(*w) {
                    let xd = tx.data();
                    self.acc(grads, *w, |gw| {
                        for r in 0..rows {
                            let xr = &xd[r * inn..(r + 1) * inn];
                            for o in 0..out {
                                let d = dy[r * out + o];
                                if d != 0.0 {
                                    math::axpy(d, xr, &mut gw[o * inn..(o + 1) * inn]);
                                }
                            }
                        }
                    });
                }
                if let Some(b) = b {
                    self.acc(grads, *b, |gb| {
                        for r in 0..rows {
                            math::axpy(1.0, &dy[r * out..(r + 1) * out], gb);
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |g| math::axpy(1.0, dy, g));
                self.acc(grads, *b, |g| math::axpy(1.0, dy, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |g| math::axpy(1.0, dy, g));
                self.acc(grads, *b, |g| math::axpy(-1.0, dy, g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |g| {
                    for k in 0..g.len() {
                        g[k] += dy[k] * vb[k];
                    }
                });
                self.acc(grads, *b, |g| {
                    for k in 0..g.len() {
                        g[k] += dy[k] * va[k];
                    }
                });
            }
            Op::MulRow { m, v } => {
                let (vm, vv) = (self.value(*m).data(), self.value(*v).data());
                let z = vv.len();
                self.acc(grads, *m, |g| {
                    for k in 0..g.len() {
                        g[k] += dy[k] * vv[k % z];
                    }
                });
                self.acc(grads, *v, |g| {
                    for k in 0..vm.len() {
                        g[k % z] += dy[k] * vm[k];
                    }
                });
            }
            Op::Scale(a, f) => self.acc(grads, *a, |g| math::axpy(*f, dy, g)),
            Op::Elu(a) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |g| {
                    for k in 0..g.len() {
                        g[k] += dy[k] * if x[k] > 0.0 { 1.0 } else { y[k] + 1.0 };
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |g| {
                    for k in 0..g.len() {
                        if x[k] > 0.0 {
                            g[k] += dy[k];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => self.acc(grads, *a, |g| {
                for k in 0..g.len() {
                    g[k] += dy[k] * y[k] * (1.0 - y[k]);
                }
            }),
            Op::Tanh(a) => self.acc(grads, *a, |g| {
                for k in 0..g.len() {
                    g[k] += dy[k] * (1.0 - y[k] * y[k]);
                }
            }),
            Op::Exp(a) => self.acc(grads, *a, |g| {
                for k in 0..g.len() {
                    g[k] += dy[k] * y[k];
                }
            }),
            Op::Softmax(a) => {
                let c = self.value(*a).last_dim();
                self.acc(grads, *a, |g| {
                    for r in 0..y.len() / c {
                        let (yr, dr) = (&y[r * c..(r + 1) * c], &dy[r * c..(r + 1) * c]);
                        let s = math::dot(yr, dr);
                        for k in 0..c {
                            g[r * c + k] += yr[k] * (dr[k] - s);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let c = self.value(*a).last_dim();
                self.acc(grads, *a, |g| {
                    for r in 0..y.len() / c {
                        let (yr, dr) = (&y[r * c..(r + 1) * c], &dy[r * c..(r + 1) * c]);
                        let s: f64 = dr.iter().sum();
                        for k in 0..c {
                            g[r * c + k] += dr[k] - math::exp(yr[k]) * s;
                        }
                    }
                });
            }
            Op::WeightedSum { w, m } => {
                let (tw, tm) = (self.value(*w), self.value(*m));
                let z = tm.shape()[1];
                self.acc(grads, *w, |g| {
                    for (k, gk) in g.iter_mut().enumerate() {
                        *gk += math::dot(tm.row(k), dy);
                    }
                });
                self.acc(grads, *m, |g| {
                    for (k, wk) in tw.data().iter().enumerate() {
                        math::axpy(*wk, dy, &mut g[k * z..(k + 1) * z]);
                    }
                });
            }
            Op::MeanRows(m) => {
                let tm = self.value(*m);
                let (n, z) = (tm.shape()[0], tm.shape()[1]);
                self.acc(grads, *m, |g| {
                    for r in 0..n {
                        math::axpy(1.0 / n as f64, dy, &mut g[r * z..(r + 1) * z]);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gd = self.value(*gain).data();
                let z = gd.len();
                let rows = xhat.len() / z;
                self.acc(grads, *gain, |g| {
                    for k in 0..xhat.len() {
                        g[k % z] += dy[k] * xhat[k];
                    }
                });
                self.acc(grads, *bias, |g| {
                    for k in 0..dy.len() {
                        g[k % z] += dy[k];
                    }
                });
                self.acc(grads, *x, |g| {
                    let zf = z as f64;
                    for r in 0..rows {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for j in 0..z {
                            let d = dy[r * z + j] * gd[j];
                            sum_d += d;
                            sum_dx += d * xhat[r * z + j];
                        }
                        for j in 0..z {
                            let d = dy[r * z + j] * gd[j];
                            g[r * z + j] += inv_std[r] / zf * (zf * d - sum_d - xhat[r * z + j] * sum_dx);
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.acc(grads, p, |g| math::axpy(1.0, &dy[off..off + n], g));
                    off += n;
                }
            }
            Op::Slice { a, start } => {
                let n = dy.len();
                self.acc(grads, *a, |g| math::axpy(1.0, dy, &mut g[*start..*start + n]));
            }
            Op::Gather { table, index } => {
                let e = dy.len();
                self.acc(grads, *table, |g| math::axpy(1.0, dy, &mut g[index * e..(index + 1) * e]));
            }
            Op::Row { m, index } => {
                let e = dy.len();
                self.acc(grads, *m, |g| math::axpy(1.0, dy, &mut g[index * e..(index + 1) * e]));
            }
            Op::StackRows(rows) => {
                let z = dy.len() / rows.len();
                for (k, &r) in rows.iter().enumerate() {
                    self.acc(grads, r, |g| math::axpy(1.0, &dy[k * z..(k + 1) * z], g));
                }
            }
            Op::Reshape(a) => self.acc(grads, *a, |g| math::axpy(1.0, dy, g)),
            Op::Sum(a) => self.acc(grads, *a, |g| {
                for v in g.iter_mut() {
                    *v += dy[0];
                }
            }),
            Op::AddN(parts) => {
                for &p in parts {
                    self.acc(grads, p, |g| math::axpy(1.0, dy, g));
                }
            }
            Op::Pick { a, index } => self.acc(grads, *a, |g| g[*index] += dy[0]),
            Op::KlDiag {
                mu_q,
                lv_q,
                mu_p,
                lv_p,
            } => {
                let (mq, lq) = (self.value(*mu_q).data(), self.value(*lv_q).data());
                let (mp, lp) = (self.value(*mu_p).data(), self.value(*lv_p).data());
                let d = dy[0];
                self.acc(grads, *mu_q, |g| {
                    for k in 0..g.len() {
                        g[k] += d * (mq[k] - mp[k]) * math::exp(-lp[k]);
                    }
                });
                self.acc(grads, *mu_p, |g| {
                    for k in 0..g.len() {
                        g[k] -= d * (mq[k] - mp[k]) * math::exp(-lp[k]);
                    }
                });
                self.acc(grads, *lv_q, |g| {
                    for k in 0..g.len() {
                        g[k] += d * 0.5 * math::expm1(lq[k] - lp[k]);
                    }
                });
                self.acc(grads, *lv_p, |g| {
                    for k in 0..g.len() {
                        let diff = mq[k] - mp[k];
                        g[k] += d * 0.5 * (-math::expm1(lq[k] - lp[k]) - diff * diff * math::exp(-lp[k]));
                    }
                });
            }
            Op::Nll { logits, target, probs } => {
                let d = dy[0];
                self.acc(grads, *logits, |g| {
                    for k in 0..g.len() {
                        g[k] += d * probs[k];
                    }
                    g[*target] -= d;
                });
            }
        }
    }

    #[inline]
    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.value(v).len();
        let g = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(g);
    }
}

/// Gradients from one reverse pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient w.r.t. `v`, or `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient w.r.t. `v` shaped like its value; zeros when unreachable.
    pub fn tensor(&self, graph: &Graph<'_>, v: Var) -> Tensor {
        let shape = graph.shape(v).to_vec();
        match self.wrt(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Adds the gradients of every parameter used in `graph` into `out`.
    pub fn accumulate_params(&self, graph: &Graph<'_>, out: &mut GradStore) {
        for (pid, var) in graph.param_vars.iter().enumerate() {
            if let Some(v) = var {
                if let Some(g) = self.wrt(*v) {
                    let slot = out.get_mut(ParamId(pid));
                    math::axpy(1.0, g, slot.data_mut());
                }
            }
        }
    }

    /// Parameter gradients as a fresh [`GradStore`].
    pub fn param_grads(&self, graph: &Graph<'_>) -> GradStore {
        let store = graph.store.expect("graph has no parameter store");
        let mut out = GradStore::zeros_like(store);
        self.accumulate_params(graph, &mut out);
        out
    }
}

fn softmax_row(row: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|v| math::exp(v - max)).sum();
    row.iter().map(move |v| math::exp(v - max) / z)
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + math::ln(row.iter().map(|v| math::exp(v - max)).sum::<f64>());
    row.iter().map(|v| v - lse).collect()
}

/// Numerically stable softmax of a slice.
pub fn softmax(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Empty { op: "softmax" });
    }
    Ok(softmax_row(values).collect())
}

/// Numerically stable log-softmax of a slice.
pub fn log_softmax(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Empty { op: "log_softmax" });
    }
    Ok(log_softmax_row(values))
}

pub(crate) fn kl_diag_values(mq: &[f64], lq: &[f64], mp: &[f64], lp: &[f64]) -> f64 {
    // Per dimension: ½(r − 1 − ln r + Δμ²/σ_p²) with r = σ_q²/σ_p²; the
    // expm1 form keeps each term ≥ 0 in floating point.
    let mut kl = 0.0;
    for k in 0..mq.len() {
        let diff = mq[k] - mp[k];
        let d = lq[k] - lp[k];
        kl += 0.5 * ((math::expm1(d) - d) + diff * diff * math::exp(-lp[k]));
    }
    kl
}
