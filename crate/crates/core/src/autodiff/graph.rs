use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, ParamId, ParamStore, Tensor};

/// Default lower clamp applied to the inputs of `log` and `sqrt`.
pub const DEFAULT_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn node_id(self) -> usize {
        self.0
    }
}

/// The primitive set understood by the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    Linear,
    Sigmoid,
    Tanh,
    Softmax,
    Cumsum,
    Clamp,
    Add,
    Sub,
    Mul,
    ScalarMul,
    Concat,
    Sqrt,
    Log,
    Sum,
    Dropout,
    Gather,
    MatMul,
    Transpose,
    Reshape,
}

/// A primitive together with its non-tensor arguments, for [`Graph::apply`].
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// Inputs `[x, weight, bias]`; `weight` is `(out, in)`.
    Linear,
    Sigmoid,
    Tanh,
    Softmax,
    Cumsum,
    /// Bounds `(lo, hi)`; the gradient is zero outside them.
    Clamp(f64, f64),
    Add,
    Sub,
    Mul,
    ScalarMul(f64),
    Concat,
    Sqrt,
    Log,
    Sum,
    /// Drop probability; identity outside training mode.
    Dropout(f64),
    Gather(Vec<usize>),
    MatMul,
    Transpose,
    Reshape(Vec<usize>),
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Linear { x: usize, w: usize, b: usize },
    Sigmoid(usize),
    Tanh(usize),
    Softmax(usize),
    Cumsum(usize),
    Clamp { x: usize, lo: f64, hi: f64 },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    ScalarMul(usize, f64),
    Concat(Vec<usize>),
    Sqrt { x: usize, floor: Option<f64> },
    Log { x: usize, floor: Option<f64> },
    Sum(usize),
    Dropout { x: usize, mask: Vec<f64> },
    Gather { x: usize, idx: Vec<usize> },
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
}

impl Op {
    fn kind(&self) -> Option<PrimitiveKind> {
        use PrimitiveKind as K;
        Some(match self {
            Op::Constant | Op::Param(_) => return None,
            Op::Linear { .. } => K::Linear,
            Op::Sigmoid(_) => K::Sigmoid,
            Op::Tanh(_) => K::Tanh,
            Op::Softmax(_) => K::Softmax,
            Op::Cumsum(_) => K::Cumsum,
            Op::Clamp { .. } => K::Clamp,
            Op::Add(..) => K::Add,
            Op::Sub(..) => K::Sub,
            Op::Mul(..) => K::Mul,
            Op::ScalarMul(..) => K::ScalarMul,
            Op::Concat(_) => K::Concat,
            Op::Sqrt { .. } => K::Sqrt,
            Op::Log { .. } => K::Log,
            Op::Sum(_) => K::Sum,
            Op::Dropout { .. } => K::Dropout,
            Op::Gather { .. } => K::Gather,
            Op::MatMul(..) => K::MatMul,
            Op::Transpose(_) => K::Transpose,
            Op::Reshape(_) => K::Reshape,
        })
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Define-by-run record of primitive applications for one forward pass.
///
/// Nodes are appended in evaluation order, so insertion order is a valid
/// topological order and the graph is acyclic by construction. A graph is
/// consumed by [`Graph::backward`]; build a fresh one (or [`Graph::reset`])
/// for the next document.
#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    train: bool,
    clamp: Option<f64>,
    rng: ChaCha8Rng,
    consumed: bool,
    #[cfg(test)]
    pub(crate) fault: Option<(PrimitiveKind, f64)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            train: false,
            clamp: Some(DEFAULT_CLAMP),
            rng: ChaCha8Rng::seed_from_u64(0),
            consumed: false,
            #[cfg(test)]
            fault: None,
        }
    }

    /// Training-mode graph whose dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Self::new()
        }
    }

    /// Sets the lower clamp for `log`/`sqrt` inputs. `None` turns
    /// non-positive inputs into domain errors instead.
    pub fn with_clamp(mut self, clamp: Option<f64>) -> Self {
        self.clamp = clamp;
        self
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node so the graph can record a new forward pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.consumed = false;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Places a constant (no gradient) on the graph.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Copies the current value of `x` as a constant, cutting gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.constant(value)
    }

    /// Leaf node for a parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    /// Generic entry point; each arm forwards to the dedicated method.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let arity = match prim {
            Primitive::Linear => 3,
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::MatMul => 2,
            Primitive::Concat => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(AutodiffError::Arity {
                op: format!("{prim:?}"),
                expected: arity,
                got: inputs.len(),
            });
        }
        match prim {
            Primitive::Linear => self.linear(inputs[0], inputs[1], inputs[2]),
            Primitive::Sigmoid => Ok(self.sigmoid(inputs[0])),
            Primitive::Tanh => Ok(self.tanh(inputs[0])),
            Primitive::Softmax => Ok(self.softmax(inputs[0])),
            Primitive::Cumsum => Ok(self.cumsum(inputs[0])),
            Primitive::Clamp(lo, hi) => self.clamp(inputs[0], lo, hi),
            Primitive::Add => self.add(inputs[0], inputs[1]),
            Primitive::Sub => self.sub(inputs[0], inputs[1]),
            Primitive::Mul => self.mul(inputs[0], inputs[1]),
            Primitive::ScalarMul(c) => Ok(self.scale(inputs[0], c)),
            Primitive::Concat => self.concat(inputs),
            Primitive::Sqrt => self.sqrt(inputs[0]),
            Primitive::Log => self.log(inputs[0]),
            Primitive::Sum => Ok(self.sum(inputs[0])),
            Primitive::Dropout(p) => self.dropout(inputs[0], p),
            Primitive::Gather(idx) => self.gather_rows(inputs[0], &idx),
            Primitive::MatMul => self.matmul(inputs[0], inputs[1]),
            Primitive::Transpose => self.transpose(inputs[0]),
            Primitive::Reshape(shape) => self.reshape(inputs[0], &shape),
        }
    }

    fn shape_err(&self, op: &'static str, vars: &[Var]) -> AutodiffError {
        AutodiffError::Shape {
            op,
            shapes: vars.iter().map(|v| self.shape(*v).to_vec()).collect(),
        }
    }

    /// Affine map `x W^T + b` over the last axis; `x` is `(in)` or `(rows, in)`,
    /// `w` is `(out, in)` and `b` is `(out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if ws.len() != 2 || bs != [ws[0]] || xs.is_empty() || xs.len() > 2 || xs[xs.len() - 1] != ws[1]
        {
            return Err(self.shape_err("linear", &[x, w, b]));
        }
        let (out_dim, in_dim) = (ws[0], ws[1]);
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = out_dim;
        let xv = &self.nodes[x.0].value;
        let wv = self.nodes[w.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows * out_dim);
        for r in 0..rows {
            let xr = xv.row(r);
            for o in 0..out_dim {
                let wr = &wv[o * in_dim..(o + 1) * in_dim];
                out.push(bv[o] + dot(xr, wr));
            }
        }
        let value = Tensor::new(shape, out).expect("linear output shape");
        Ok(self.push(
            value,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.0,
            },
        ))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xv = &self.nodes[x.0].value;
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).unwrap();
        self.push(value, op)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x.0))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let mut data = Vec::with_capacity(xv.len());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|v| (v - max).exp()));
            let z: f64 = data[start..].iter().sum();
            data[start..].iter_mut().for_each(|v| *v /= z);
        }
        let value = Tensor::new(xv.shape().to_vec(), data).unwrap();
        self.push(value, Op::Softmax(x.0))
    }

    /// Running sum over the last axis.
    pub fn cumsum(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let mut data = Vec::with_capacity(xv.len());
        for r in 0..xv.rows() {
            let mut acc = 0.0;
            for v in xv.row(r) {
                acc += v;
                data.push(acc);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data).unwrap();
        self.push(value, Op::Cumsum(x.0))
    }

    /// Elementwise clamp to `[lo, hi]`. Fails unless `lo <= hi`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, AutodiffError> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(AutodiffError::Domain { op: "clamp", value: lo });
        }
        Ok(self.map(x, |v| v.clamp(lo, hi), Op::Clamp { x: x.0, lo, hi }))
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err(name, &[a, b]));
        }
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data).unwrap();
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| c * v, Op::ScalarMul(x.0, c))
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let ones = self.constant(Tensor::full(self.shape(x), 1.0));
        self.sub(ones, x).expect("same shape")
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::Arity {
                op: "concat".into(),
                expected: 1,
                got: 0,
            });
        };
        let lead = self.shape(first);
        let lead = &lead[..lead.len().saturating_sub(1)];
        let ok = parts.iter().all(|p| {
            let s = self.shape(*p);
            !s.is_empty() && &s[..s.len() - 1] == lead
        });
        if !ok {
            return Err(self.shape_err("concat", parts));
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.nodes[p.0].value.last_dim()).collect();
        let total: usize = widths.iter().sum();
        let rows = self.nodes[first.0].value.rows();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let value = Tensor::new(shape, data).unwrap();
        Ok(self.push(value, Op::Concat(parts.iter().map(|p| p.0).collect())))
    }

    fn check_domain(&self, op: &'static str, x: Var, strict: bool) -> Result<(), AutodiffError> {
        if self.clamp.is_some() {
            return Ok(());
        }
        let bad = self.nodes[x.0]
            .value
            .data()
            .iter()
            .copied()
            .find(|&v| if strict { v <= 0.0 } else { v < 0.0 });
        match bad {
            Some(value) => Err(AutodiffError::Domain { op, value }),
            None => Ok(()),
        }
    }

    /// Square root of `max(x, 0)`, exact at zero; below the clamp
    /// the gradient is zero instead of unbounded.
    pub fn sqrt(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.check_domain("sqrt", x, false)?;
        let floor = self.clamp;
        Ok(self.map(x, |v| v.max(0.0).sqrt(), Op::Sqrt { x: x.0, floor }))
    }

    /// Natural log of `max(x, clamp)`; zero gradient inside the clamped region.
    pub fn log(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.check_domain("log", x, true)?;
        let floor = self.clamp;
        let lo = floor.unwrap_or(f64::MIN_POSITIVE);
        Ok(self.map(x, move |v| v.max(lo).ln(), Op::Log { x: x.0, floor }))
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x.0))
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
    /// Returns `x` unchanged outside training mode or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::DropoutRate(rate));
        }
        if !self.train || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let n = self.nodes[x.0].value.len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let xv = &self.nodes[x.0].value;
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).unwrap();
        Ok(self.push(value, Op::Dropout { x: x.0, mask }))
    }

    /// Selects rows of a 2-D tensor; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let xv = &self.nodes[x.0].value;
        if xv.shape().len() != 2 {
            return Err(self.shape_err("gather_rows", &[x]));
        }
        let (rows, cols) = (xv.shape()[0], xv.shape()[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::Index {
                op: "gather_rows",
                index: bad,
                len: rows,
            });
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(xv.row(i));
        }
        let value = Tensor::new(vec![idx.len(), cols], data).unwrap();
        Ok(self.push(
            value,
            Op::Gather {
                x: x.0,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Matrix product of `(m, k)` and `(k, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (as_, bs) = (self.shape(a), self.shape(b));
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[0] {
            return Err(self.shape_err("matmul", &[a, b]));
        }
        let (m, k, n) = (as_[0], as_[1], bs[1]);
        let data = matmul_raw(
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            m,
            k,
            n,
        );
        let value = Tensor::new(vec![m, n], data).unwrap();
        Ok(self.push(value, Op::MatMul(a.0, b.0)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xs = self.shape(x);
        if xs.len() != 2 {
            return Err(self.shape_err("transpose", &[x]));
        }
        let (r, c) = (xs[0], xs[1]);
        let data = transpose_raw(self.nodes[x.0].value.data(), r, c);
        let value = Tensor::new(vec![c, r], data).unwrap();
        Ok(self.push(value, Op::Transpose(x.0)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let xv = &self.nodes[x.0].value;
        if shape.iter().product::<usize>() != xv.len() {
            return Err(AutodiffError::Shape {
                op: "reshape",
                shapes: vec![xv.shape().to_vec(), shape.to_vec()],
            });
        }
        let value = xv.clone().reshaped(shape.to_vec());
        Ok(self.push(value, Op::Reshape(x.0)))
    }

    /// Reverse pass from a scalar `loss`, adding `d loss / d param` into each
    /// parameter's gradient. Parameters the loss does not reach receive
    /// nothing (their gradient stays as it was, zero after `zero_grad`).
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<(), AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::GraphConsumed);
        }
        let ls = self.shape(loss);
        if self.nodes[loss.0].value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(ls.to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(mut dy) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            #[cfg(test)]
            if let (Some((kind, factor)), Some(k)) = (self.fault, node.op.kind()) {
                if kind == k {
                    dy.iter_mut().for_each(|g| *g *= factor);
                }
            }
            let val = |j: usize| self.nodes[j].value.data();
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.accumulate(*id, &dy),
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[*x].value;
                    let ws = self.nodes[*w].value.shape();
                    let (out_dim, in_dim) = (ws[0], ws[1]);
                    let rows = xv.rows();
                    let wv = val(*w);
                    let mut dx = vec![0.0; rows * in_dim];
                    let mut dw = vec![0.0; out_dim * in_dim];
                    let mut db = vec![0.0; out_dim];
                    for r in 0..rows {
                        let xr = xv.row(r);
                        let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
                        for o in 0..out_dim {
                            let g = dy[r * out_dim + o];
                            if g == 0.0 {
                                continue;
                            }
                            db[o] += g;
                            let wr = &wv[o * in_dim..(o + 1) * in_dim];
                            let dwr = &mut dw[o * in_dim..(o + 1) * in_dim];
                            for k in 0..in_dim {
                                dxr[k] += g * wr[k];
                                dwr[k] += g * xr[k];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *b, db);
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    dy.iter_mut().zip(y).for_each(|(g, &s)| *g *= s * (1.0 - s));
                    accumulate(&mut grads, *x, dy);
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    dy.iter_mut().zip(y).for_each(|(g, &t)| *g *= 1.0 - t * t);
                    accumulate(&mut grads, *x, dy);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let d = y.last_dim();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &mut dy[r * d..(r + 1) * d];
                        let inner = dot(gr, yr);
                        gr.iter_mut().zip(yr).for_each(|(g, &s)| *g = s * (*g - inner));
                    }
                    accumulate(&mut grads, *x, dy);
                }
                Op::Cumsum(x) => {
                    let d = node.value.last_dim();
                    for row in dy.chunks_mut(d) {
                        let mut acc = 0.0;
                        for g in row.iter_mut().rev() {
                            acc += *g;
                            *g = acc;
                        }
                    }
                    accumulate(&mut grads, *x, dy);
                }
                Op::Clamp { x, lo, hi } => {
                    for (g, v) in dy.iter_mut().zip(val(*x)) {
                        if !(*lo..=*hi).contains(v) {
                            *g = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dy);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, dy.clone());
                    accumulate(&mut grads, *a, dy);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, dy.iter().map(|g| -g).collect());
                    accumulate(&mut grads, *a, dy);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let da = dy.iter().zip(bv).map(|(g, y)| g * y).collect();
                    let db = dy.iter().zip(av).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::ScalarMul(x, c) => {
                    dy.iter_mut().for_each(|g| *g *= c);
                    accumulate(&mut grads, *x, dy);
                }
                Op::Concat(parts) => {
                    let total = node.value.last_dim();
                    let rows = node.value.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.last_dim();
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&dy[r * total + offset..r * total + offset + w]);
                        }
                        offset += w;
                        accumulate(&mut grads, p, dp);
                    }
                }
                Op::Sqrt { x, floor } => {
                    let (xv, y) = (val(*x), node.value.data());
                    for ((g, &xi), &yi) in dy.iter_mut().zip(xv).zip(y) {
                        let clamped = floor.is_some_and(|f| xi < f);
                        *g = if clamped || yi == 0.0 { 0.0 } else { *g / (2.0 * yi) };
                    }
                    accumulate(&mut grads, *x, dy);
                }
                Op::Log { x, floor } => {
                    let xv = val(*x);
                    for (g, &xi) in dy.iter_mut().zip(xv) {
                        let clamped = floor.is_some_and(|f| xi < f);
                        *g = if clamped { 0.0 } else { *g / xi };
                    }
                    accumulate(&mut grads, *x, dy);
                }
                Op::Sum(x) => {
                    let n = self.nodes[*x].value.len();
                    accumulate(&mut grads, *x, vec![dy[0]; n]);
                }
                Op::Dropout { x, mask } => {
                    dy.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                    accumulate(&mut grads, *x, dy);
                }
                Op::Gather { x, idx } => {
                    let xv = &self.nodes[*x].value;
                    let cols = xv.last_dim();
                    let mut dx = vec![0.0; xv.len()];
                    for (r, &i) in idx.iter().enumerate() {
                        let src = &dy[r * cols..(r + 1) * cols];
                        dx[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, s)| *d += s);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MatMul(a, b) => {
                    let (as_, bs) = (self.nodes[*a].value.shape(), self.nodes[*b].value.shape());
                    let (m, k, n) = (as_[0], as_[1], bs[1]);
                    let bt = transpose_raw(val(*b), k, n);
                    let at = transpose_raw(val(*a), m, k);
                    let da = matmul_raw(&dy, &bt, m, n, k);
                    let db = matmul_raw(&at, &dy, k, m, n);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Transpose(x) => {
                    let s = node.value.shape();
                    accumulate(&mut grads, *x, transpose_raw(&dy, s[0], s[1]));
                }
                Op::Reshape(x) => accumulate(&mut grads, *x, dy),
            }
        }
        Ok(())
    }

    /// Kind of primitive that produced `v`, or `None` for leaves.
    pub fn kind_of(&self, v: Var) -> Option<PrimitiveKind> {
        self.nodes[v.0].op.kind()
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], i: usize, g: Vec<f64>) {
    match &mut grads[i] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, bv)| *o += aip * bv);
        }
    }
    out
}

fn transpose_raw(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}
