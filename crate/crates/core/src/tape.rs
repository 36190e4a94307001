//! A small reverse-mode automatic differentiation tape over dense vectors.
//!
//! Every node holds a 1-D value. Parameters are 2-D tensors owned by a
//! [`ParamStore`]; they enter the graph only through [`Tape::matvec`],
//! [`Tape::embed`] and [`Tape::param`], so their gradients accumulate straight
//! into a [`Gradients`] buffer and never occupy tape nodes.
//!
//! Constants created with [`Tape::input`] are leaves: gradient reaching them
//! is observable through [`Tape::backward_with_inputs`] but never flows any
//! further. That is how the running AvgOut distribution and the reward
//! baseline are kept out of the parameter gradient.

use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Total scalar count.
    pub fn size(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows, t.cols))
                .collect(),
        }
    }
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x *= c;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.data.iter().copied())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Embed {
        param: ParamId,
        row: usize,
        scale: f64,
    },
    MatVec {
        param: ParamId,
        x: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Dot(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick {
        x: Var,
        index: usize,
    },
    WeightedSum {
        weights: Var,
        items: Vec<Var>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

/// Recording of one forward computation.
#[derive(Debug, Clone)]
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(Op::Input, value)
    }

    /// A whole parameter tensor, flattened, as a vector node.
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).data.clone();
        self.push(Op::Param(id), value)
    }

    /// Row `row` of an embedding table, multiplied by `scale`.
    pub fn embed(&mut self, id: ParamId, row: usize, scale: f64) -> Var {
        let value = self
            .params
            .get(id)
            .row(row)
            .iter()
            .map(|x| x * scale)
            .collect();
        self.push(
            Op::Embed {
                param: id,
                row,
                scale,
            },
            value,
        )
    }

    pub fn matvec(&mut self, id: ParamId, x: Var) -> Var {
        let w = self.params.get(id);
        let xv = &self.nodes[x.0].value;
        debug_assert_eq!(
            w.cols,
            xv.len(),
            "matvec shape mismatch for {}",
            self.params.name(id)
        );
        let value = (0..w.rows)
            .map(|r| w.row(r).iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        self.push(Op::MatVec { param: id, x }, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::Add(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        self.push(Op::Mul(a, b), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.iter().map(|&x| sigmoid(x)).collect();
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a), value)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::new();
        for p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(Op::Concat(parts.to_vec()), value)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.nodes[x.0].value[start..start + len].to_vec();
        self.push(Op::Slice { x, start }, value)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let d = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .sum();
        self.push(Op::Dot(a, b), vec![d])
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax(&self.nodes[a.0].value);
        self.push(Op::Softmax(a), value)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let xs = &self.nodes[a.0].value;
        let lse = log_sum_exp(xs);
        let value = xs.iter().map(|x| x - lse).collect();
        self.push(Op::LogSoftmax(a), value)
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Var {
        let value = vec![self.nodes[x.0].value[index]];
        self.push(Op::Pick { x, index }, value)
    }

    /// `sum_i weights[i] * items[i]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Var {
        let w = &self.nodes[weights.0].value;
        debug_assert_eq!(w.len(), items.len());
        let dim = self.nodes[items[0].0].value.len();
        let mut value = vec![0.0; dim];
        for (wi, item) in w.iter().zip(items) {
            for (acc, x) in value.iter_mut().zip(&self.nodes[item.0].value) {
                *acc += wi * x;
            }
        }
        self.push(
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
            value,
        )
    }

    /// Back-propagates the given output cotangents into `grads`.
    pub fn backward(&self, seeds: &[(Var, Vec<f64>)], grads: &mut Gradients) {
        self.backward_with_inputs(seeds, grads);
    }

    /// Like [`Tape::backward`], but also returns the gradient that reached each
    /// input (constant) node, keyed by node.
    pub fn backward_with_inputs(
        &self,
        seeds: &[(Var, Vec<f64>)],
        grads: &mut Gradients,
    ) -> Vec<(Var, Vec<f64>)> {
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut max_seed = 0;
        for (v, g) in seeds {
            debug_assert_eq!(g.len(), self.nodes[v.0].value.len());
            accumulate(&mut adj[v.0], g);
            max_seed = max_seed.max(v.0 + 1);
        }
        let mut input_grads = Vec::new();
        for i in (0..max_seed).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => input_grads.push((Var(i), g)),
                Op::Param(id) => {
                    for (acc, x) in grads.tensors[id.0].data.iter_mut().zip(&g) {
                        *acc += x;
                    }
                }
                Op::Embed { param, row, scale } => {
                    let t = &mut grads.tensors[param.0];
                    let cols = t.cols;
                    for (acc, x) in t.data[row * cols..(row + 1) * cols].iter_mut().zip(&g) {
                        *acc += scale * x;
                    }
                }
                Op::MatVec { param, x } => {
                    let w = self.params.get(*param);
                    let xv = &self.nodes[x.0].value;
                    let gw = &mut grads.tensors[param.0];
                    let mut gx = vec![0.0; w.cols];
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        let wrow = w.row(r);
                        let grow = &mut gw.data[r * w.cols..(r + 1) * w.cols];
                        for c in 0..w.cols {
                            grow[c] += gr * xv[c];
                            gx[c] += gr * wrow[c];
                        }
                    }
                    accumulate(&mut adj[x.0], &gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[a.0], &g);
                    accumulate(&mut adj[b.0], &g);
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    accumulate(&mut adj[a.0], &ga);
                    accumulate(&mut adj[b.0], &gb);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(x, s)| x * s * (1.0 - s))
                        .collect();
                    accumulate(&mut adj[a.0], &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(x, t)| x * (1.0 - t * t))
                        .collect();
                    accumulate(&mut adj[a.0], &ga);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        accumulate(&mut adj[p.0], &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.nodes[x.0].value.len();
                    let slot = adj[x.0].get_or_insert_with(|| vec![0.0; n]);
                    for (acc, v) in slot[*start..*start + g.len()].iter_mut().zip(&g) {
                        *acc += v;
                    }
                }
                Op::Dot(a, b) => {
                    let s = g[0];
                    let ga: Vec<f64> = self.nodes[b.0].value.iter().map(|y| s * y).collect();
                    let gb: Vec<f64> = self.nodes[a.0].value.iter().map(|x| s * x).collect();
                    accumulate(&mut adj[a.0], &ga);
                    accumulate(&mut adj[b.0], &gb);
                }
                Op::Softmax(a) => {
                    let p = &node.value;
                    let gp: f64 = g.iter().zip(p).map(|(x, y)| x * y).sum();
                    let ga: Vec<f64> = g.iter().zip(p).map(|(x, y)| y * (x - gp)).collect();
                    accumulate(&mut adj[a.0], &ga);
                }
                Op::LogSoftmax(a) => {
                    let total: f64 = g.iter().sum();
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(x, l)| x - l.exp() * total)
                        .collect();
                    accumulate(&mut adj[a.0], &ga);
                }
                Op::Pick { x, index } => {
                    let n = self.nodes[x.0].value.len();
                    adj[x.0].get_or_insert_with(|| vec![0.0; n])[*index] += g[0];
                }
                Op::WeightedSum { weights, items } => {
                    let w = &self.nodes[weights.0].value;
                    let gw: Vec<f64> = items
                        .iter()
                        .map(|it| {
                            self.nodes[it.0]
                                .value
                                .iter()
                                .zip(&g)
                                .map(|(x, y)| x * y)
                                .sum()
                        })
                        .collect();
                    for (wi, it) in w.iter().zip(items) {
                        let gi: Vec<f64> = g.iter().map(|x| wi * x).collect();
                        accumulate(&mut adj[it.0], &gi);
                    }
                    accumulate(&mut adj[weights.0], &gw);
                }
            }
        }
        input_grads.reverse();
        input_grads
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}
