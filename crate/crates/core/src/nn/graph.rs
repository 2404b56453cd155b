//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters are read from
//! a [`ParamStore`] and their gradients are collected by [`Graph::backward`].

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Array2, Axis};

use super::params::{Gradients, ParamId, ParamStore};

pub type Mat = Array2<f64>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A per-row objective over aligned (anchor, positive, negative) rows with a
/// closed-form gradient.
pub trait TripletObjective: Send + Sync {
    fn loss(&self, anchor: &[f64], positive: &[f64], negative: &[f64]) -> f64;
    /// Gradients with respect to anchor, positive and negative.
    fn gradient(&self, anchor: &[f64], positive: &[f64], negative: &[f64]) -> [Vec<f64>; 3];
}

enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Gather(Var, Vec<usize>),
    Shift(Var, isize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Mean(Var),
    BceWithLogits(Var, Mat),
    SoftmaxCrossEntropy(Var, Vec<usize>),
    MeanSquaredError(Var, Mat),
    Triplet(Var, Var, Var, Arc<dyn TripletObjective>),
}

struct Node {
    value: Mat,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Const)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param(id));
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    /// Adds the 1×m row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a single row");
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    /// Selects rows of `a` (repeats allowed).
    pub fn gather(&mut self, a: Var, rows: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), rows);
        self.push(value, Op::Gather(a, rows.to_vec()))
    }

    /// `out[i] = a[i - shift]`, zero where out of range.
    pub fn shift(&mut self, a: Var, shift: isize) -> Var {
        let src = self.value(a);
        let n = src.nrows() as isize;
        let mut value = Mat::zeros(src.dim());
        for i in 0..n {
            let j = i - shift;
            if (0..n).contains(&j) {
                value.row_mut(i as usize).assign(&src.row(j as usize));
            }
        }
        self.push(value, Op::Shift(a, shift))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    /// n×m → 1×m column means.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let value = src
            .mean_axis(Axis(0))
            .expect("mean of empty matrix")
            .insert_axis(Axis(0));
        self.push(value, Op::MeanRows(a))
    }

    /// Mean of all entries as a 1×1 node.
    pub fn mean(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).mean().expect("mean of empty matrix"));
        self.push(value, Op::Mean(a))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Mat) -> Var {
        let z = self.value(logits);
        assert_eq!(z.dim(), targets.dim());
        let total: f64 = z
            .iter()
            .zip(targets.iter())
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let value = Mat::from_elem((1, 1), total / z.len() as f64);
        self.push(value, Op::BceWithLogits(logits, targets))
    }

    /// Mean softmax cross-entropy over rows, one target class per row.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.nrows(), targets.len());
        let mut total = 0.0;
        for (row, &t) in z.rows().into_iter().zip(targets) {
            total += log_sum_exp(row.as_slice().expect("standard layout")) - row[t];
        }
        let value = Mat::from_elem((1, 1), total / targets.len() as f64);
        self.push(value, Op::SoftmaxCrossEntropy(logits, targets.to_vec()))
    }

    pub fn mean_squared_error(&mut self, pred: Var, target: Mat) -> Var {
        let p = self.value(pred);
        assert_eq!(p.dim(), target.dim());
        let value = Mat::from_elem((1, 1), (p - &target).mapv(|d| d * d).mean().unwrap_or(0.0));
        self.push(value, Op::MeanSquaredError(pred, target))
    }

    /// Applies `objective` row-wise, producing a t×1 column of losses.
    pub fn triplet(
        &mut self,
        anchor: Var,
        positive: Var,
        negative: Var,
        objective: Arc<dyn TripletObjective>,
    ) -> Var {
        let (a, p, n) = (self.value(anchor), self.value(positive), self.value(negative));
        assert_eq!(a.dim(), p.dim());
        assert_eq!(a.dim(), n.dim());
        let mut value = Mat::zeros((a.nrows(), 1));
        for i in 0..a.nrows() {
            value[[i, 0]] = objective.loss(
                a.row(i).as_slice().expect("standard layout"),
                p.row(i).as_slice().expect("standard layout"),
                n.row(i).as_slice().expect("standard layout"),
            );
        }
        self.push(value, Op::Triplet(anchor, positive, negative, objective))
    }

    /// Back-propagates from the 1×1 node `loss` and returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::ones((1, 1)));
        let mut out = Gradients::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *row, dr);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::Tanh(a) => {
                    let d = &g * &node.value.mapv(|y| 1.0 - y * y);
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = &g * &node.value.mapv(|y| y * (1.0 - y));
                    acc(&mut grads, *a, d);
                }
                Op::Gather(a, rows) => {
                    let mut d = Mat::zeros(self.value(*a).dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut target = d.row_mut(r);
                        target += &g.row(k);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Shift(a, shift) => {
                    let n = g.nrows() as isize;
                    let mut d = Mat::zeros(g.dim());
                    for i in 0..n {
                        let j = i - shift;
                        if (0..n).contains(&j) {
                            d.row_mut(j as usize).assign(&g.row(i as usize));
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).nrows();
                    let row = &g / n as f64;
                    let d = row.broadcast(self.value(*a).dim()).expect("broadcast").to_owned();
                    acc(&mut grads, *a, d);
                }
                Op::Mean(a) => {
                    let src = self.value(*a);
                    let d = Mat::from_elem(src.dim(), g[[0, 0]] / src.len() as f64);
                    acc(&mut grads, *a, d);
                }
                Op::BceWithLogits(logits, targets) => {
                    let z = self.value(*logits);
                    let scale = g[[0, 0]] / z.len() as f64;
                    let mut d = z.mapv(sigmoid) - targets;
                    d *= scale;
                    acc(&mut grads, *logits, d);
                }
                Op::SoftmaxCrossEntropy(logits, targets) => {
                    let z = self.value(*logits);
                    let scale = g[[0, 0]] / targets.len() as f64;
                    let mut d = Mat::zeros(z.dim());
                    for (i, &t) in targets.iter().enumerate() {
                        let row = z.row(i);
                        let lse = log_sum_exp(row.as_slice().expect("standard layout"));
                        for j in 0..z.ncols() {
                            d[[i, j]] = (row[j] - lse).exp() * scale;
                        }
                        d[[i, t]] -= scale;
                    }
                    acc(&mut grads, *logits, d);
                }
                Op::MeanSquaredError(pred, target) => {
                    let p = self.value(*pred);
                    let scale = 2.0 * g[[0, 0]] / p.len() as f64;
                    acc(&mut grads, *pred, (p - target) * scale);
                }
                Op::Triplet(a, p, n, objective) => {
                    let (va, vp, vn) = (self.value(*a), self.value(*p), self.value(*n));
                    let mut da = Mat::zeros(va.dim());
                    let mut dp = Mat::zeros(vp.dim());
                    let mut dn = Mat::zeros(vn.dim());
                    for i in 0..va.nrows() {
                        let w = g[[i, 0]];
                        if w == 0.0 {
                            continue;
                        }
                        let [ga, gp, gn] = objective.gradient(
                            va.row(i).as_slice().expect("standard layout"),
                            vp.row(i).as_slice().expect("standard layout"),
                            vn.row(i).as_slice().expect("standard layout"),
                        );
                        for j in 0..va.ncols() {
                            da[[i, j]] = w * ga[j];
                            dp[[i, j]] = w * gp[j];
                            dn[[i, j]] = w * gn[j];
                        }
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *p, dp);
                    acc(&mut grads, *n, dn);
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
