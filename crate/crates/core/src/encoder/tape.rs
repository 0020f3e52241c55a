//! Minimal reverse-mode tape over matrix-valued nodes.
//!
//! Only the operators the encoder and its objectives need are recorded.
//! Scalars are `1 × 1` matrices. A [`Op::StopGrad`] node forwards its
//! input's value but propagates nothing backward.

use ndarray::{Array2, Axis, Zip};

use crate::graph::Adjacency;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<'a> {
    Leaf,
    Const,
    /// `x · wᵀ`
    Linear { x: Var, w: Var },
    /// Row-broadcast add of a `1 × h` bias.
    AddBias { x: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, s: f64 },
    MeanAgg { x: Var, adj: &'a Adjacency },
    Relu { x: Var },
    Mask { x: Var, mask: Array2<f64> },
    GatherMean { x: Var, groups: &'a [Vec<usize>] },
    RowNormalize { x: Var, eps: f64 },
    StopGrad,
    VStack { a: Var, b: Var },
    /// `scale · Σ ‖a_i − b_i‖²`
    SqDist { a: Var, b: Var, scale: f64 },
    /// `(1/B) Σ_i KL(softmax(mean_i x_i) ‖ softmax(x_i))`
    KlToMean { x: Var },
    /// Mean softmax cross-entropy against integer labels.
    SoftmaxXent { logits: Var, labels: &'a [usize] },
}

struct Node<'a> {
    value: Array2<f64>,
    op: Op<'a>,
    /// Whether any leaf reaches this node through differentiable ops.
    live: bool,
}

/// Recorded computation.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

fn softmax_row(row: ndarray::ArrayView1<f64>) -> (Vec<f64>, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let lse = max + sum.ln();
    (exps.into_iter().map(|e| e / sum).collect(), lse)
}

pub(crate) fn kl_to_mean(x: &Array2<f64>) -> f64 {
    let b = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
    let (h, lse_h) = softmax_row(mean.view());
    let mut total = 0.0;
    for row in x.rows() {
        let (_, lse_z) = softmax_row(row);
        for j in 0..h.len() {
            if h[j] > 0.0 {
                let log_h = mean[j] - lse_h;
                let log_z = row[j] - lse_z;
                total += h[j] * (log_h - log_z);
            }
        }
    }
    total / b
}

fn scalar(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op<'a>) -> Var {
        let live = match &op {
            Op::Leaf => true,
            Op::Const | Op::StopGrad => false,
            Op::Linear { x: a, w: b }
            | Op::AddBias { x: a, b }
            | Op::Add { a, b }
            | Op::VStack { a, b }
            | Op::SqDist { a, b, .. } => self.live(*a) || self.live(*b),
            Op::Scale { x, .. }
            | Op::MeanAgg { x, .. }
            | Op::Relu { x }
            | Op::Mask { x, .. }
            | Op::GatherMean { x, .. }
            | Op::RowNormalize { x, .. }
            | Op::KlToMean { x } => self.live(*x),
            Op::SoftmaxXent { logits, .. } => self.live(*logits),
        };
        self.nodes.push(Node { value, op, live });
        Var(self.nodes.len() - 1)
    }

    fn live(&self, v: Var) -> bool {
        self.nodes[v.0].live
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Const)
    }

    pub fn linear(&mut self, x: Var, w: Var) -> Var {
        let v = self.value(x).dot(&self.value(w).t());
        self.push(v, Op::Linear { x, w })
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let v = self.value(x) + &self.value(b).row(0);
        self.push(v, Op::AddBias { x, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add { a, b })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x) * s;
        self.push(v, Op::Scale { x, s })
    }

    pub fn mean_aggregate(&mut self, x: Var, adj: &'a Adjacency) -> Var {
        let v = crate::task::mean_aggregate(adj, self.value(x));
        self.push(v, Op::MeanAgg { x, adj })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| a.max(0.0));
        self.push(v, Op::Relu { x })
    }

    pub fn mask(&mut self, x: Var, mask: Array2<f64>) -> Var {
        let v = self.value(x) * &mask;
        self.push(v, Op::Mask { x, mask })
    }

    pub fn gather_mean(&mut self, x: Var, groups: &'a [Vec<usize>]) -> Var {
        let v = crate::task::mean_rows(self.value(x), groups);
        self.push(v, Op::GatherMean { x, groups })
    }

    pub fn row_normalize(&mut self, x: Var, eps: f64) -> Var {
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let n = row.dot(&row).sqrt();
            row /= n + eps;
        }
        self.push(v, Op::RowNormalize { x, eps })
    }

    pub fn stop_grad(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.push(v, Op::StopGrad)
    }

    pub fn vstack(&mut self, a: Var, b: Var) -> Var {
        let v = ndarray::concatenate(Axis(0), &[self.value(a).view(), self.value(b).view()])
            .expect("vstack needs equal column counts");
        self.push(v, Op::VStack { a, b })
    }

    pub fn sq_dist(&mut self, a: Var, b: Var, scale: f64) -> Var {
        let d = self.value(a) - self.value(b);
        let v = scale * d.mapv(|x| x * x).sum();
        self.push(scalar(v), Op::SqDist { a, b, scale })
    }

    pub fn kl_to_mean(&mut self, x: Var) -> Var {
        let v = kl_to_mean(self.value(x));
        self.push(scalar(v), Op::KlToMean { x })
    }

    pub fn softmax_xent(&mut self, logits: Var, labels: &'a [usize]) -> Var {
        let l = self.value(logits);
        let mut total = 0.0;
        for (row, &y) in l.rows().into_iter().zip(labels) {
            let (_, lse) = softmax_row(row);
            total += lse - row[y];
        }
        let v = total / labels.len() as f64;
        self.push(scalar(v), Op::SoftmaxXent { logits, labels })
    }

    /// Smallest `|input|` over all ReLU nodes, `None` if there are none.
    pub fn min_abs_relu_input(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu { x } => Some(self.value(x).iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))),
                _ => None,
            })
            .reduce(f64::min)
    }

    /// Backpropagates from scalar `root`; returns per-node gradients
    /// (`None` for nodes the root does not depend on through differentiable paths).
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones(self.value(root).dim()));

        let live: Vec<bool> = self.nodes.iter().map(|n| n.live).collect();
        let acc = |grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>| {
            if !live[v.0] {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        };

        for idx in (0..=root.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Const => {}
                Op::StopGrad => {}
                Op::Linear { x, w } => {
                    if live[x.0] {
                        acc(&mut grads, *x, gy.dot(self.value(*w)));
                    }
                    if live[w.0] {
                        acc(&mut grads, *w, gy.t().dot(self.value(*x)));
                    }
                }
                Op::AddBias { x, b } => {
                    let gb = gy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *x, gy.clone());
                }
                Op::Add { a, b } => {
                    acc(&mut grads, *b, gy.clone());
                    acc(&mut grads, *a, gy.clone());
                }
                Op::Scale { x, s } => acc(&mut grads, *x, &gy * *s),
                Op::MeanAgg { x, adj } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for v in 0..adj.num_nodes() {
                        let nb = adj.neighbors(v);
                        if nb.is_empty() {
                            continue;
                        }
                        let share = &gy.row(v) / nb.len() as f64;
                        for &u in nb {
                            let mut r = gx.row_mut(u);
                            r += &share;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Relu { x } => {
                    let mut gx = gy.clone();
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|g, &a| {
                            if a <= 0.0 {
                                *g = 0.0
                            }
                        });
                    acc(&mut grads, *x, gx);
                }
                Op::Mask { x, mask } => acc(&mut grads, *x, &gy * mask),
                Op::GatherMean { x, groups } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (k, group) in groups.iter().enumerate() {
                        let share = &gy.row(k) / group.len() as f64;
                        for &i in group {
                            let mut r = gx.row_mut(i);
                            r += &share;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::RowNormalize { x, eps } => {
                    let xv = self.value(*x);
                    let mut gx = Array2::zeros(xv.dim());
                    for ((xr, gr), mut out) in xv.rows().into_iter().zip(gy.rows()).zip(gx.rows_mut()) {
                        let n = xr.dot(&xr).sqrt();
                        let s = n + eps;
                        out.assign(&(&gr / s));
                        if n > 0.0 {
                            let coef = xr.dot(&gr) / (n * s * s);
                            out.scaled_add(-coef, &xr);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::VStack { a, b } => {
                    let na = self.value(*a).nrows();
                    acc(&mut grads, *a, gy.slice(ndarray::s![..na, ..]).to_owned());
                    acc(&mut grads, *b, gy.slice(ndarray::s![na.., ..]).to_owned());
                }
                Op::SqDist { a, b, scale } => {
                    let g = gy[[0, 0]];
                    let d = (self.value(*a) - self.value(*b)) * (2.0 * scale * g);
                    acc(&mut grads, *b, -&d);
                    acc(&mut grads, *a, d);
                }
                Op::KlToMean { x } => {
                    let g = gy[[0, 0]];
                    let xv = self.value(*x);
                    let bsz = xv.nrows() as f64;
                    let mean = xv.mean_axis(Axis(0)).expect("non-empty batch");
                    let (h, _) = softmax_row(mean.view());
                    let mut gx = Array2::zeros(xv.dim());
                    for (row, mut out) in xv.rows().into_iter().zip(gx.rows_mut()) {
                        let (z, _) = softmax_row(row);
                        for j in 0..h.len() {
                            out[j] = g * (z[j] - h[j]) / bsz;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SoftmaxXent { logits, labels } => {
                    let g = gy[[0, 0]];
                    let lv = self.value(*logits);
                    let n = labels.len() as f64;
                    let mut gl = Array2::zeros(lv.dim());
                    for ((row, mut out), &y) in lv.rows().into_iter().zip(gl.rows_mut()).zip(labels.iter()) {
                        let (p, _) = softmax_row(row);
                        for j in 0..p.len() {
                            out[j] = g * (p[j] - if j == y { 1.0 } else { 0.0 }) / n;
                        }
                    }
                    acc(&mut grads, *logits, gl);
                }
            }
            grads[idx] = Some(gy);
        }
        Gradients { grads }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when no differentiable path reaches it.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient with respect to `v`, zeros of `like`'s shape when unreached.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}
