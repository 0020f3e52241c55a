//! Mean-aggregation message-passing encoder with a linear projector and a
//! two-layer predictor head.
//!
//! Layer `l` computes `σ(W1 · z_i + W2 · mean_{j∈N(i)} z_j)` from the
//! previous layer's `z`, starting from the node features. Isolated nodes
//! aggregate to the zero vector.

mod backward;
mod checkpoint;
pub mod tape;

pub use backward::{
    backward, reconstruction_gradients, Backward, Objective, ReconstructionGradients, NORMALIZE_EPS,
};
pub(crate) use backward::{pretrain_on_tape, reconstruction_on_tape};
pub use checkpoint::{read_checkpoint, write_checkpoint, load_checkpoint, save_checkpoint};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::graph::{Adjacency, Graph};
use crate::linalg::spectral_norm;
use crate::rng::{SeedStream, StreamRng};
use tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    /// Lipschitz constant of the activation.
    pub fn lipschitz(self) -> f64 {
        1.0
    }

    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

/// Dense affine map `x ↦ x · weightᵀ + bias`. `bias` is `1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array2::zeros((1, out_dim)),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Array2::eye(dim),
            bias: Array2::zeros((1, dim)),
        }
    }

    pub fn glorot(out_dim: usize, in_dim: usize, rng: &mut StreamRng) -> Self {
        Self {
            weight: glorot(out_dim, in_dim, rng),
            bias: Array2::zeros((1, out_dim)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Dimension(format!(
                "linear map expects {} columns, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.weight.t()) + &self.bias.row(0))
    }
}

/// Self and neighbor weights of one message-passing layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// `W1`, `out × in`.
    pub w_self: Array2<f64>,
    /// `W2`, `out × in`.
    pub w_neigh: Array2<f64>,
}

impl LayerWeights {
    pub fn in_dim(&self) -> usize {
        self.w_self.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w_self.nrows()
    }
}

/// Encoder hyper-parameters. The defaults are the full-scale values; the
/// shipped example configs override them for desk-sized runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub activation: Activation,
    pub dropout: f64,
    pub tied_weights: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 768,
            num_layers: 2,
            activation: Activation::Relu,
            dropout: 0.15,
            tied_weights: false,
        }
    }
}

/// All trainable encoder state.
///
/// With `tied_weights` a single [`LayerWeights`] is stored and reused for
/// `num_layers` layers.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<LayerWeights>,
    pub num_layers: usize,
    pub projector: Linear,
    pub head_hidden: Linear,
    pub head_out: Linear,
    pub activation: Activation,
    pub tied_weights: bool,
    pub dropout: f64,
}

fn glorot(out_dim: usize, in_dim: usize, rng: &mut StreamRng) -> Array2<f64> {
    let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("finite glorot bound");
    Array2::from_shape_simple_fn((out_dim, in_dim), || dist.sample(rng))
}

/// Glorot-uniform initialization, deterministic per seed.
pub fn init_params(
    feature_dim: usize,
    cfg: &EncoderConfig,
    seed: u64,
) -> Result<EncoderParams> {
    if feature_dim == 0 || cfg.hidden_dim == 0 || cfg.num_layers == 0 {
        return Err(Error::Config("encoder dimensions must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::Config(format!("dropout {} outside [0, 1)", cfg.dropout)));
    }
    if cfg.tied_weights && feature_dim != cfg.hidden_dim {
        return Err(Error::Config(format!(
            "tied weights need feature dim {feature_dim} equal to hidden dim {}",
            cfg.hidden_dim
        )));
    }
    let mut rng = SeedStream::new(seed).rng_for("init");
    let h = cfg.hidden_dim;
    let stored = if cfg.tied_weights { 1 } else { cfg.num_layers };
    let layers = (0..stored)
        .map(|l| {
            let in_dim = if l == 0 { feature_dim } else { h };
            LayerWeights {
                w_self: glorot(h, in_dim, &mut rng),
                w_neigh: glorot(h, in_dim, &mut rng),
            }
        })
        .collect();
    let params = EncoderParams {
        layers,
        num_layers: cfg.num_layers,
        projector: Linear::glorot(h, h, &mut rng),
        head_hidden: Linear::glorot(h, h, &mut rng),
        head_out: Linear::glorot(h, h, &mut rng),
        activation: cfg.activation,
        tied_weights: cfg.tied_weights,
        dropout: cfg.dropout,
    };
    params.validate()?;
    Ok(params)
}

impl EncoderParams {
    /// `W1 = W2 = I` at every layer, identity projector and head.
    pub fn identity(dim: usize, num_layers: usize, activation: Activation) -> Self {
        Self {
            layers: (0..num_layers)
                .map(|_| LayerWeights {
                    w_self: Array2::eye(dim),
                    w_neigh: Array2::eye(dim),
                })
                .collect(),
            num_layers,
            projector: Linear::identity(dim),
            head_hidden: Linear::identity(dim),
            head_out: Linear::identity(dim),
            activation,
            tied_weights: false,
            dropout: 0.0,
        }
    }

    pub fn layer(&self, l: usize) -> &LayerWeights {
        if self.tied_weights {
            &self.layers[0]
        } else {
            &self.layers[l]
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Width of the node and task-tree embeddings.
    pub fn output_dim(&self) -> usize {
        self.projector.out_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let expected_stored = if self.tied_weights { 1 } else { self.num_layers };
        if self.num_layers == 0 || self.layers.len() != expected_stored {
            return Err(Error::Config(format!(
                "{} stored layers for {} layers (tied = {})",
                self.layers.len(),
                self.num_layers,
                self.tied_weights
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let mut width = self.feature_dim();
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.w_neigh.dim() != layer.w_self.dim() || layer.in_dim() != width {
                return Err(Error::Config(format!("layer {l} dimensions do not chain")));
            }
            width = layer.out_dim();
        }
        if self.tied_weights && self.layers[0].in_dim() != self.layers[0].out_dim() {
            return Err(Error::Config("tied weights must be square".into()));
        }
        for (name, lin) in [
            ("projector", &self.projector),
            ("head hidden", &self.head_hidden),
            ("head out", &self.head_out),
        ] {
            if lin.bias.dim() != (1, lin.out_dim()) {
                return Err(Error::Config(format!("{name} bias shape mismatch")));
            }
        }
        if self.projector.in_dim() != width
            || self.head_hidden.in_dim() != self.projector.out_dim()
            || self.head_out.in_dim() != self.head_hidden.out_dim()
        {
            return Err(Error::Config("projector/head dimensions do not chain".into()));
        }
        Ok(())
    }

    /// Parameter tensors in canonical order: per stored layer `W1, W2`, then
    /// projector weight and bias, then the two head layers' weight and bias.
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 6);
        for l in &self.layers {
            out.push(&l.w_self);
            out.push(&l.w_neigh);
        }
        for lin in [&self.projector, &self.head_hidden, &self.head_out] {
            out.push(&lin.weight);
            out.push(&lin.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 6);
        for l in &mut self.layers {
            out.push(&mut l.w_self);
            out.push(&mut l.w_neigh);
        }
        for lin in [&mut self.projector, &mut self.head_hidden, &mut self.head_out] {
            out.push(&mut lin.weight);
            out.push(&mut lin.bias);
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn check_features(&self, d: usize) -> Result<()> {
        if d != self.feature_dim() {
            return Err(Error::Config(format!(
                "encoder expects feature dim {}, graph has {d}",
                self.feature_dim()
            )));
        }
        Ok(())
    }
}

/// Accumulated `∂loss/∂θ`, one tensor per entry of [`EncoderParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub tensors: Vec<Array2<f64>>,
}

impl GradientSet {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            tensors: params.tensors().iter().map(|t| Array2::zeros(t.dim())).collect(),
        }
    }

    pub fn is_congruent(&self, params: &EncoderParams) -> bool {
        let p = params.tensors();
        p.len() == self.tensors.len() && p.iter().zip(&self.tensors).all(|(a, b)| a.dim() == b.dim())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Forward mode. Training draws inverted dropout masks from the stream.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut StreamRng),
}

/// Tape handles for every parameter tensor.
pub(crate) struct ParamVars {
    pub vars: Vec<Var>,
}

impl ParamVars {
    pub fn register(tape: &mut Tape<'_>, params: &EncoderParams) -> Self {
        Self {
            vars: params.tensors().into_iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    fn layer(&self, params: &EncoderParams, l: usize) -> (Var, Var) {
        let idx = if params.tied_weights { 0 } else { l };
        (self.vars[2 * idx], self.vars[2 * idx + 1])
    }

    fn linear(&self, params: &EncoderParams, which: usize) -> (Var, Var) {
        let base = 2 * params.layers.len() + 2 * which;
        (self.vars[base], self.vars[base + 1])
    }

    pub fn collect(&self, grads: &tape::Gradients, params: &EncoderParams) -> GradientSet {
        GradientSet {
            tensors: self
                .vars
                .iter()
                .zip(params.tensors())
                .map(|(&v, t)| grads.get_or_zeros(v, t.dim()))
                .collect(),
        }
    }
}

fn activate(tape: &mut Tape<'_>, x: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Identity => x,
    }
}

fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut StreamRng) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

/// Records the message-passing layers; returns node embeddings.
pub(crate) fn node_embeddings_on_tape<'a>(
    tape: &mut Tape<'a>,
    pv: &ParamVars,
    params: &EncoderParams,
    adj: &'a Adjacency,
    features: Var,
    mut mode: Mode<'_>,
) -> Var {
    let mut z = features;
    for l in 0..params.num_layers {
        if params.dropout > 0.0 {
            if let Mode::Train(rng) = &mut mode {
                let mask = dropout_mask(tape.value(z).dim(), params.dropout, rng);
                z = tape.mask(z, mask);
            }
        }
        let (w1, w2) = pv.layer(params, l);
        let own = tape.linear(z, w1);
        let agg = tape.mean_aggregate(z, adj);
        let neigh = tape.linear(agg, w2);
        let pre = tape.add(own, neigh);
        z = activate(tape, pre, params.activation);
    }
    z
}

pub(crate) fn project_on_tape(tape: &mut Tape<'_>, pv: &ParamVars, params: &EncoderParams, z: Var) -> Var {
    let (w, b) = pv.linear(params, 0);
    let y = tape.linear(z, w);
    tape.add_bias(y, b)
}

pub(crate) fn head_on_tape(tape: &mut Tape<'_>, pv: &ParamVars, params: &EncoderParams, z: Var) -> Var {
    let (w1, b1) = pv.linear(params, 1);
    let (w2, b2) = pv.linear(params, 2);
    let y = tape.linear(z, w1);
    let y = tape.add_bias(y, b1);
    let y = activate(tape, y, params.activation);
    let y = tape.linear(y, w2);
    tape.add_bias(y, b2)
}

/// Node embeddings for every node of `g`.
pub fn forward(params: &EncoderParams, g: &Graph, mode: Mode<'_>) -> Result<Array2<f64>> {
    forward_with_adjacency(params, g.adjacency(), g.features().view(), mode)
}

/// Forward pass over an explicit (possibly sampled) adjacency.
pub fn forward_with_adjacency(
    params: &EncoderParams,
    adj: &Adjacency,
    features: ArrayView2<f64>,
    mode: Mode<'_>,
) -> Result<Array2<f64>> {
    params.check_features(features.ncols())?;
    if features.nrows() != adj.num_nodes() {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} nodes",
            features.nrows(),
            adj.num_nodes()
        )));
    }
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let x = tape.constant(features.to_owned());
    let z = node_embeddings_on_tape(&mut tape, &pv, params, adj, x, mode);
    Ok(tape.value(z).clone())
}

/// Applies the linear projector rowwise.
pub fn project(params: &EncoderParams, embeddings: &Array2<f64>) -> Result<Array2<f64>> {
    params.projector.apply(embeddings)
}

/// The predictor head `g`: linear, activation, linear.
pub fn head_g(params: &EncoderParams, z: &Array2<f64>) -> Result<Array2<f64>> {
    let h = params.head_hidden.apply(z)?;
    let h = match params.activation {
        Activation::Relu => h.mapv(|v| v.max(0.0)),
        Activation::Identity => h,
    };
    params.head_out.apply(&h)
}

/// Largest spectral norms of `W1` and `W2` over all layers.
pub fn param_norms(params: &EncoderParams) -> (f64, f64) {
    params.layers.iter().fold((0.0, 0.0), |(a, b), l| {
        (
            f64::max(a, spectral_norm(l.w_self.view())),
            f64::max(b, spectral_norm(l.w_neigh.view())),
        )
    })
}

/// Computation-tree recursion with shared weights and raw-feature self terms:
/// `φ_1(i) = σ(W1 x_i)`, `φ_l(i) = σ(W1 x_i + W2 · mean_{k∈N(i)} φ_{l-1}(k))`.
///
/// This is the encoder form under which the stability bound in
/// [`crate::theory`] is stated; `depth` counts tree levels including the root.
pub fn computation_tree_forward(params: &EncoderParams, g: &Graph, depth: usize) -> Result<Array2<f64>> {
    if !params.tied_weights {
        return Err(Error::Contract(
            "computation-tree recursion requires tied layer weights".into(),
        ));
    }
    if depth == 0 {
        return Err(Error::Config("tree depth must be at least 1".into()));
    }
    params.check_features(g.feature_dim())?;
    let layer = &params.layers[0];
    let sigma = |m: Array2<f64>| match params.activation {
        Activation::Relu => m.mapv(|v| v.max(0.0)),
        Activation::Identity => m,
    };
    let own = g.features().dot(&layer.w_self.t());
    let mut phi = sigma(own.clone());
    for _ in 1..depth {
        let agg = crate::task::mean_aggregate(g.adjacency(), &phi);
        phi = sigma(&own + &agg.dot(&layer.w_neigh.t()));
    }
    Ok(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn table_defaults() {
        let cfg = EncoderConfig::default();
        assert_eq!((cfg.hidden_dim, cfg.num_layers, cfg.dropout), (768, 2, 0.15));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = EncoderConfig {
            hidden_dim: 16,
            ..EncoderConfig::default()
        };
        let a = init_params(5, &cfg, 3).unwrap();
        let b = init_params(5, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layers.len(), 2);
        assert_eq!(a.output_dim(), 16);
        let c = init_params(5, &cfg, 4).unwrap();
        assert_ne!(a, c);
        let bound = (6.0_f64 / 21.0).sqrt();
        assert!(a.layers[0].w_self.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn init_rejects_bad_config() {
        let cfg = EncoderConfig {
            dropout: 1.0,
            ..EncoderConfig::default()
        };
        assert!(init_params(4, &cfg, 0).is_err());
        let tied = EncoderConfig {
            hidden_dim: 8,
            tied_weights: true,
            ..EncoderConfig::default()
        };
        assert!(init_params(4, &tied, 0).is_err());
        assert!(init_params(8, &tied, 0).unwrap().layers.len() == 1);
    }

    #[test]
    fn isolated_node_identity_relu() {
        let g = Graph::new(&[], array![[2.0, -3.0]]).unwrap();
        let p = EncoderParams::identity(2, 1, Activation::Relu);
        let z = forward(&p, &g, Mode::Eval).unwrap();
        assert_eq!(z.row(0).to_vec(), vec![2.0, 0.0]);
    }

    #[test]
    fn edge_identity_symmetric() {
        let g = Graph::new(&[(0, 1)], array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let p = EncoderParams::identity(2, 1, Activation::Relu);
        let z = forward(&p, &g, Mode::Eval).unwrap();
        assert_eq!(z, array![[1.0, 1.0], [1.0, 1.0]]);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let g = Graph::new(&[], array![[1.0, 2.0, 3.0]]).unwrap();
        let p = EncoderParams::identity(2, 1, Activation::Relu);
        assert!(matches!(forward(&p, &g, Mode::Eval), Err(Error::Config(_))));
    }

    #[test]
    fn projector_cases() {
        let p = EncoderParams::identity(3, 1, Activation::Relu);
        let z = array![[1.0, -2.0, 0.5]];
        assert_eq!(project(&p, &z).unwrap(), z);
        let mut q = p.clone();
        q.projector = Linear::zeros(3, 3);
        assert_eq!(project(&q, &z).unwrap(), Array2::zeros((1, 3)));
        assert!(project(&p, &array![[1.0]]).is_err());
    }

    #[test]
    fn head_cases() {
        let p = EncoderParams::identity(3, 1, Activation::Identity);
        let z = array![[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]];
        assert_eq!(head_g(&p, &z).unwrap(), z);
        let mut q = p.clone();
        q.head_out = Linear::zeros(3, 3);
        assert_eq!(head_g(&q, &z).unwrap(), Array2::zeros((2, 3)));
    }

    #[test]
    fn norms_identity_and_diag() {
        let p = EncoderParams::identity(3, 2, Activation::Relu);
        assert!((param_norms(&p).0 - 1.0).abs() < 1e-14);
        let mut q = EncoderParams::identity(2, 1, Activation::Relu);
        q.layers[0].w_self = array![[3.0, 0.0], [0.0, 1.0]];
        assert!((param_norms(&q).0 - 3.0).abs() < 1e-14);
    }

    #[test]
    fn tree_recursion_needs_tied() {
        let g = Graph::new(&[], array![[1.0, 0.0]]).unwrap();
        let p = EncoderParams::identity(2, 1, Activation::Relu);
        assert!(matches!(computation_tree_forward(&p, &g, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let cfg = EncoderConfig {
            hidden_dim: 4,
            dropout: 0.5,
            ..EncoderConfig::default()
        };
        let p = init_params(3, &cfg, 1).unwrap();
        let g = Graph::new(&[(0, 1), (1, 2)], Array2::from_elem((3, 3), 0.7)).unwrap();
        let e1 = forward(&p, &g, Mode::Eval).unwrap();
        let e2 = forward(&p, &g, Mode::Eval).unwrap();
        assert_eq!(e1, e2);
        let mut r1 = SeedStream::new(5).rng();
        let mut r2 = SeedStream::new(5).rng();
        let t1 = forward(&p, &g, Mode::Train(&mut r1)).unwrap();
        let t2 = forward(&p, &g, Mode::Train(&mut r2)).unwrap();
        assert_eq!(t1, t2);
        assert_ne!(t1, e1);
    }
}
