//! Numeric checks of the task-tree stability bound and of the transfer and
//! distribution-gap quantities.
//!
//! The stability bound is stated for the shared-weight computation-tree
//! encoder ([`computation_tree_forward`]): with `C1 = Cσ‖W1‖`,
//! `C2 = Cσ‖W2‖` and subtree information `x^(l)`,
//!
//! ```text
//! ‖φ(T1) − φ(T2)‖ ≤ (1/nm) Σ_i Σ_j Σ_{l<L} C1 C2^l ‖x_i^(l) − x_j^(l)‖
//!                ≤ 2 B_x C1 (C2^L − 1) / (C2 − 1)
//! ```

use std::fmt;

use ndarray::{Array1, Array2, Axis};

use crate::encoder::{computation_tree_forward, param_norms, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::{feature_stats, Graph};
use crate::linalg::{norm, ridge_least_squares, with_intercept};
use crate::pretrain::{corrupt, CorruptionConfig};
use crate::rng::SeedStream;
use crate::task::{embed_tasks, mean_rows, relevant_nodes, subtree_info, TaskInstance};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub c_sigma: f64,
    pub b_w1: f64,
    pub b_w2: f64,
    pub b_x: f64,
    pub depth: usize,
}

impl BoundConstants {
    pub fn c1(&self) -> f64 {
        self.c_sigma * self.b_w1
    }

    pub fn c2(&self) -> f64 {
        self.c_sigma * self.b_w2
    }
}

/// `2 B_x C1 (C2^L − 1)/(C2 − 1)`, and its limit `2 B_x C1 L` at `C2 = 1`.
pub fn global_bound(c: &BoundConstants) -> f64 {
    let (c1, c2) = (c.c1(), c.c2());
    let geom = if c2 == 1.0 {
        c.depth as f64
    } else {
        (c2.powi(c.depth as i32) - 1.0) / (c2 - 1.0)
    };
    2.0 * c.b_x * c1 * geom
}

/// Relative slack in [`StabilityReport::holds`]. With a single node per
/// side and depth 1 the pairwise bound is attained exactly, so the two
/// sides can differ in the last bit.
pub const CHAIN_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub delta: f64,
    pub pairwise_bound: f64,
    pub global_bound: f64,
    /// `C1 C2^l · mean_ij ‖x_i^(l) − x_j^(l)‖` for `l = 0..L−1`.
    pub layer_terms: Vec<f64>,
    pub constants: BoundConstants,
}

impl StabilityReport {
    /// Whether `delta ≤ pairwise_bound ≤ global_bound`, up to
    /// [`CHAIN_RTOL`] of rounding where a bound is attained.
    pub fn holds(&self) -> bool {
        let le = |a: f64, b: f64| a <= b + CHAIN_RTOL * a.abs().max(b.abs());
        le(self.delta, self.pairwise_bound) && le(self.pairwise_bound, self.global_bound)
    }
}

impl fmt::Display for StabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.constants;
        writeln!(f, "delta {:?}", self.delta)?;
        writeln!(f, "pairwise_bound {:?}", self.pairwise_bound)?;
        writeln!(f, "global_bound {:?}", self.global_bound)?;
        for (l, t) in self.layer_terms.iter().enumerate() {
            writeln!(f, "layer_term {l} {t:?}")?;
        }
        write!(
            f,
            "constants c_sigma={:?} b_w1={:?} b_w2={:?} b_x={:?} depth={}",
            c.c_sigma, c.b_w1, c.b_w2, c.b_x, c.depth
        )
    }
}

/// Sum in ascending order, so the result depends only on the multiset of terms.
fn canonical_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

/// Exact task-tree distance and both bounds for two task-trees of depth `depth`.
///
/// `params` must have tied weights and zero dropout. Swapping the two
/// task-trees leaves every reported number bit-identical.
pub fn stability_check(
    g1: &Graph,
    task1: &TaskInstance,
    g2: &Graph,
    task2: &TaskInstance,
    params: &EncoderParams,
    depth: usize,
) -> Result<StabilityReport> {
    if !params.tied_weights {
        return Err(Error::Contract("stability bound assumes tied layer weights".into()));
    }
    if params.dropout != 0.0 {
        return Err(Error::Contract("stability bound assumes no dropout".into()));
    }
    let s1 = relevant_nodes(task1, g1)?;
    let s2 = relevant_nodes(task2, g2)?;
    let phi1 = mean_rows(&computation_tree_forward(params, g1, depth)?, std::slice::from_ref(&s1));
    let phi2 = mean_rows(&computation_tree_forward(params, g2, depth)?, std::slice::from_ref(&s2));
    let delta = norm((&phi1 - &phi2).row(0));

    let (b_w1, b_w2) = param_norms(params);
    let b_x = feature_stats(g1).max_row_norm.max(feature_stats(g2).max_row_norm);
    let constants = BoundConstants {
        c_sigma: params.activation.lipschitz(),
        b_w1,
        b_w2,
        b_x,
        depth,
    };
    let info1 = subtree_info(g1, depth)?;
    let info2 = subtree_info(g2, depth)?;
    let pairs = (s1.len() * s2.len()) as f64;
    let mut layer_terms = Vec::with_capacity(depth);
    for l in 0..depth {
        let (x1, x2) = (&info1.levels[l], &info2.levels[l]);
        let mut dists = Vec::with_capacity(s1.len() * s2.len());
        for &i in &s1 {
            for &j in &s2 {
                dists.push(norm((&x1.row(i) - &x2.row(j)).view()));
            }
        }
        let weight = constants.c1() * constants.c2().powi(l as i32);
        layer_terms.push(weight * canonical_sum(dists) / pairs);
    }
    let pairwise_bound = canonical_sum(layer_terms.clone());
    Ok(StabilityReport {
        delta,
        pairwise_bound,
        global_bound: global_bound(&constants),
        layer_terms,
        constants,
    })
}

/// A graph and the tasks sampled from it.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub graph: &'a Graph,
    pub tasks: &'a [TaskInstance],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferProbeConfig {
    /// Corruption producing the reconstructed view.
    pub corruption: CorruptionConfig,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for TransferProbeConfig {
    fn default() -> Self {
        Self {
            corruption: CorruptionConfig::default(),
            ridge: 1e-8,
            seed: 0,
        }
    }
}

/// Differences between two encoders `a − b`: best-linear-head downstream
/// squared risk (`lhs`) and best-linear-head reconstruction loss (`rhs`).
#[derive(Debug, Clone, PartialEq)]
pub struct TransferProbeReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs^(1/2)`, absent unless `rhs > 0`.
    pub ratio: Option<f64>,
}

impl fmt::Display for TransferProbeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lhs {:?} rhs {:?} ratio ", self.lhs, self.rhs)?;
        match self.ratio {
            Some(r) => write!(f, "{r:?}"),
            None => f.write_str("none"),
        }
    }
}

fn one_hot(tasks: &[TaskInstance]) -> Array2<f64> {
    let c = tasks.iter().map(|t| t.label + 1).max().unwrap_or(0);
    let mut y = Array2::zeros((tasks.len(), c));
    for (k, t) in tasks.iter().enumerate() {
        y[[k, t.label]] = 1.0;
    }
    y
}

/// Minimum over affine heads of the mean squared one-hot regression error.
pub fn downstream_risk(phi: &EncoderParams, data: Sample<'_>, ridge: f64) -> Result<f64> {
    let z = embed_tasks(phi, data.graph, data.tasks)?;
    Ok(ridge_least_squares(with_intercept(z.view()).view(), one_hot(data.tasks).view(), ridge)?.1)
}

/// Minimum over affine maps `g` of the mean `‖g(φ(T̂)) − φ(T)‖²`, with `T̂`
/// the corrupted view.
pub fn reconstruction_risk(phi: &EncoderParams, data: Sample<'_>, cfg: &TransferProbeConfig) -> Result<f64> {
    let view = corrupt(data.graph, &cfg.corruption, &mut SeedStream::new(cfg.seed).rng_for("probe"))?;
    let target = embed_tasks(phi, data.graph, data.tasks)?;
    let source = embed_tasks(phi, &view, data.tasks)?;
    Ok(ridge_least_squares(with_intercept(source.view()).view(), target.view(), cfg.ridge)?.1)
}

pub fn transfer_probe(
    phi_a: &EncoderParams,
    phi_b: &EncoderParams,
    pretrain_data: Sample<'_>,
    downstream_data: Sample<'_>,
    cfg: &TransferProbeConfig,
) -> Result<TransferProbeReport> {
    if phi_a.output_dim() != phi_b.output_dim() {
        return Err(Error::Dimension("encoders differ in output width".into()));
    }
    if pretrain_data.tasks.is_empty() || downstream_data.tasks.is_empty() {
        return Err(Error::Config("transfer probe needs non-empty samples".into()));
    }
    let lhs = downstream_risk(phi_a, downstream_data, cfg.ridge)?
        - downstream_risk(phi_b, downstream_data, cfg.ridge)?;
    let rhs = reconstruction_risk(phi_a, pretrain_data, cfg)? - reconstruction_risk(phi_b, pretrain_data, cfg)?;
    let ratio = (rhs > 0.0).then(|| lhs / rhs.sqrt());
    Ok(TransferProbeReport { lhs, rhs, ratio })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionGapReport {
    pub gap: f64,
}

fn mean_embedding(phi: &EncoderParams, data: Sample<'_>) -> Result<Array1<f64>> {
    if data.tasks.is_empty() {
        return Err(Error::Config("distribution gap needs non-empty samples".into()));
    }
    let z = embed_tasks(phi, data.graph, data.tasks)?;
    Ok(z.mean_axis(Axis(0)).expect("non-empty"))
}

/// Distance between the mean task-tree embeddings of two samples.
pub fn distribution_gap(phi: &EncoderParams, data_p: Sample<'_>, data_t: Sample<'_>) -> Result<DistributionGapReport> {
    let mp = mean_embedding(phi, data_p)?;
    let mt = mean_embedding(phi, data_t)?;
    Ok(DistributionGapReport {
        gap: norm((&mp - &mt).view()),
    })
}
