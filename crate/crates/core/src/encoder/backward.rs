//! Exact gradients of the training objectives.

use ndarray::Array2;

use super::tape::{Tape, Var};
use super::{
    head_on_tape, node_embeddings_on_tape, project_on_tape, EncoderParams, GradientSet, Linear,
    Mode, ParamVars,
};
use crate::error::{Error, Result};
use crate::graph::{Adjacency, Graph};
use crate::task::{relevant_sets, TaskInstance};

/// Normalization offset in `ρ(z) = z / (‖z‖ + ε)`.
pub const NORMALIZE_EPS: f64 = 1e-12;

/// Loss whose gradient [`backward`] computes.
pub enum Objective<'a> {
    /// Two-view reconstruction with stop-gradient targets plus `lambda`
    /// times the domain regularizer over both views. The graph passed to
    /// [`backward`] is the first view.
    Pretrain { other_view: &'a Graph, lambda: f64 },
    /// Domain regularizer alone, on the post-projector task-tree embeddings.
    Regularizer,
    /// Mean squared distance to per-class instruction rows.
    Sft { instructions: &'a Array2<f64> },
    /// Softmax cross-entropy of a linear classifier on the embeddings.
    CrossEntropy { head: &'a Linear },
}

#[derive(Debug, Clone)]
pub struct Backward {
    pub loss: f64,
    pub grads: GradientSet,
    /// Gradient of the classifier for [`Objective::CrossEntropy`].
    pub head_grads: Option<Linear>,
    /// Reconstruction and regularizer values for [`Objective::Pretrain`].
    pub parts: Option<(f64, f64)>,
    /// Smallest `|pre-activation|` seen by any ReLU.
    pub min_abs_preactivation: Option<f64>,
}

impl<'r> Mode<'r> {
    pub(crate) fn reborrow(&mut self) -> Mode<'_> {
        match self {
            Mode::Eval => Mode::Eval,
            Mode::Train(rng) => Mode::Train(rng),
        }
    }
}

/// Post-projector task-tree embeddings recorded on the tape.
pub(crate) fn task_embeddings_on_tape<'a>(
    tape: &mut Tape<'a>,
    pv: &ParamVars,
    params: &EncoderParams,
    adj: &'a Adjacency,
    features: &Array2<f64>,
    groups: &'a [Vec<usize>],
    mode: Mode<'_>,
) -> Var {
    let x = tape.constant(features.clone());
    let z = node_embeddings_on_tape(tape, pv, params, adj, x, mode);
    let t = tape.gather_mean(z, groups);
    project_on_tape(tape, pv, params, t)
}

/// Vars of the pretraining loss: `(total, reconstruction, regularizer)`.
pub(crate) struct PretrainVars {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
}

/// `(1/2n) Σ ‖ρ(g(ẑ)) − sg ρ(z̃)‖² + ‖ρ(g(z̃)) − sg ρ(ẑ)‖²` on tape vars.
pub(crate) fn reconstruction_on_tape(
    tape: &mut Tape<'_>,
    pv: &ParamVars,
    params: &EncoderParams,
    z_hat: Var,
    z_tilde: Var,
) -> Var {
    let tgt_hat = tape.stop_grad(z_hat);
    let tgt_tilde = tape.stop_grad(z_tilde);
    reconstruction_split_on_tape(tape, pv, params, [z_hat, z_tilde], [tgt_hat, tgt_tilde])
}

/// Reconstruction with the predictor inputs `online` and the target inputs
/// `targets` given as separate vars; the targets enter only through
/// stop-gradient nodes.
fn reconstruction_split_on_tape(
    tape: &mut Tape<'_>,
    pv: &ParamVars,
    params: &EncoderParams,
    online: [Var; 2],
    targets: [Var; 2],
) -> Var {
    let n = tape.value(online[0]).nrows() as f64;
    let mut terms = Vec::with_capacity(2);
    for (src, tgt) in [(online[0], targets[1]), (online[1], targets[0])] {
        let pred = head_on_tape(tape, pv, params, src);
        let pred = tape.row_normalize(pred, NORMALIZE_EPS);
        let t = tape.stop_grad(tgt);
        let t = tape.row_normalize(t, NORMALIZE_EPS);
        terms.push(tape.sq_dist(pred, t, 1.0 / (2.0 * n)));
    }
    tape.add(terms[0], terms[1])
}

/// Gradients of the reconstruction loss with respect to its embedding inputs.
#[derive(Debug, Clone)]
pub struct ReconstructionGradients {
    pub loss: f64,
    /// `∂/∂ẑ, ∂/∂z̃` through the predictor branches.
    pub online: [Array2<f64>; 2],
    /// `∂/∂ẑ, ∂/∂z̃` through the target branches; zero by construction.
    pub target: [Array2<f64>; 2],
    pub params: GradientSet,
}

/// Reconstruction loss where the predictor and target copies of `ẑ, z̃`
/// are independent tape leaves.
pub fn reconstruction_gradients(
    params: &EncoderParams,
    z_hat: &Array2<f64>,
    z_tilde: &Array2<f64>,
) -> Result<ReconstructionGradients> {
    if z_hat.dim() != z_tilde.dim() || z_hat.nrows() == 0 || z_hat.ncols() != params.output_dim() {
        return Err(Error::Dimension("reconstruction inputs must share a non-empty shape matching the head".into()));
    }
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let online = [tape.leaf(z_hat.clone()), tape.leaf(z_tilde.clone())];
    let targets = [tape.leaf(z_hat.clone()), tape.leaf(z_tilde.clone())];
    let root = reconstruction_split_on_tape(&mut tape, &pv, params, online, targets);
    let loss = check_finite("reconstruction", tape.scalar(root))?;
    let g = tape.backward(root);
    let shape = z_hat.dim();
    Ok(ReconstructionGradients {
        loss,
        online: online.map(|v| g.get_or_zeros(v, shape)),
        target: targets.map(|v| g.get_or_zeros(v, shape)),
        params: pv.collect(&g, params),
    })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn pretrain_on_tape<'a>(
    tape: &mut Tape<'a>,
    pv: &ParamVars,
    params: &EncoderParams,
    views: [(&'a Adjacency, &Array2<f64>); 2],
    groups: &'a [Vec<usize>],
    lambda: f64,
    mut mode: Mode<'_>,
) -> PretrainVars {
    let z_hat = task_embeddings_on_tape(tape, pv, params, views[0].0, views[0].1, groups, mode.reborrow());
    let z_tilde = task_embeddings_on_tape(tape, pv, params, views[1].0, views[1].1, groups, mode.reborrow());
    let recon = reconstruction_on_tape(tape, pv, params, z_hat, z_tilde);
    let both = tape.vstack(z_hat, z_tilde);
    let kl = tape.kl_to_mean(both);
    let weighted = tape.scale(kl, lambda);
    let total = tape.add(recon, weighted);
    PretrainVars { total, recon, kl }
}

fn check_finite(term: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric(term, format!("loss evaluated to {v}")))
    }
}

/// Loss value and exact reverse-mode gradients for `objective` on `tasks`.
///
/// In [`Mode::Train`] dropout masks are drawn from the stream and the
/// gradient is that of the realized masks.
pub fn backward(
    params: &EncoderParams,
    g: &Graph,
    tasks: &[TaskInstance],
    objective: Objective<'_>,
    mut mode: Mode<'_>,
) -> Result<Backward> {
    params.check_features(g.feature_dim())?;
    if tasks.is_empty() {
        return Err(Error::Config("backward needs at least one task".into()));
    }
    let groups = relevant_sets(tasks, g)?;
    let labels: Vec<usize> = tasks.iter().map(|t| t.label).collect();
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);

    let mut head_vars = None;
    let mut parts = None;
    let (root, term) = match objective {
        Objective::Pretrain { other_view, lambda } => {
            params.check_features(other_view.feature_dim())?;
            if other_view.num_nodes() != g.num_nodes() {
                return Err(Error::Dimension("views must share the node set".into()));
            }
            let pvars = pretrain_on_tape(
                &mut tape,
                &pv,
                params,
                [
                    (g.adjacency(), g.features()),
                    (other_view.adjacency(), other_view.features()),
                ],
                &groups,
                lambda,
                mode.reborrow(),
            );
            let recon = check_finite("reconstruction", tape.scalar(pvars.recon))?;
            let kl = check_finite("domain regularizer", tape.scalar(pvars.kl))?;
            parts = Some((recon, kl));
            (pvars.total, "pretraining total")
        }
        Objective::Regularizer => {
            let z = task_embeddings_on_tape(&mut tape, &pv, params, g.adjacency(), g.features(), &groups, mode.reborrow());
            (tape.kl_to_mean(z), "domain regularizer")
        }
        Objective::Sft { instructions } => {
            if instructions.ncols() != params.output_dim() {
                return Err(Error::Config(format!(
                    "instruction width {} differs from embedding width {}",
                    instructions.ncols(),
                    params.output_dim()
                )));
            }
            let mut targets = Array2::zeros((tasks.len(), instructions.ncols()));
            for (k, &y) in labels.iter().enumerate() {
                if y >= instructions.nrows() {
                    return Err(Error::Config(format!("no instruction row for class {y}")));
                }
                targets.row_mut(k).assign(&instructions.row(y));
            }
            let z = task_embeddings_on_tape(&mut tape, &pv, params, g.adjacency(), g.features(), &groups, mode.reborrow());
            let t = tape.constant(targets);
            (tape.sq_dist(z, t, 1.0 / tasks.len() as f64), "sft")
        }
        Objective::CrossEntropy { head } => {
            if head.in_dim() != params.output_dim() {
                return Err(Error::Config("classifier width mismatch".into()));
            }
            if let Some(&y) = labels.iter().find(|&&y| y >= head.out_dim()) {
                return Err(Error::Config(format!("label {y} beyond {} classes", head.out_dim())));
            }
            let z = task_embeddings_on_tape(&mut tape, &pv, params, g.adjacency(), g.features(), &groups, mode.reborrow());
            let w = tape.leaf(head.weight.clone());
            let b = tape.leaf(head.bias.clone());
            head_vars = Some((w, b));
            let logits = tape.linear(z, w);
            let logits = tape.add_bias(logits, b);
            (tape.softmax_xent(logits, &labels), "cross-entropy")
        }
    };
    let loss = check_finite(term, tape.scalar(root))?;
    let grads_raw = tape.backward(root);
    let grads = pv.collect(&grads_raw, params);
    if !grads.all_finite() {
        return Err(Error::numeric(term, "non-finite gradient"));
    }
    let head_grads = head_vars.map(|(w, b)| Linear {
        weight: grads_raw.get_or_zeros(w, tape.value(w).dim()),
        bias: grads_raw.get_or_zeros(b, tape.value(b).dim()),
    });
    Ok(Backward {
        loss,
        grads,
        head_grads,
        parts,
        min_abs_preactivation: tape.min_abs_relu_input(),
    })
}
