//! Two-view reconstruction pretraining with the domain regularizer.

use std::fmt;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::Dataset;
use crate::encoder::tape::{kl_to_mean, Tape};
use crate::encoder::{
    init_params, pretrain_on_tape, reconstruction_on_tape, EncoderConfig, EncoderParams, Mode,
    ParamVars,
};
use crate::error::{Error, Result};
use crate::graph::{disjoint_union, sample_adjacency, Adjacency, Graph};
use crate::optim::AdamW;
use crate::rng::SeedStream;
use crate::task::{localize, relevant_sets, TaskInstance};

/// Rates of the two independent corruptions used to build each view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionConfig {
    pub edge_drop_rate: f64,
    pub feature_mask_rate: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            edge_drop_rate: 0.2,
            feature_mask_rate: 0.2,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("edge_drop_rate", self.edge_drop_rate),
            ("feature_mask_rate", self.feature_mask_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} {r} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Drops each undirected edge with probability `edge_drop_rate` and zeroes
/// each feature row with probability `feature_mask_rate`.
pub fn corrupt<R: Rng + ?Sized>(g: &Graph, cfg: &CorruptionConfig, rng: &mut R) -> Result<Graph> {
    cfg.validate()?;
    let n = g.num_nodes();
    let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (u, v) in g.edges() {
        if rng.random::<f64>() < cfg.edge_drop_rate {
            continue;
        }
        lists[u].push(v);
        if u != v {
            lists[v].push(u);
        }
    }
    for l in &mut lists {
        l.sort_unstable();
    }
    let mut x = g.features().clone();
    for mut row in x.rows_mut() {
        if rng.random::<f64>() < cfg.feature_mask_rate {
            row.fill(0.0);
        }
    }
    Ok(g
        .with_adjacency_unchecked(Adjacency::from_lists(&lists))
        .with_features(x)
        .expect("row count preserved"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub fanout: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 4096,
            learning_rate: 1e-7,
            weight_decay: 1e-8,
            lambda: 10.0,
            fanout: 10,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.fanout == 0 {
            return Err(Error::Config("batch_size and fanout must be positive".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate and weight decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Epoch-mean loss terms; `total = recon + λ·kl`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:?} {:?} {:?}", self.epoch, self.recon, self.kl, self.total)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<LossBreakdown>,
}

impl fmt::Display for TrainingLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.epochs {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

/// Reconstruction objective between two batches of task-tree embeddings:
/// `(1/2n) Σ ‖ρ(g(ẑ)) − ρ(z̃)‖² + ‖ρ(g(z̃)) − ρ(ẑ)‖²` with `ρ(z) = z/(‖z‖+ε)`.
pub fn reconstruction_loss(
    params: &EncoderParams,
    z_hat: &Array2<f64>,
    z_tilde: &Array2<f64>,
) -> Result<f64> {
    if z_hat.dim() != z_tilde.dim() || z_hat.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "reconstruction needs equal non-empty shapes, got {:?} and {:?}",
            z_hat.dim(),
            z_tilde.dim()
        )));
    }
    if z_hat.ncols() != params.output_dim() {
        return Err(Error::Dimension("embedding width differs from the head".into()));
    }
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let a = tape.constant(z_hat.clone());
    let b = tape.constant(z_tilde.clone());
    let loss = reconstruction_on_tape(&mut tape, &pv, params, a, b);
    Ok(tape.scalar(loss))
}

/// `(1/B) Σ_i KL(softmax(mean z) ‖ softmax(z_i))`.
pub fn domain_regularizer(batch_z: &Array2<f64>) -> Result<f64> {
    if batch_z.nrows() == 0 {
        return Err(Error::Config("domain regularizer needs a non-empty batch".into()));
    }
    Ok(kl_to_mean(batch_z))
}

/// Tasks of several datasets over the disjoint union of their graphs.
#[derive(Debug, Clone)]
pub struct Pool {
    pub graph: Graph,
    pub tasks: Vec<TaskInstance>,
}

/// Pools every task of `datasets`; node ids are offset into the union.
pub fn pool(datasets: &[Dataset]) -> Result<Pool> {
    if datasets.len() == 1 {
        return Ok(Pool {
            graph: datasets[0].graph.clone(),
            tasks: datasets[0].tasks.clone(),
        });
    }
    let graphs: Vec<&Graph> = datasets.iter().map(|d| &d.graph).collect();
    let graph = disjoint_union(&graphs)?;
    let mut tasks = Vec::new();
    let mut offset = 0;
    for d in datasets {
        for (t, set) in d.tasks.iter().zip(relevant_sets(&d.tasks, &d.graph)?) {
            tasks.push(TaskInstance {
                kind: t.kind,
                nodes: set.into_iter().map(|v| v + offset).collect(),
                label: t.label,
                component: None,
            });
        }
        offset += d.graph.num_nodes();
    }
    Ok(Pool { graph, tasks })
}

/// Pretrains an encoder on the tasks of every dataset, mixed in shuffled
/// batches. Returns the trained parameters and the per-epoch loss log.
pub fn pretrain(
    datasets: &[Dataset],
    encoder: &EncoderConfig,
    cfg: &PretrainConfig,
    corruption: &CorruptionConfig,
) -> Result<(EncoderParams, TrainingLog)> {
    cfg.validate()?;
    corruption.validate()?;
    if datasets.is_empty() {
        return Err(Error::Config("pretraining needs at least one dataset".into()));
    }
    let pool = pool(datasets)?;
    let root = SeedStream::new(cfg.seed);
    let mut params = init_params(pool.graph.feature_dim(), encoder, root.child("init").seed())?;
    let mut log = TrainingLog::default();
    if cfg.epochs == 0 {
        return Ok((params, log));
    }
    if pool.tasks.is_empty() {
        return Err(Error::Config("pretraining batch is empty: no tasks".into()));
    }
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..pool.tasks.len()).collect();
    for epoch in 0..cfg.epochs {
        let es = root.child("epoch").indexed(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut es.rng_for("shuffle"));
        let (mut recon_sum, mut kl_sum, mut total_sum) = (0.0, 0.0, 0.0);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let bs = es.child("batch").indexed(b as u64);
            let batch: Vec<TaskInstance> = chunk.iter().map(|&i| pool.tasks[i].clone()).collect();
            let (sub, local) = localize(&pool.graph, &batch, params.num_layers)?;
            let groups = relevant_sets(&local, &sub)?;
            let mut views = Vec::with_capacity(2);
            for v in 0..2 {
                let vs = bs.child("view").indexed(v);
                let g = corrupt(&sub, corruption, &mut vs.rng_for("corrupt"))?;
                let adj = sample_adjacency(g.adjacency(), cfg.fanout, &mut vs.rng_for("sample"));
                views.push((adj, g.features().clone()));
            }
            let mut dropout = bs.rng_for("dropout");
            let mut tape = Tape::new();
            let pv = ParamVars::register(&mut tape, &params);
            let vars = pretrain_on_tape(
                &mut tape,
                &pv,
                &params,
                [(&views[0].0, &views[0].1), (&views[1].0, &views[1].1)],
                &groups,
                cfg.lambda,
                Mode::Train(&mut dropout),
            );
            let recon = tape.scalar(vars.recon);
            let kl = tape.scalar(vars.kl);
            let total = tape.scalar(vars.total);
            for (term, v) in [("reconstruction", recon), ("domain regularizer", kl), ("pretraining total", total)] {
                if !v.is_finite() {
                    return Err(Error::numeric(
                        term,
                        format!("value {v} at epoch {epoch}, batch {b}"),
                    ));
                }
            }
            let grads = pv.collect(&tape.backward(vars.total), &params);
            if !grads.all_finite() {
                return Err(Error::numeric(
                    "pretraining total",
                    format!("non-finite gradient at epoch {epoch}, batch {b}"),
                ));
            }
            opt.step_encoder(&mut params, &grads)?;
            let w = chunk.len() as f64;
            recon_sum += w * recon;
            kl_sum += w * kl;
            total_sum += w * total;
        }
        let n = pool.tasks.len() as f64;
        log.epochs.push(LossBreakdown {
            epoch,
            recon: recon_sum / n,
            kl: kl_sum / n,
            total: total_sum / n,
        });
    }
    Ok((params, log))
}
