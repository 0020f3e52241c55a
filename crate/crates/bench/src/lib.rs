//! Shared fixtures for the criterion benches.

use ndarray::{Array1, Array2, Axis};
use rand::seq::index;
use tasktree_core::encoder::{forward, init_params, Mode};
use tasktree_core::rng::SeedStream;
use tasktree_core::synth::{sbm_graph, SbmConfig};
use tasktree_core::task::{ego_nodes, extract_ego_subgraph};
use tasktree_core::{EncoderConfig, EncoderParams, Graph, Result, TaskInstance};

pub const FEATURE_DIM: usize = 8;

/// Ten-community SBM with roughly seven neighbors per node and a random
/// batch of `batch` node tasks.
pub fn sbm_fixture(nodes: usize, batch: usize, seed: u64) -> (Graph, Vec<TaskInstance>) {
    let root = SeedStream::new(seed);
    let cfg = SbmConfig {
        classes: 10,
        nodes_per_class: nodes.div_ceil(10),
        p_in: 0.01,
        p_out: 0.0005,
        ..SbmConfig::default()
    };
    let (g, labels) = sbm_graph(&cfg, FEATURE_DIM, &Array1::zeros(FEATURE_DIM), &mut root.rng_for("graph"))
        .expect("valid SBM config");
    let tasks = index::sample(&mut root.rng_for("batch"), g.num_nodes(), batch.min(g.num_nodes()))
        .into_iter()
        .map(|v| TaskInstance::node(v, labels[v]))
        .collect();
    (g, tasks)
}

pub fn encoder(hidden: usize, layers: usize) -> EncoderParams {
    let cfg = EncoderConfig { hidden_dim: hidden, num_layers: layers, dropout: 0.0, ..EncoderConfig::default() };
    init_params(FEATURE_DIM, &cfg, 0).expect("valid encoder config")
}

/// Embeds each task by encoding its own `hops`-hop ego subgraph and
/// averaging the encoder output at the task's nodes.
pub fn ego_subgraph_embeddings(params: &EncoderParams, g: &Graph, tasks: &[TaskInstance], hops: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((tasks.len(), params.output_dim()));
    for (row, t) in tasks.iter().enumerate() {
        let nodes = ego_nodes(g, &t.nodes, hops);
        let sub = extract_ego_subgraph(g, &t.nodes, hops)?;
        let z = forward(params, &sub, Mode::Eval)?;
        let local: Vec<usize> = t.nodes.iter().map(|v| nodes.binary_search(v).expect("root in ego set")).collect();
        out.row_mut(row).assign(&z.select(Axis(0), &local).mean_axis(Axis(0)).expect("task has nodes"));
    }
    tasktree_core::encoder::project(params, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tasktree_core::task::embed_tasks;

    #[test]
    fn ego_pipeline_matches_task_tree_embeddings() {
        let (g, tasks) = sbm_fixture(400, 32, 1);
        let p = encoder(8, 2);
        let a = embed_tasks(&p, &g, &tasks).unwrap();
        let b = ego_subgraph_embeddings(&p, &g, &tasks, 2).unwrap();
        let diff = (&a - &b).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(diff < 1e-12, "{diff}");
    }
}
