//! Random fixtures and loop-based reference implementations shared by the
//! integration tests.

#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use tasktree_core::encoder::{init_params, Activation, EncoderConfig, EncoderParams};
use tasktree_core::graph::disjoint_union;
use tasktree_core::rng::{SeedStream, StreamRng};
use tasktree_core::{Graph, TaskInstance};

pub fn rng(seed: u64) -> StreamRng {
    SeedStream::new(seed).rng()
}

pub fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut StreamRng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let x: f64 = StandardNormal.sample(rng);
        scale * x
    })
}

/// Erdős–Rényi graph with Gaussian features.
pub fn random_graph(n: usize, p: f64, d: usize, scale: f64, rng: &mut StreamRng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::new(&edges, gaussian(n, d, scale, rng)).unwrap()
}

/// Disjoint union of 1-3 small random graphs, so component tasks exist.
pub fn random_multigraph(d: usize, rng: &mut StreamRng) -> Graph {
    let parts: Vec<Graph> = (0..rng.random_range(1..=3))
        .map(|_| {
            let n = rng.random_range(2..=9);
            let p = rng.random_range(0.1..0.7);
            let scale = rng.random_range(0.2..2.0);
            random_graph(n, p, d, scale, rng)
        })
        .collect();
    let refs: Vec<&Graph> = parts.iter().collect();
    disjoint_union(&refs).unwrap()
}

/// A node, edge or graph task on `g`; `kind` selects 0/1/2.
pub fn random_task_of_kind(g: &Graph, kind: usize, rng: &mut StreamRng) -> TaskInstance {
    let n = g.num_nodes();
    match kind {
        0 => TaskInstance::node(rng.random_range(0..n), 0),
        1 => {
            let u = rng.random_range(0..n);
            let mut v = rng.random_range(0..n - 1);
            if v >= u {
                v += 1;
            }
            TaskInstance::edge(u, v, 0)
        }
        _ => match g.graph_id_of_node() {
            Some(ids) if rng.random::<bool>() => {
                let c = ids.iter().copied().max().unwrap() + 1;
                TaskInstance::component(rng.random_range(0..c), 0)
            }
            _ => {
                let mut nodes: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < 0.5).collect();
                if nodes.is_empty() {
                    nodes.push(rng.random_range(0..n));
                }
                TaskInstance::graph(nodes, 0)
            }
        },
    }
}

pub fn random_task(g: &Graph, rng: &mut StreamRng) -> TaskInstance {
    let kind = rng.random_range(0..3);
    random_task_of_kind(g, kind, rng)
}

pub fn random_params(
    d: usize,
    layers: usize,
    activation: Activation,
    tied: bool,
    rng: &mut StreamRng,
) -> EncoderParams {
    let hidden = if tied { d } else { rng.random_range(2..=6) };
    let cfg = EncoderConfig {
        hidden_dim: hidden,
        num_layers: layers,
        activation,
        dropout: 0.0,
        tied_weights: tied,
    };
    init_params(d, &cfg, rng.random()).unwrap()
}

fn matvec(w: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    (0..w.nrows())
        .map(|r| (0..w.ncols()).map(|c| w[[r, c]] * x[c]).sum())
        .collect()
}

/// Message passing written with plain loops over neighbor lists. Messages
/// into node `v` come only from neighbors `u` with `sends(u)`.
pub fn naive_forward(
    params: &EncoderParams,
    neighbors: &[Vec<usize>],
    features: &Array2<f64>,
    sends: impl Fn(usize) -> bool,
) -> Vec<Vec<f64>> {
    let mut z: Vec<Vec<f64>> = features.rows().into_iter().map(|r| r.to_vec()).collect();
    for l in 0..params.num_layers {
        let layer = params.layer(l);
        let next: Vec<Vec<f64>> = (0..z.len())
            .map(|v| {
                let own = matvec(&layer.w_self, &z[v]);
                let senders: Vec<usize> = neighbors[v].iter().copied().filter(|&u| sends(u)).collect();
                let mut agg = vec![0.0; z[v].len()];
                for &u in &senders {
                    for (a, x) in agg.iter_mut().zip(&z[u]) {
                        *a += x;
                    }
                }
                if !senders.is_empty() {
                    for a in &mut agg {
                        *a /= senders.len() as f64;
                    }
                }
                let neigh = matvec(&layer.w_neigh, &agg);
                own.iter()
                    .zip(&neigh)
                    .map(|(a, b)| match params.activation {
                        Activation::Relu => (a + b).max(0.0),
                        Activation::Identity => a + b,
                    })
                    .collect()
            })
            .collect();
        z = next;
    }
    z
}

pub fn neighbor_lists(g: &Graph) -> Vec<Vec<usize>> {
    (0..g.num_nodes()).map(|v| g.neighbors(v).to_vec()).collect()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

/// Mann-Whitney AUC by enumerating every positive/negative pair.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}
