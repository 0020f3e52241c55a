//! Randomized stability suite: checks the distance/bound chain on random
//! graph pairs with tied-weight encoders.

use std::fmt;

use ndarray::Array2;
use rand::Rng;
use tasktree_core::encoder::{init_params, Activation, EncoderConfig};
use tasktree_core::graph::disjoint_union;
use tasktree_core::rng::{SeedStream, StreamRng};
use tasktree_core::theory::{stability_check, StabilityReport};
use tasktree_core::{Graph, Result, TaskInstance};

pub struct Trial {
    pub depth: usize,
    pub report: StabilityReport,
}

pub struct StabilitySuite {
    pub trials: Vec<Trial>,
}

impl StabilitySuite {
    pub fn violations(&self) -> usize {
        self.trials.iter().filter(|t| !t.report.holds()).count()
    }
}

impl fmt::Display for StabilitySuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>5} {:>5} {:>14} {:>14} {:>14} {:>5}", "trial", "depth", "delta", "pairwise", "global", "holds")?;
        for (i, t) in self.trials.iter().enumerate() {
            let r = &t.report;
            writeln!(
                f,
                "{i:>5} {:>5} {:>14.6e} {:>14.6e} {:>14.6e} {:>5}",
                t.depth,
                r.delta,
                r.pairwise_bound,
                r.global_bound,
                r.holds()
            )?;
        }
        writeln!(f, "violations {}/{}", self.violations(), self.trials.len())
    }
}

fn random_graph(d: usize, rng: &mut StreamRng) -> Graph {
    let parts: Vec<Graph> = (0..rng.random_range(1..=3))
        .map(|_| {
            let n = rng.random_range(2..=9);
            let p: f64 = rng.random_range(0.1..0.7);
            let scale: f64 = rng.random_range(0.2..2.0);
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random::<f64>() < p {
                        edges.push((u, v));
                    }
                }
            }
            let x = Array2::from_shape_simple_fn((n, d), || scale * rng.random_range(-1.0..1.0));
            Graph::new(&edges, x).expect("edges in range")
        })
        .collect();
    let refs: Vec<&Graph> = parts.iter().collect();
    disjoint_union(&refs).expect("non-empty union")
}

fn random_task(g: &Graph, rng: &mut StreamRng) -> TaskInstance {
    let n = g.num_nodes();
    match rng.random_range(0..3) {
        0 => TaskInstance::node(rng.random_range(0..n), 0),
        1 => {
            let u = rng.random_range(0..n);
            let v = (u + rng.random_range(1..n)) % n;
            TaskInstance::edge(u, v, 0)
        }
        _ => {
            let comps = g.graph_id_of_node().map_or(1, |ids| ids.iter().max().map_or(1, |m| m + 1));
            TaskInstance::component(rng.random_range(0..comps), 0)
        }
    }
}

/// Runs `trials` checks with depth cycling through 1, 2, 3.
pub fn stability_suite(trials: usize, activation: Activation, seed: u64) -> Result<StabilitySuite> {
    let root = SeedStream::new(seed).child("verify");
    let mut out = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = root.indexed(t as u64).rng();
        let depth = 1 + t % 3;
        let d = rng.random_range(1..=4);
        let g1 = random_graph(d, &mut rng);
        let g2 = random_graph(d, &mut rng);
        let t1 = random_task(&g1, &mut rng);
        let t2 = random_task(&g2, &mut rng);
        let enc = EncoderConfig {
            hidden_dim: d,
            num_layers: depth,
            activation,
            dropout: 0.0,
            tied_weights: true,
        };
        let params = init_params(d, &enc, rng.random())?;
        let report = stability_check(&g1, &t1, &g2, &t2, &params, depth)?;
        out.push(Trial { depth, report });
    }
    Ok(StabilitySuite { trials: out })
}
