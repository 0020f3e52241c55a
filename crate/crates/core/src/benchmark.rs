//! Wall-clock comparison of the task-tree pipeline against per-instance
//! ego-subgraph extraction on identical task batches.
//!
//! Both pipelines start from the same sampled neighborhood. The task-tree
//! pipeline appends virtual task nodes and runs one forward pass over the
//! graph; the subgraph pipeline cuts a `hops`-hop subgraph out of the
//! sampled neighborhood for every task and encodes each one separately.

use std::fmt;
use std::time::Instant;

use ndarray::{Array2, Axis};

use crate::encoder::{forward_with_adjacency, EncoderParams, Mode};
use crate::error::{Error, Result};
use crate::graph::{sample_adjacency, Adjacency, Graph};
use crate::rng::SeedStream;
use crate::task::{augment_with_task_nodes, relevant_sets, TaskInstance};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub hops: usize,
    pub fanout: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            hops: 2,
            fanout: 10,
            reps: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    TaskTree,
    Subgraph,
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pipeline::TaskTree => "tasktree",
            Pipeline::Subgraph => "subgraph",
        })
    }
}

pub const PHASES: [&str; 3] = ["sampling", "extraction", "encoding"];

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTiming {
    pub pipeline: Pipeline,
    pub phase: &'static str,
    pub samples: Vec<f64>,
    pub median_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub phases: Vec<PhaseTiming>,
    /// Task-tree embeddings of the last repetition, for cross-checking.
    pub tree_embeddings: Array2<f64>,
    /// Subgraph-pipeline embeddings of the last repetition.
    pub subgraph_embeddings: Array2<f64>,
}

impl BenchReport {
    /// Sum of the phase medians of `pipeline`.
    pub fn total(&self, pipeline: Pipeline) -> f64 {
        self.phases
            .iter()
            .filter(|p| p.pipeline == pipeline)
            .map(|p| p.median_seconds)
            .sum()
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.phases {
            let note = if p.pipeline == Pipeline::TaskTree && p.phase == "extraction" {
                " augmentation-only"
            } else {
                ""
            };
            writeln!(f, "{} {} {:.6}{note}", p.pipeline, p.phase, p.median_seconds)?;
        }
        for pl in [Pipeline::TaskTree, Pipeline::Subgraph] {
            writeln!(f, "{pl} total {:.6}", self.total(pl))?;
        }
        Ok(())
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

/// A `hops`-hop neighborhood cut from a sampled adjacency.
struct Ego {
    adjacency: Adjacency,
    nodes: Vec<usize>,
    roots: Vec<usize>,
}

fn sampled_ego(adj: &Adjacency, roots: &[usize], hops: usize, mark: &mut [usize]) -> Ego {
    let mut nodes: Vec<usize> = Vec::new();
    for &r in roots {
        if mark[r] == usize::MAX {
            mark[r] = nodes.len();
            nodes.push(r);
        }
    }
    let mut frontier = 0;
    for _ in 0..hops {
        let end = nodes.len();
        for i in frontier..end {
            for &u in adj.neighbors(nodes[i]) {
                if mark[u] == usize::MAX {
                    mark[u] = nodes.len();
                    nodes.push(u);
                }
            }
        }
        frontier = end;
    }
    let lists: Vec<Vec<usize>> = nodes
        .iter()
        .map(|&v| {
            adj.neighbors(v)
                .iter()
                .filter_map(|&u| (mark[u] != usize::MAX).then_some(mark[u]))
                .collect()
        })
        .collect();
    let local_roots = roots.iter().map(|&r| mark[r]).collect();
    for &v in &nodes {
        mark[v] = usize::MAX;
    }
    Ego {
        adjacency: Adjacency::from_lists(&lists),
        nodes,
        roots: local_roots,
    }
}

/// Times both pipelines `cfg.reps` times on `tasks` and reports per-phase medians.
pub fn run_bench(params: &EncoderParams, g: &Graph, tasks: &[TaskInstance], cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.reps == 0 || cfg.hops == 0 || cfg.fanout == 0 {
        return Err(Error::Config("reps, hops and fanout must be positive".into()));
    }
    params.check_features(g.feature_dim())?;
    let sets = relevant_sets(tasks, g)?;
    let root = SeedStream::new(cfg.seed).child("bench");
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); 6];
    let mut tree_z = Array2::zeros((0, 0));
    let mut sub_z = Array2::zeros((0, 0));
    for rep in 0..cfg.reps {
        let seed = root.indexed(rep as u64);

        let (adj, t) = timed(|| Ok(sample_adjacency(g.adjacency(), cfg.fanout, &mut seed.rng())))?;
        samples[0].push(t);
        let (aug, t) = timed(|| augment_with_task_nodes(g, tasks))?;
        samples[1].push(t);
        let (z, t) = timed(|| {
            let nodes = forward_with_adjacency(params, &adj, g.features().view(), Mode::Eval)?;
            Ok(aug.virtual_mean(&nodes))
        })?;
        samples[2].push(t);
        tree_z = z;

        let (adj, t) = timed(|| Ok(sample_adjacency(g.adjacency(), cfg.fanout, &mut seed.rng())))?;
        samples[3].push(t);
        let (egos, t) = timed(|| {
            let mut mark = vec![usize::MAX; g.num_nodes()];
            Ok(sets
                .iter()
                .map(|s| sampled_ego(&adj, s, cfg.hops, &mut mark))
                .collect::<Vec<_>>())
        })?;
        samples[4].push(t);
        let (z, t) = timed(|| {
            let mut out = Array2::zeros((egos.len(), params.output_dim()));
            for (k, ego) in egos.iter().enumerate() {
                let x = g.features().select(Axis(0), &ego.nodes);
                let h = forward_with_adjacency(params, &ego.adjacency, x.view(), Mode::Eval)?;
                let mean = h.select(Axis(0), &ego.roots).mean_axis(Axis(0)).expect("roots non-empty");
                out.row_mut(k).assign(&mean);
            }
            Ok(out)
        })?;
        samples[5].push(t);
        sub_z = z;
    }
    let mut phases = Vec::with_capacity(6);
    for (i, s) in samples.into_iter().enumerate() {
        let pipeline = if i < 3 { Pipeline::TaskTree } else { Pipeline::Subgraph };
        phases.push(PhaseTiming {
            pipeline,
            phase: PHASES[i % 3],
            median_seconds: median(s.clone()),
            samples: s,
        });
    }
    Ok(BenchReport {
        phases,
        tree_embeddings: tree_z,
        subgraph_embeddings: sub_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_params, EncoderConfig};
    use ndarray::array;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn both_pipelines_agree_and_report_every_phase() {
        let g = Graph::new(
            &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)],
            array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, -1.0], [2.0, 0.1]],
        )
        .unwrap();
        let p = init_params(2, &EncoderConfig { hidden_dim: 3, dropout: 0.0, ..EncoderConfig::default() }, 2).unwrap();
        let tasks = vec![TaskInstance::node(0, 0), TaskInstance::edge(2, 4, 0)];
        for reps in [1, 5] {
            let cfg = BenchConfig { reps, ..BenchConfig::default() };
            let r = run_bench(&p, &g, &tasks, &cfg).unwrap();
            assert_eq!(r.phases.len(), 6);
            assert!(r.phases.iter().all(|ph| ph.samples.len() == reps));
            let diff = (&r.tree_embeddings - &r.subgraph_embeddings).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
            assert!(diff < 1e-12);
        }
    }
}
