//! Synthetic two-domain benchmark.
//!
//! Domain A is a stochastic block model whose node features are Gaussian
//! around one mean per class (node tasks). Domain B is a disjoint union of
//! small motif graphs, either triangle-rich rings or pairs of joined stars
//! (graph tasks); its features carry a degree coordinate so the motif class
//! is visible to mean aggregation. The two domains sit around different
//! feature centers. Class vectors are the per-class centroids of a frozen
//! randomly initialized reference encoder.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::{save_dataset, Dataset, TEST, TRAIN, VAL};
use crate::encoder::{init_params, Activation, EncoderConfig};
use crate::error::{Error, Result};
use crate::graph::{disjoint_union, Graph};
use crate::rng::{SeedStream, StreamRng};
use crate::task::{embed_tasks, TaskInstance};

#[derive(Debug, Clone, PartialEq)]
pub struct SbmConfig {
    pub classes: usize,
    pub nodes_per_class: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Class-mean offset along the class axis, in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            nodes_per_class: 50,
            p_in: 0.1,
            p_out: 0.01,
            separation: 5.0,
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotifConfig {
    pub graphs_per_class: usize,
    pub nodes_per_graph: usize,
    pub sigma: f64,
}

impl Default for MotifConfig {
    fn default() -> Self {
        Self {
            graphs_per_class: 100,
            nodes_per_graph: 10,
            sigma: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub feature_dim: usize,
    pub domain_a: SbmConfig,
    pub domain_b: MotifConfig,
    /// Distance between the two domain feature centers.
    pub domain_shift: f64,
    /// Width of the class vectors (the encoder width they are meant for).
    pub class_vector_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            feature_dim: 8,
            domain_a: SbmConfig::default(),
            domain_b: MotifConfig::default(),
            domain_shift: 4.0,
            class_vector_dim: 16,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.domain_a;
        if a.classes == 0 || a.nodes_per_class == 0 || self.domain_b.graphs_per_class == 0 {
            return Err(Error::Config("synthetic domains need at least one class and instance".into()));
        }
        if self.feature_dim < a.classes.max(2) {
            return Err(Error::Config(format!(
                "feature_dim {} must be at least max(classes, 2) = {}",
                self.feature_dim,
                a.classes.max(2)
            )));
        }
        if self.domain_b.nodes_per_graph < 5 {
            return Err(Error::Config("motif graphs need at least 5 nodes".into()));
        }
        for p in [a.p_in, a.p_out] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("edge probability {p} outside [0, 1]")));
            }
        }
        if self.class_vector_dim == 0 {
            return Err(Error::Config("class_vector_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBenchmark {
    pub domain_a: Dataset,
    pub domain_b: Dataset,
}

fn gaussian(rng: &mut StreamRng, dim: usize, sigma: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(dim, || sigma * rng.sample::<f64, _>(StandardNormal))
}

/// Stochastic block model with class-dependent Gaussian features centered
/// at `center`. Node `v` belongs to class `v / nodes_per_class`.
pub fn sbm_graph(cfg: &SbmConfig, feature_dim: usize, center: &Array1<f64>, rng: &mut StreamRng) -> Result<(Graph, Vec<usize>)> {
    let n = cfg.classes * cfg.nodes_per_class;
    let class: Vec<usize> = (0..n).map(|v| v / cfg.nodes_per_class).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if class[u] == class[v] { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let mut x = Array2::zeros((n, feature_dim));
    for (v, mut row) in x.rows_mut().into_iter().enumerate() {
        let mut r = center + &gaussian(rng, feature_dim, cfg.sigma);
        r[class[v] % feature_dim] += cfg.separation * cfg.sigma;
        row.assign(&r);
    }
    Ok((Graph::new(&edges, x)?, class))
}

/// Ring where every node also links two steps ahead with probability 0.8.
fn triangle_motif(n: usize, rng: &mut StreamRng) -> Vec<(usize, usize)> {
    let mut e: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    for i in 0..n {
        if rng.random::<f64>() < 0.8 {
            e.push((i, (i + 2) % n));
        }
    }
    e
}

/// Two stars of random sizes with their hubs joined.
fn star_motif(n: usize, rng: &mut StreamRng) -> Vec<(usize, usize)> {
    let split = rng.random_range(2..=n - 3);
    let mut e = vec![(0, split)];
    e.extend((1..split).map(|v| (0, v)));
    e.extend((split + 1..n).map(|v| (split, v)));
    e
}

fn motif_graph(
    triangles: bool,
    cfg: &MotifConfig,
    feature_dim: usize,
    center: &Array1<f64>,
    rng: &mut StreamRng,
) -> Result<Graph> {
    let n = cfg.nodes_per_graph;
    let edges = if triangles { triangle_motif(n, rng) } else { star_motif(n, rng) };
    let shape = Graph::new(&edges, Array2::zeros((n, feature_dim)))?;
    let mut x = Array2::zeros((n, feature_dim));
    for (v, mut row) in x.rows_mut().into_iter().enumerate() {
        let mut r = center + &gaussian(rng, feature_dim, cfg.sigma);
        r[0] += shape.degree(v) as f64 / 2.0;
        row.assign(&r);
    }
    shape.with_features(x)
}

fn splits(n: usize, rng: &mut StreamRng) -> BTreeMap<String, Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = n * 6 / 10;
    let n_val = n * 2 / 10;
    let mut out = BTreeMap::new();
    out.insert(TRAIN.to_string(), idx[..n_train].to_vec());
    out.insert(VAL.to_string(), idx[n_train..n_train + n_val].to_vec());
    out.insert(TEST.to_string(), idx[n_train + n_val..].to_vec());
    out
}

/// Per-class mean rows of `z`.
pub fn class_centroids(z: &Array2<f64>, labels: &[usize], num_classes: usize) -> Array2<f64> {
    let mut sums = Array2::zeros((num_classes, z.ncols()));
    let mut counts = vec![0usize; num_classes];
    for (row, &y) in z.rows().into_iter().zip(labels) {
        let mut s = sums.row_mut(y);
        s += &row;
        counts[y] += 1;
    }
    for (mut s, &c) in sums.rows_mut().into_iter().zip(&counts) {
        if c > 0 {
            s /= c as f64;
        }
    }
    sums
}

/// Generates both domains, deterministically per `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthBenchmark> {
    cfg.validate()?;
    let root = SeedStream::new(cfg.seed).child("synth");
    let d = cfg.feature_dim;
    let center_a = Array1::zeros(d);
    let center_b = Array1::from_elem(d, cfg.domain_shift / (d as f64).sqrt());

    let (ga, class_a) = sbm_graph(&cfg.domain_a, d, &center_a, &mut root.rng_for("domain_a"))?;
    let tasks_a: Vec<TaskInstance> = class_a.iter().enumerate().map(|(v, &c)| TaskInstance::node(v, c)).collect();

    let mut rng_b = root.rng_for("domain_b");
    let mut parts = Vec::new();
    let mut labels_b = Vec::new();
    for k in 0..2 * cfg.domain_b.graphs_per_class {
        let label = k % 2;
        parts.push(motif_graph(label == 0, &cfg.domain_b, d, &center_b, &mut rng_b)?);
        labels_b.push(label);
    }
    let refs: Vec<&Graph> = parts.iter().collect();
    let gb = disjoint_union(&refs)?;
    let ids = gb.graph_id_of_node().expect("union records components").to_vec();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); parts.len()];
    for (v, &c) in ids.iter().enumerate() {
        members[c].push(v);
    }
    let tasks_b: Vec<TaskInstance> = members
        .into_iter()
        .zip(&labels_b)
        .map(|(nodes, &y)| TaskInstance::graph(nodes, y))
        .collect();

    let reference = init_params(
        d,
        &EncoderConfig {
            hidden_dim: cfg.class_vector_dim,
            num_layers: 2,
            activation: Activation::Relu,
            dropout: 0.0,
            tied_weights: false,
        },
        root.child("reference").seed(),
    )?;
    let build = |graph: Graph, tasks: Vec<TaskInstance>, classes: usize, name: &str| -> Result<Dataset> {
        let z = embed_tasks(&reference, &graph, &tasks)?;
        let labels: Vec<usize> = tasks.iter().map(|t| t.label).collect();
        let cv = class_centroids(&z, &labels, classes);
        let sp = splits(tasks.len(), &mut root.rng_for(name));
        Dataset::new(graph, tasks, classes, sp, Some(cv))
    };
    Ok(SynthBenchmark {
        domain_a: build(ga, tasks_a, cfg.domain_a.classes, "split_a")?,
        domain_b: build(gb, tasks_b, 2, "split_b")?,
    })
}

/// Writes `dir/domain_a` and `dir/domain_b` bundles.
pub fn write_benchmark(bench: &SynthBenchmark, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    save_dataset(&bench.domain_a, dir.join("domain_a"))?;
    save_dataset(&bench.domain_b, dir.join("domain_b"))
}

/// Mean of the local clustering coefficient over the nodes of `g`.
pub fn mean_clustering(g: &Graph) -> f64 {
    let n = g.num_nodes();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = (0..n)
        .map(|v| {
            let nb: Vec<usize> = g.neighbors(v).iter().copied().filter(|&u| u != v).collect();
            let k = nb.len();
            if k < 2 {
                return 0.0;
            }
            let mut links = 0;
            for (i, &a) in nb.iter().enumerate() {
                for &b in &nb[i + 1..] {
                    if g.has_edge(a, b) {
                        links += 1;
                    }
                }
            }
            2.0 * links as f64 / (k * (k - 1)) as f64
        })
        .sum();
    total / n as f64
}

/// Per-domain mean of `z` rows.
pub fn domain_mean(z: &Array2<f64>) -> Array1<f64> {
    z.mean_axis(Axis(0)).expect("non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            domain_a: SbmConfig { nodes_per_class: 10, ..SbmConfig::default() },
            domain_b: MotifConfig { graphs_per_class: 6, ..MotifConfig::default() },
            seed: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn shapes_and_labels() {
        let b = generate(&small()).unwrap();
        assert_eq!(b.domain_a.tasks.len(), 40);
        assert_eq!(b.domain_b.tasks.len(), 12);
        assert_eq!(b.domain_b.graph.num_nodes(), 120);
        assert_eq!(b.domain_a.class_vectors.as_ref().unwrap().dim(), (4, 16));
        b.domain_a.graph.validate().unwrap();
        b.domain_b.graph.validate().unwrap();
    }

    #[test]
    fn same_seed_same_benchmark() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SynthConfig { seed: 4, ..small() };
        assert_ne!(generate(&small()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn star_motif_is_a_tree() {
        let mut rng = SeedStream::new(1).rng();
        for _ in 0..20 {
            let e = star_motif(10, &mut rng);
            assert_eq!(e.len(), 9);
        }
    }

    #[test]
    fn too_small_feature_dim_rejected() {
        let cfg = SynthConfig { feature_dim: 3, ..small() };
        assert!(generate(&cfg).is_err());
    }
}
