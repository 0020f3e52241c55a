use ndarray::{Array1, Array2, Axis};
use rand::seq::index;
use rand::Rng;

use super::{Adjacency, Graph};
use crate::error::{Error, Result};
use crate::linalg::norm;

/// Feature norm bound and per-dimension moments.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    /// Largest Euclidean row norm.
    pub max_row_norm: f64,
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

pub fn feature_stats(g: &Graph) -> FeatureStats {
    let x = g.features();
    let max_row_norm = x.rows().into_iter().map(norm).fold(0.0, f64::max);
    let d = x.ncols();
    let (mean, std) = if x.nrows() == 0 {
        (Array1::zeros(d), Array1::zeros(d))
    } else {
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        (mean, x.std_axis(Axis(0), 0.0))
    };
    FeatureStats {
        max_row_norm,
        mean,
        std,
    }
}

/// Scales every nonzero feature row to unit norm.
pub fn row_normalize(g: &Graph) -> Graph {
    let mut x = g.features().clone();
    for mut row in x.rows_mut() {
        let n = norm(row.view());
        if n > 0.0 {
            row /= n;
        }
    }
    g.with_features(x).expect("shape preserved")
}

/// Uniform sample of at most `fanout` neighbors without replacement,
/// returned in adjacency order. Isolated nodes give an empty sample.
pub fn neighbor_sample<R: Rng + ?Sized>(
    g: &Graph,
    node: usize,
    fanout: usize,
    rng: &mut R,
) -> Vec<usize> {
    sample_list(g.neighbors(node), fanout, rng)
}

fn sample_list<R: Rng + ?Sized>(nb: &[usize], fanout: usize, rng: &mut R) -> Vec<usize> {
    if nb.len() <= fanout {
        return nb.to_vec();
    }
    let mut picked = index::sample(rng, nb.len(), fanout).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| nb[i]).collect()
}

/// Applies [`neighbor_sample`] to every node, producing a directed view of
/// the adjacency used for one forward pass.
pub fn sample_adjacency<R: Rng + ?Sized>(adj: &Adjacency, fanout: usize, rng: &mut R) -> Adjacency {
    let lists: Vec<Vec<usize>> = (0..adj.num_nodes())
        .map(|v| sample_list(adj.neighbors(v), fanout, rng))
        .collect();
    Adjacency::from_lists(&lists)
}

/// Places graphs side by side, offsetting node ids and recording the
/// component of every node.
///
/// Components that already carry graph ids keep their internal structure:
/// their ids are offset so they stay distinct across inputs.
pub fn disjoint_union(graphs: &[&Graph]) -> Result<Graph> {
    let d = graphs.first().map_or(0, |g| g.feature_dim());
    if let Some(bad) = graphs.iter().find(|g| g.feature_dim() != d) {
        return Err(Error::Dimension(format!(
            "cannot union feature dims {d} and {}",
            bad.feature_dim()
        )));
    }
    let total: usize = graphs.iter().map(|g| g.num_nodes()).sum();
    let mut lists = Vec::with_capacity(total);
    let mut features = Array2::zeros((total, d));
    let mut ids = Vec::with_capacity(total);
    let (mut offset, mut next_id) = (0, 0);
    for g in graphs {
        let n = g.num_nodes();
        for v in 0..n {
            lists.push(g.neighbors(v).iter().map(|&u| u + offset).collect::<Vec<_>>());
        }
        features
            .slice_mut(ndarray::s![offset..offset + n, ..])
            .assign(g.features());
        match g.graph_id_of_node() {
            Some(inner) => {
                ids.extend(inner.iter().map(|&c| c + next_id));
                next_id += inner.iter().max().map_or(0, |&m| m + 1);
            }
            None => {
                ids.extend(std::iter::repeat_n(next_id, n));
                next_id += 1;
            }
        }
        offset += n;
    }
    Graph::from_parts(Adjacency::from_lists(&lists), features, Some(ids))
}
