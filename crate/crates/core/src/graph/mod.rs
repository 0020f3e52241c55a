//! Undirected graphs in CSR form with dense node features.

pub(crate) mod io;
mod ops;

pub use io::{load_graph, read_graph, save_graph, write_graph};
pub use ops::{
    disjoint_union, feature_stats, neighbor_sample, row_normalize, sample_adjacency, FeatureStats,
};

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Compressed neighbor lists. Not necessarily symmetric (sampled
/// neighborhoods are directed views); [`Graph`] guarantees symmetry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Adjacency {
    /// Builds from per-node lists. Lists are stored as given.
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut targets = Vec::with_capacity(lists.iter().map(Vec::len).sum());
        offsets.push(0);
        for list in lists {
            targets.extend_from_slice(list);
            offsets.push(targets.len());
        }
        Self { offsets, targets }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.targets[self.offsets[node]..self.offsets[node + 1]]
    }

    #[inline]
    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// Total number of stored endpoints.
    pub fn num_entries(&self) -> usize {
        self.targets.len()
    }
}

/// Immutable undirected graph with a `num_nodes × d` feature matrix.
///
/// Neighbor lists are sorted and duplicate-free; `u ∈ N(v) ⇔ v ∈ N(u)`.
/// Self-loops are kept as a single entry in the node's own list.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Adjacency,
    features: Array2<f64>,
    graph_id_of_node: Option<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from an edge list, symmetrizing and deduplicating.
    /// The node count is the number of feature rows.
    pub fn new(edges: &[(usize, usize)], features: Array2<f64>) -> Result<Self> {
        let n = features.nrows();
        let mut lists = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Load(format!(
                    "edge ({u}, {v}) references a node outside 0..{n}"
                )));
            }
            lists[u].push(v);
            if u != v {
                lists[v].push(u);
            }
        }
        for list in &mut lists {
            list.sort_unstable();
            list.dedup();
        }
        Self::from_parts(Adjacency::from_lists(&lists), features, None)
    }

    /// Builds from already symmetric sorted lists, validating every invariant.
    pub fn from_parts(
        adjacency: Adjacency,
        features: Array2<f64>,
        graph_id_of_node: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = adjacency.num_nodes();
        if features.nrows() != n {
            return Err(Error::Dimension(format!(
                "{} feature rows for {n} nodes",
                features.nrows()
            )));
        }
        if let Some((pos, _)) = features.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            let d = features.ncols().max(1);
            return Err(Error::format(
                format!("feature row {}", pos / d),
                "non-finite value",
            ));
        }
        if let Some(ids) = &graph_id_of_node {
            if ids.len() != n {
                return Err(Error::Dimension(format!(
                    "graph id map covers {} of {n} nodes",
                    ids.len()
                )));
            }
        }
        for v in 0..n {
            let nb = adjacency.neighbors(v);
            if nb.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Load(format!("neighbor list of {v} not strictly sorted")));
            }
            for &u in nb {
                if u >= n || adjacency.neighbors(u).binary_search(&v).is_err() {
                    return Err(Error::Load(format!("edge ({v}, {u}) is not symmetric")));
                }
            }
        }
        Ok(Self {
            adjacency,
            features,
            graph_id_of_node,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.num_nodes()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    #[inline]
    pub fn neighbors(&self, node: usize) -> &[usize] {
        self.adjacency.neighbors(node)
    }

    #[inline]
    pub fn degree(&self, node: usize) -> usize {
        self.adjacency.degree(node)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_row(&self, node: usize) -> ArrayView1<'_, f64> {
        self.features.row(node)
    }

    pub fn graph_id_of_node(&self) -> Option<&[usize]> {
        self.graph_id_of_node.as_deref()
    }

    /// Undirected edges as `(u, v)` with `u <= v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v >= u)
                .map(move |v| (u, v))
        })
    }

    pub fn num_edges(&self) -> usize {
        self.edges().count()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.num_nodes() && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Nodes of component `id` according to the graph id map.
    pub fn component_nodes(&self, id: usize) -> Option<Vec<usize>> {
        self.graph_id_of_node.as_ref().map(|ids| {
            ids.iter()
                .enumerate()
                .filter(|(_, &c)| c == id)
                .map(|(v, _)| v)
                .collect()
        })
    }

    /// Same structure, new features.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.num_nodes() {
            return Err(Error::Dimension(format!(
                "{} feature rows for {} nodes",
                features.nrows(),
                self.num_nodes()
            )));
        }
        Self::from_parts(self.adjacency.clone(), features, self.graph_id_of_node.clone())
    }

    /// Same nodes and features, new symmetric adjacency.
    pub(crate) fn with_adjacency_unchecked(&self, adjacency: Adjacency) -> Self {
        Self {
            adjacency,
            features: self.features.clone(),
            graph_id_of_node: self.graph_id_of_node.clone(),
        }
    }

    /// Induced subgraph on `nodes` (ascending, distinct), remapped densely in
    /// the given order.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Graph {
        let mut local = vec![usize::MAX; self.num_nodes()];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i;
        }
        let lists: Vec<Vec<usize>> = nodes
            .iter()
            .map(|&v| {
                let mut l: Vec<usize> = self
                    .neighbors(v)
                    .iter()
                    .filter_map(|&u| (local[u] != usize::MAX).then_some(local[u]))
                    .collect();
                l.sort_unstable();
                l
            })
            .collect();
        let mut features = Array2::zeros((nodes.len(), self.feature_dim()));
        for (i, &v) in nodes.iter().enumerate() {
            features.row_mut(i).assign(&self.features.row(v));
        }
        Graph {
            adjacency: Adjacency::from_lists(&lists),
            features,
            graph_id_of_node: self
                .graph_id_of_node
                .as_ref()
                .map(|ids| nodes.iter().map(|&v| ids[v]).collect()),
        }
    }

    /// Checks every structural invariant; used by tests after transformations.
    pub fn validate(&self) -> Result<()> {
        let offsets = self.adjacency.offsets();
        if offsets.windows(2).any(|w| w[0] > w[1])
            || *offsets.last().unwrap_or(&0) != self.adjacency.num_entries()
        {
            return Err(Error::Load("CSR offsets are not monotone".into()));
        }
        Self::from_parts(
            self.adjacency.clone(),
            self.features.clone(),
            self.graph_id_of_node.clone(),
        )
        .map(|_| ())
    }
}
