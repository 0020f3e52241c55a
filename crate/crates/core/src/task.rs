//! Task-trees: node, edge and graph learning instances expressed as a
//! virtual root over their task-relevant nodes.
//!
//! The embedding of a task-tree is the mean of the encoder outputs at its
//! relevant nodes, computed on the original graph. Appending a virtual node
//! per task and mean-aggregating at it gives the same vector; that route is
//! kept as [`AugmentedGraph::virtual_mean`] and used as a cross-check.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::encoder::{forward, EncoderParams, Mode};
use crate::error::{Error, Result};
use crate::graph::{Adjacency, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Node,
    Edge,
    Graph,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Node => "node",
            TaskKind::Edge => "edge",
            TaskKind::Graph => "graph",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node" => Ok(TaskKind::Node),
            "edge" => Ok(TaskKind::Edge),
            "graph" => Ok(TaskKind::Graph),
            other => Err(Error::MalformedTask(format!("unknown task kind '{other}'"))),
        }
    }
}

/// One learning instance.
///
/// For graph tasks `nodes` may be left empty and `component` set; the
/// relevant set is then every node carrying that graph id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub nodes: Vec<usize>,
    pub label: usize,
    pub component: Option<usize>,
}

impl TaskInstance {
    pub fn node(v: usize, label: usize) -> Self {
        Self {
            kind: TaskKind::Node,
            nodes: vec![v],
            label,
            component: None,
        }
    }

    pub fn edge(u: usize, v: usize, label: usize) -> Self {
        Self {
            kind: TaskKind::Edge,
            nodes: vec![u, v],
            label,
            component: None,
        }
    }

    pub fn graph(nodes: Vec<usize>, label: usize) -> Self {
        Self {
            kind: TaskKind::Graph,
            nodes,
            label,
            component: None,
        }
    }

    pub fn component(id: usize, label: usize) -> Self {
        Self {
            kind: TaskKind::Graph,
            nodes: Vec::new(),
            label,
            component: Some(id),
        }
    }
}

/// Task-relevant nodes of `task` in `g`.
pub fn relevant_nodes(task: &TaskInstance, g: &Graph) -> Result<Vec<usize>> {
    let n = g.num_nodes();
    let out = match task.kind {
        TaskKind::Node => {
            if task.nodes.len() != 1 {
                return Err(Error::MalformedTask(format!(
                    "node task needs one node, got {}",
                    task.nodes.len()
                )));
            }
            task.nodes.clone()
        }
        TaskKind::Edge => {
            if task.nodes.len() != 2 || task.nodes[0] == task.nodes[1] {
                return Err(Error::MalformedTask(format!(
                    "edge task needs two distinct endpoints, got {:?}",
                    task.nodes
                )));
            }
            task.nodes.clone()
        }
        TaskKind::Graph => {
            if !task.nodes.is_empty() {
                let mut sorted = task.nodes.clone();
                sorted.sort_unstable();
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::MalformedTask("graph task lists a node twice".into()));
                }
                task.nodes.clone()
            } else if let Some(id) = task.component {
                g.component_nodes(id).ok_or_else(|| {
                    Error::MalformedTask(format!(
                        "graph task names component {id} but the graph has no component map"
                    ))
                })?
            } else {
                Vec::new()
            }
        }
    };
    if out.is_empty() {
        return Err(Error::MalformedTask(format!(
            "{} task has no relevant nodes",
            task.kind
        )));
    }
    if let Some(&bad) = out.iter().find(|&&v| v >= n) {
        return Err(Error::MalformedTask(format!(
            "relevant node {bad} outside graph of {n} nodes"
        )));
    }
    Ok(out)
}

/// Relevant node sets for a batch of tasks.
pub fn relevant_sets(tasks: &[TaskInstance], g: &Graph) -> Result<Vec<Vec<usize>>> {
    tasks.iter().map(|t| relevant_nodes(t, g)).collect()
}

/// Mean of `rows[group]` for every group.
pub fn mean_rows(rows: &Array2<f64>, groups: &[Vec<usize>]) -> Array2<f64> {
    let mut out = Array2::zeros((groups.len(), rows.ncols()));
    for (k, group) in groups.iter().enumerate() {
        let mut acc = out.row_mut(k);
        for &i in group {
            acc += &rows.row(i);
        }
        acc /= group.len() as f64;
    }
    out
}

/// A base graph with one virtual task node appended per instance.
#[derive(Debug, Clone)]
pub struct AugmentedGraph<'g> {
    pub base: &'g Graph,
    /// Base and virtual nodes together; virtual node `k` is
    /// `virtual_offset + k`.
    pub combined: Graph,
    pub virtual_offset: usize,
    pub task_of_virtual: Vec<usize>,
}

impl AugmentedGraph<'_> {
    pub fn num_virtual(&self) -> usize {
        self.task_of_virtual.len()
    }

    /// One plain mean-aggregation step at every virtual node over
    /// `node_embeddings` (rows for the base nodes).
    pub fn virtual_mean(&self, node_embeddings: &Array2<f64>) -> Array2<f64> {
        let h = node_embeddings.ncols();
        let mut out = Array2::zeros((self.num_virtual(), h));
        for k in 0..self.num_virtual() {
            let v = self.virtual_offset + k;
            let nb = self.combined.neighbors(v);
            let mut row = out.row_mut(k);
            for &u in nb {
                row += &node_embeddings.row(u);
            }
            row /= nb.len() as f64;
        }
        out
    }
}

/// Appends a virtual node per task, wired to the task's relevant nodes.
/// The virtual node's feature row is the mean of the relevant rows.
pub fn augment_with_task_nodes<'g>(
    g: &'g Graph,
    tasks: &[TaskInstance],
) -> Result<AugmentedGraph<'g>> {
    let sets = relevant_sets(tasks, g)?;
    let n = g.num_nodes();
    let total = n + sets.len();
    let mut lists: Vec<Vec<usize>> = (0..n).map(|v| g.neighbors(v).to_vec()).collect();
    lists.resize(total, Vec::new());
    for (k, set) in sets.iter().enumerate() {
        let virt = n + k;
        for &v in set {
            lists[v].push(virt);
            lists[virt].push(v);
        }
    }
    for list in &mut lists[n..] {
        list.sort_unstable();
        list.dedup();
    }
    for list in &mut lists[..n] {
        list.dedup();
    }
    let mut features = Array2::zeros((total, g.feature_dim()));
    features
        .slice_mut(ndarray::s![..n, ..])
        .assign(g.features());
    let means = mean_rows(g.features(), &sets);
    features.slice_mut(ndarray::s![n.., ..]).assign(&means);
    let combined = Graph::from_parts(
        Adjacency::from_lists(&lists),
        features,
        g.graph_id_of_node().map(|ids| {
            let mut ids = ids.to_vec();
            ids.resize(total, usize::MAX);
            ids
        }),
    )?;
    Ok(AugmentedGraph {
        base: g,
        combined,
        virtual_offset: n,
        task_of_virtual: (0..sets.len()).collect(),
    })
}

/// Task-tree embeddings: row `k` is the mean of the encoder outputs at the
/// relevant nodes of `tasks[k]`, evaluated on `g` in eval mode.
pub fn encode_task_trees(
    params: &EncoderParams,
    g: &Graph,
    tasks: &[TaskInstance],
) -> Result<Array2<f64>> {
    let sets = relevant_sets(tasks, g)?;
    let z = forward(params, g, Mode::Eval)?;
    Ok(mean_rows(&z, &sets))
}

/// Post-projector task-tree embeddings (the vectors every downstream
/// protocol consumes).
pub fn embed_tasks(params: &EncoderParams, g: &Graph, tasks: &[TaskInstance]) -> Result<Array2<f64>> {
    let z = encode_task_trees(params, g, tasks)?;
    crate::encoder::project(params, &z)
}

/// Per-level mean-aggregated features `x^(0) .. x^(depth-1)`.
#[derive(Debug, Clone)]
pub struct SubtreeInfo {
    pub levels: Vec<Array2<f64>>,
}

impl SubtreeInfo {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

/// Mean aggregation over `adj`; isolated nodes receive zero.
pub(crate) fn mean_aggregate(adj: &Adjacency, x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    for v in 0..adj.num_nodes() {
        let nb = adj.neighbors(v);
        if nb.is_empty() {
            continue;
        }
        let mut row = out.row_mut(v);
        for &u in nb {
            row += &x.row(u);
        }
        row /= nb.len() as f64;
    }
    out
}

pub fn subtree_info(g: &Graph, depth: usize) -> Result<SubtreeInfo> {
    if depth == 0 {
        return Err(Error::Config("subtree depth must be at least 1".into()));
    }
    let mut levels = Vec::with_capacity(depth);
    levels.push(g.features().clone());
    for l in 1..depth {
        let next = mean_aggregate(g.adjacency(), &levels[l - 1]);
        levels.push(next);
    }
    Ok(SubtreeInfo { levels })
}

/// Nodes within `hops` of any root, ascending.
pub fn ego_nodes(g: &Graph, roots: &[usize], hops: usize) -> Vec<usize> {
    let n = g.num_nodes();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for &r in roots {
        if r < n && dist[r] == usize::MAX {
            dist[r] = 0;
            queue.push_back(r);
        }
    }
    while let Some(v) = queue.pop_front() {
        if dist[v] == hops {
            continue;
        }
        for &u in g.neighbors(v) {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    (0..n).filter(|&v| dist[v] != usize::MAX).collect()
}

/// Induced subgraph on the `hops`-neighborhood of `roots`, densely remapped.
pub fn extract_ego_subgraph(g: &Graph, roots: &[usize], hops: usize) -> Result<Graph> {
    if hops == 0 {
        return Err(Error::Config("ego subgraph needs hops >= 1".into()));
    }
    Ok(g.induced_subgraph(&ego_nodes(g, roots, hops)))
}

/// Restricts `tasks` to the `hops`-neighborhood of their relevant nodes.
///
/// Returns the induced subgraph and the tasks rewritten with explicit node
/// lists in its local ids. With `hops` at least the encoder depth every
/// task-tree embedding is unchanged, since message passing never looks
/// further.
pub fn localize(g: &Graph, tasks: &[TaskInstance], hops: usize) -> Result<(Graph, Vec<TaskInstance>)> {
    let sets = relevant_sets(tasks, g)?;
    let mut roots: Vec<usize> = sets.iter().flatten().copied().collect();
    roots.sort_unstable();
    roots.dedup();
    let keep = ego_nodes(g, &roots, hops);
    let mut local = vec![usize::MAX; g.num_nodes()];
    for (i, &v) in keep.iter().enumerate() {
        local[v] = i;
    }
    let sub = g.induced_subgraph(&keep);
    let local_tasks = tasks
        .iter()
        .zip(sets)
        .map(|(t, set)| TaskInstance {
            kind: t.kind,
            nodes: set.into_iter().map(|v| local[v]).collect(),
            label: t.label,
            component: None,
        })
        .collect();
    Ok((sub, local_tasks))
}
