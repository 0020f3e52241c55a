//! Labeled task collections and the on-disk bundle format.
//!
//! A bundle is a directory holding `edges.txt`, `features.txt`, `tasks.txt`
//! (`kind node-ids... label`), `splits.txt` (`split-name task-index`) and an
//! optional `class_vectors.txt` with one row per class.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::io::{data_lines, parse_matrix, parse_usize, write_matrix};
use crate::graph::{load_graph, save_graph, Graph};
use crate::task::{relevant_nodes, TaskInstance, TaskKind};

pub const TRAIN: &str = "train";
pub const VAL: &str = "val";
pub const TEST: &str = "test";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub tasks: Vec<TaskInstance>,
    pub num_classes: usize,
    pub splits: BTreeMap<String, Vec<usize>>,
    pub class_vectors: Option<Array2<f64>>,
}

impl Dataset {
    pub fn new(
        graph: Graph,
        tasks: Vec<TaskInstance>,
        num_classes: usize,
        splits: BTreeMap<String, Vec<usize>>,
        class_vectors: Option<Array2<f64>>,
    ) -> Result<Self> {
        let ds = Self {
            graph,
            tasks,
            num_classes,
            splits,
            class_vectors,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, t) in self.tasks.iter().enumerate() {
            if t.label >= self.num_classes {
                return Err(Error::Config(format!(
                    "task {k} has label {} but only {} classes",
                    t.label, self.num_classes
                )));
            }
            relevant_nodes(t, &self.graph)
                .map_err(|e| Error::MalformedTask(format!("task {k}: {e}")))?;
        }
        let mut owner: Vec<Option<&str>> = vec![None; self.tasks.len()];
        for (name, idx) in &self.splits {
            for &i in idx {
                let slot = owner.get_mut(i).ok_or_else(|| {
                    Error::Config(format!("split '{name}' references missing task {i}"))
                })?;
                if let Some(prev) = slot {
                    return Err(Error::Config(format!(
                        "task {i} appears in splits '{prev}' and '{name}'"
                    )));
                }
                *slot = Some(name);
            }
        }
        if let Some(cv) = &self.class_vectors {
            if cv.nrows() != self.num_classes {
                return Err(Error::Config(format!(
                    "{} class vectors for {} classes",
                    cv.nrows(),
                    self.num_classes
                )));
            }
            if cv.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config("class vectors contain non-finite values".into()));
            }
        }
        Ok(())
    }

    /// Task indices of split `name`.
    pub fn split(&self, name: &str) -> Result<&[usize]> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("dataset has no '{name}' split")))
    }

    /// Tasks of split `name`, in split order.
    pub fn split_tasks(&self, name: &str) -> Result<Vec<TaskInstance>> {
        Ok(self.split(name)?.iter().map(|&i| self.tasks[i].clone()).collect())
    }

    /// Tasks of split `name` when present, otherwise every task.
    pub fn split_or_all(&self, name: &str) -> Vec<TaskInstance> {
        self.split_tasks(name).unwrap_or_else(|_| self.tasks.clone())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.tasks.iter().map(|t| t.label).collect()
    }
}

fn parse_tasks<R: BufRead>(reader: R) -> Result<Vec<TaskInstance>> {
    let mut tasks = Vec::new();
    for line in data_lines(reader, "tasks") {
        let (lineno, text) = line?;
        let loc = || format!("tasks:{lineno}");
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(Error::format(loc(), "expected 'kind node-ids... label'"));
        }
        let kind: TaskKind = toks[0].parse().map_err(|e: Error| Error::format(loc(), e.to_string()))?;
        let nodes = toks[1..toks.len() - 1]
            .iter()
            .map(|t| parse_usize(t, loc))
            .collect::<Result<Vec<_>>>()?;
        let label = parse_usize(toks[toks.len() - 1], loc)?;
        tasks.push(TaskInstance {
            kind,
            nodes,
            label,
            component: None,
        });
    }
    Ok(tasks)
}

fn parse_splits<R: BufRead>(reader: R) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut splits: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for line in data_lines(reader, "splits") {
        let (lineno, text) = line?;
        let loc = || format!("splits:{lineno}");
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(Error::format(loc(), "expected 'split-name task-index'"));
        }
        splits
            .entry(toks[0].to_string())
            .or_default()
            .push(parse_usize(toks[1], loc)?);
    }
    Ok(splits)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Loads a bundle directory. `num_classes` is one more than the largest
/// label, or the class-vector row count when that is larger.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let graph = load_graph(dir.join("edges.txt"), dir.join("features.txt"))?;
    let tasks = parse_tasks(open(&dir.join("tasks.txt"))?)?;
    let split_path = dir.join("splits.txt");
    let splits = if split_path.exists() {
        parse_splits(open(&split_path)?)?
    } else {
        BTreeMap::new()
    };
    let cv_path = dir.join("class_vectors.txt");
    let class_vectors = if cv_path.exists() {
        Some(parse_matrix(open(&cv_path)?, "class_vectors")?)
    } else {
        None
    };
    let from_labels = tasks.iter().map(|t| t.label + 1).max().unwrap_or(0);
    let num_classes = class_vectors
        .as_ref()
        .map_or(from_labels, |cv| cv.nrows().max(from_labels));
    Dataset::new(graph, tasks, num_classes, splits, class_vectors)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes a bundle directory, creating it if needed. Graph tasks are stored
/// with their resolved node lists.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_graph(&ds.graph, dir.join("edges.txt"), dir.join("features.txt"))?;

    let path = dir.join("tasks.txt");
    let mut w = create(&path)?;
    let io = |e| Error::io(&path, e);
    for t in &ds.tasks {
        let nodes = relevant_nodes(t, &ds.graph)?;
        write!(w, "{}", t.kind).map_err(io)?;
        for v in nodes {
            write!(w, " {v}").map_err(io)?;
        }
        writeln!(w, " {}", t.label).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let path = dir.join("splits.txt");
    let mut w = create(&path)?;
    let io = |e| Error::io(&path, e);
    for (name, idx) in &ds.splits {
        for i in idx {
            writeln!(w, "{name} {i}").map_err(io)?;
        }
    }
    w.flush().map_err(io)?;

    if let Some(cv) = &ds.class_vectors {
        let path = dir.join("class_vectors.txt");
        let mut w = create(&path)?;
        write_matrix(&mut w, cv).map_err(|e| Error::io(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> Dataset {
        let g = Graph::new(&[(0, 1), (1, 2)], array![[1.0], [2.0], [3.0]]).unwrap();
        let tasks = vec![
            TaskInstance::node(0, 0),
            TaskInstance::edge(1, 2, 1),
            TaskInstance::graph(vec![0, 1, 2], 1),
        ];
        let mut splits = BTreeMap::new();
        splits.insert(TRAIN.to_string(), vec![0, 1]);
        splits.insert(TEST.to_string(), vec![2]);
        Dataset::new(g, tasks, 2, splits, Some(array![[0.5], [-0.5]])).unwrap()
    }

    #[test]
    fn bundle_round_trip() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn overlapping_splits_rejected() {
        let mut ds = tiny();
        ds.splits.get_mut(TEST).unwrap().push(0);
        assert!(matches!(ds.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn label_bound_enforced() {
        let mut ds = tiny();
        ds.tasks[0].label = 2;
        assert!(ds.validate().is_err());
    }

    #[test]
    fn class_vector_rows_must_match() {
        let mut ds = tiny();
        ds.class_vectors = Some(array![[1.0]]);
        assert!(ds.validate().is_err());
    }

    #[test]
    fn missing_split_is_config_error() {
        assert!(matches!(tiny().split(VAL), Err(Error::Config(_))));
    }

    #[test]
    fn malformed_task_line() {
        let err = parse_tasks("node 3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        let err = parse_tasks("tree 1 0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }
}
