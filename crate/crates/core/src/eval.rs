//! Downstream protocols and metrics.
//!
//! * fine-tuning: encoder plus a linear classifier trained jointly with
//!   cross-entropy, early-stopped on the validation split;
//! * in-context: k-shot episodes classified by the nearest support-mean
//!   prototype, no parameter updates;
//! * zero-shot: the same episodes with class vectors as prototypes.
//!
//! All protocols read post-projector task-tree embeddings.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::dataset::{Dataset, TEST, TRAIN, VAL};
use crate::encoder::{backward, EncoderParams, Linear, Mode, Objective};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::norm;
use crate::optim::AdamW;
use crate::rng::SeedStream;
use crate::task::{embed_tasks, localize, TaskInstance, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Finetune,
    InContext,
    ZeroShot,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Finetune => "finetune",
            Protocol::InContext => "incontext",
            Protocol::ZeroShot => "zeroshot",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finetune" => Ok(Protocol::Finetune),
            "incontext" => Ok(Protocol::InContext),
            "zeroshot" => Ok(Protocol::ZeroShot),
            other => Err(Error::Config(format!("unknown protocol '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    Auc,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Accuracy => "accuracy",
            Metric::Auc => "auc",
        })
    }
}

/// One evaluation outcome, rendered as `protocol metric value num_tasks seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub metric: Metric,
    pub value: f64,
    pub num_tasks: usize,
    pub seed: u64,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {:?} {} {}",
            self.protocol, self.metric, self.value, self.num_tasks, self.seed
        )
    }
}

/// Fraction of exact matches.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::MetricUndefined("accuracy of an empty set".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Area under the ROC curve as the Mann–Whitney statistic, ties by midranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::MetricUndefined("auc with non-finite scores".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::MetricUndefined("auc needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Distance {
    #[default]
    Euclidean,
    Cosine,
}

impl FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Distance::Euclidean),
            "cosine" => Ok(Distance::Cosine),
            other => Err(Error::Config(format!("unknown distance '{other}'"))),
        }
    }
}

impl Distance {
    fn between(self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match self {
            Distance::Euclidean => {
                let d = &a - &b;
                d.dot(&d)
            }
            Distance::Cosine => {
                let denom = norm(a) * norm(b);
                if denom == 0.0 {
                    1.0
                } else {
                    1.0 - a.dot(&b) / denom
                }
            }
        }
    }
}

/// Class prototypes: row `k` belongs to `class_ids[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub vectors: Array2<f64>,
    pub class_ids: Vec<usize>,
}

impl PrototypeSet {
    /// Class id of the nearest prototype for every row of `z`; ties go to
    /// the earlier prototype.
    pub fn classify(&self, z: &Array2<f64>, distance: Distance) -> Vec<usize> {
        z.rows()
            .into_iter()
            .map(|row| {
                let mut best = (f64::INFINITY, 0);
                for (k, p) in self.vectors.rows().into_iter().enumerate() {
                    let d = distance.between(row, p);
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                self.class_ids[best.1]
            })
            .collect()
    }
}

/// Episode sampling parameters shared by the in-context and zero-shot protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub ways: usize,
    pub shots: usize,
    pub num_tasks: usize,
    /// Queries drawn per sampled class, capped by what remains after support.
    pub queries_per_class: usize,
    pub seed: u64,
    pub distance: Distance,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            ways: 5,
            shots: 3,
            num_tasks: 500,
            queries_per_class: 10,
            seed: 0,
            distance: Distance::Euclidean,
        }
    }
}

impl EpisodeConfig {
    fn validate(&self) -> Result<()> {
        if self.ways == 0 || self.num_tasks == 0 || self.queries_per_class == 0 {
            return Err(Error::Config("ways, episodes and queries must be positive".into()));
        }
        Ok(())
    }
}

fn members_by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut by: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by.entry(y).or_default().push(i);
    }
    by
}

fn sample_classes<R: Rng>(classes: &[usize], ways: usize, rng: &mut R) -> Vec<usize> {
    let mut picked: Vec<usize> = index::sample(rng, classes.len(), ways)
        .into_iter()
        .map(|i| classes[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Mean in-context accuracy over episodes on precomputed embeddings.
pub fn in_context_on_embeddings(z: &Array2<f64>, labels: &[usize], cfg: &EpisodeConfig) -> Result<f64> {
    cfg.validate()?;
    if cfg.shots == 0 {
        return Err(Error::Config("in-context episodes need at least one shot".into()));
    }
    if z.nrows() != labels.len() {
        return Err(Error::Dimension("one label per embedding row required".into()));
    }
    let by = members_by_class(labels);
    if by.is_empty() {
        return Err(Error::Sampling("no instances to sample episodes from".into()));
    }
    if let Some((c, m)) = by.iter().find(|(_, m)| m.len() < cfg.shots + 1) {
        return Err(Error::Sampling(format!(
            "class {c} has {} instances, episodes need {}",
            m.len(),
            cfg.shots + 1
        )));
    }
    let classes: Vec<usize> = by.keys().copied().collect();
    let ways = cfg.ways.min(classes.len());
    let root = SeedStream::new(cfg.seed).child("episode");
    let mut total = 0.0;
    for e in 0..cfg.num_tasks {
        let mut rng = root.indexed(e as u64).rng();
        let picked = sample_classes(&classes, ways, &mut rng);
        let mut protos = Array2::zeros((ways, z.ncols()));
        let mut queries = Vec::new();
        for (k, c) in picked.iter().enumerate() {
            let mut m = by[c].clone();
            m.shuffle(&mut rng);
            let (support, rest) = m.split_at(cfg.shots);
            for &i in support {
                let mut r = protos.row_mut(k);
                r += &z.row(i);
            }
            protos.row_mut(k).mapv_inplace(|v| v / cfg.shots as f64);
            queries.extend(rest.iter().take(cfg.queries_per_class).map(|&i| (i, *c)));
        }
        let protos = PrototypeSet {
            vectors: protos,
            class_ids: picked,
        };
        total += episode_accuracy(z, &queries, &protos, cfg.distance);
    }
    Ok(total / cfg.num_tasks as f64)
}

fn episode_accuracy(z: &Array2<f64>, queries: &[(usize, usize)], protos: &PrototypeSet, d: Distance) -> f64 {
    let idx: Vec<usize> = queries.iter().map(|q| q.0).collect();
    let qz = z.select(Axis(0), &idx);
    let preds = protos.classify(&qz, d);
    let hits = preds.iter().zip(queries).filter(|(p, q)| **p == q.1).count();
    hits as f64 / queries.len() as f64
}

/// Mean zero-shot accuracy over episodes with `class_vectors` as prototypes.
pub fn zero_shot_on_embeddings(
    z: &Array2<f64>,
    labels: &[usize],
    class_vectors: &Array2<f64>,
    cfg: &EpisodeConfig,
) -> Result<f64> {
    cfg.validate()?;
    if z.nrows() != labels.len() {
        return Err(Error::Dimension("one label per embedding row required".into()));
    }
    if class_vectors.ncols() != z.ncols() {
        return Err(Error::Config(format!(
            "class vectors have width {}, embeddings {}",
            class_vectors.ncols(),
            z.ncols()
        )));
    }
    let by = members_by_class(labels);
    if let Some(c) = by.keys().find(|&&c| c >= class_vectors.nrows()) {
        return Err(Error::Config(format!("no class vector for class {c}")));
    }
    if by.is_empty() {
        return Err(Error::Sampling("no instances to sample episodes from".into()));
    }
    let classes: Vec<usize> = by.keys().copied().collect();
    let ways = cfg.ways.min(classes.len());
    let root = SeedStream::new(cfg.seed).child("episode");
    let mut total = 0.0;
    for e in 0..cfg.num_tasks {
        let mut rng = root.indexed(e as u64).rng();
        let picked = sample_classes(&classes, ways, &mut rng);
        let mut queries = Vec::new();
        for c in &picked {
            let mut m = by[c].clone();
            m.shuffle(&mut rng);
            queries.extend(m.iter().take(cfg.queries_per_class).map(|&i| (i, *c)));
        }
        let protos = PrototypeSet {
            vectors: class_vectors.select(Axis(0), &picked),
            class_ids: picked,
        };
        total += episode_accuracy(z, &queries, &protos, cfg.distance);
    }
    Ok(total / cfg.num_tasks as f64)
}

/// In-context protocol on the dataset's `test` split (every task when the
/// split is absent).
pub fn in_context_eval(params: &EncoderParams, ds: &Dataset, cfg: &EpisodeConfig) -> Result<EvalReport> {
    let tasks = ds.split_or_all(TEST);
    let z = embed_tasks(params, &ds.graph, &tasks)?;
    let labels: Vec<usize> = tasks.iter().map(|t| t.label).collect();
    Ok(EvalReport {
        protocol: Protocol::InContext,
        metric: Metric::Accuracy,
        value: in_context_on_embeddings(&z, &labels, cfg)?,
        num_tasks: cfg.num_tasks,
        seed: cfg.seed,
    })
}

/// Zero-shot protocol on the dataset's `test` split (every task when the
/// split is absent).
pub fn zero_shot_eval(
    params: &EncoderParams,
    ds: &Dataset,
    class_vectors: &Array2<f64>,
    cfg: &EpisodeConfig,
) -> Result<EvalReport> {
    if class_vectors.ncols() != params.output_dim() {
        return Err(Error::Config(format!(
            "class vectors have width {}, encoder emits {}",
            class_vectors.ncols(),
            params.output_dim()
        )));
    }
    let tasks = ds.split_or_all(TEST);
    let z = embed_tasks(params, &ds.graph, &tasks)?;
    let labels: Vec<usize> = tasks.iter().map(|t| t.label).collect();
    Ok(EvalReport {
        protocol: Protocol::ZeroShot,
        metric: Metric::Accuracy,
        value: zero_shot_on_embeddings(&z, &labels, class_vectors, cfg)?,
        num_tasks: cfg.num_tasks,
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            patience: 200,
            batch_size: 4096,
            seed: 0,
        }
    }
}

/// Encoder plus linear classifier on its embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetunedModel {
    pub params: EncoderParams,
    pub head: Linear,
}

impl FinetunedModel {
    pub fn logits(&self, g: &Graph, tasks: &[TaskInstance]) -> Result<Array2<f64>> {
        self.head.apply(&embed_tasks(&self.params, g, tasks)?)
    }

    /// `metric` of the classifier on `tasks`. For AUC the score of a task
    /// is `logit[1] − logit[0]`.
    pub fn score(&self, g: &Graph, tasks: &[TaskInstance], metric: Metric) -> Result<f64> {
        let logits = self.logits(g, tasks)?;
        let labels: Vec<usize> = tasks.iter().map(|t| t.label).collect();
        match metric {
            Metric::Accuracy => {
                let preds: Vec<usize> = logits
                    .rows()
                    .into_iter()
                    .map(|r| {
                        r.iter()
                            .enumerate()
                            .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                            .0
                    })
                    .collect();
                accuracy(&preds, &labels)
            }
            Metric::Auc => {
                if logits.ncols() != 2 {
                    return Err(Error::MetricUndefined("auc needs a binary classifier".into()));
                }
                let scores: Vec<f64> = logits.rows().into_iter().map(|r| r[1] - r[0]).collect();
                let pos: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
                auc(&scores, &pos)
            }
        }
    }
}

/// AUC for binary edge datasets, accuracy otherwise.
pub fn metric_for(ds: &Dataset) -> Metric {
    if ds.num_classes == 2 && !ds.tasks.is_empty() && ds.tasks.iter().all(|t| t.kind == TaskKind::Edge) {
        Metric::Auc
    } else {
        Metric::Accuracy
    }
}

/// Trains encoder and a fresh linear head with cross-entropy on the
/// `train` split, keeps the parameters with the best `val` metric and
/// reports on `test`.
pub fn finetune(pretrained: &EncoderParams, ds: &Dataset, cfg: &FinetuneConfig) -> Result<(FinetunedModel, EvalReport)> {
    let train = ds.split_tasks(TRAIN)?;
    let val = ds.split_tasks(VAL)?;
    let test = ds.split_tasks(TEST)?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if ds.num_classes == 0 {
        return Err(Error::Config("dataset has no classes".into()));
    }
    let metric = metric_for(ds);
    let root = SeedStream::new(cfg.seed).child("finetune");
    let mut model = FinetunedModel {
        params: pretrained.clone(),
        head: Linear::glorot(ds.num_classes, pretrained.output_dim(), &mut root.rng_for("head")),
    };
    let mut best = model.clone();
    let mut best_val = model.score(&ds.graph, &val, metric)?;
    let mut stale = 0;
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        if train.is_empty() {
            break;
        }
        let es = root.child("epoch").indexed(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut es.rng_for("shuffle"));
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<TaskInstance> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (sub, local) = localize(&ds.graph, &batch, model.params.num_layers)?;
            let mut rng = es.child("dropout").indexed(b as u64).rng();
            let out = backward(
                &model.params,
                &sub,
                &local,
                Objective::CrossEntropy { head: &model.head },
                Mode::Train(&mut rng),
            )?;
            let hg = out.head_grads.expect("cross-entropy returns head gradients");
            opt.step_with_head(&mut model.params, &out.grads, &mut model.head, &hg)?;
        }
        let v = model.score(&ds.graph, &val, metric)?;
        if v > best_val {
            best_val = v;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let value = best.score(&ds.graph, &test, metric)?;
    let report = EvalReport {
        protocol: Protocol::Finetune,
        metric,
        value,
        num_tasks: test.len(),
        seed: cfg.seed,
    };
    Ok((best, report))
}

/// `count` distinct node pairs `u < v` with no edge between them, drawn
/// uniformly by rejection.
pub fn sample_negative_edges<R: Rng + ?Sized>(g: &Graph, count: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    let n = g.num_nodes();
    let pairs = n * n.saturating_sub(1) / 2;
    let non_edges = pairs - g.edges().filter(|(u, v)| u != v).count();
    if count > non_edges {
        return Err(Error::Sampling(format!(
            "requested {count} negative edges, graph has {non_edges} non-edges"
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        let (u, v) = (u.min(v), u.max(v));
        if u == v || g.has_edge(u, v) || !seen.insert((u, v)) {
            continue;
        }
        out.push((u, v));
    }
    Ok(out)
}

/// Positive edge tasks (label 1) followed by as many sampled non-edges (label 0).
pub fn link_prediction_tasks<R: Rng + ?Sized>(
    g: &Graph,
    positives: &[(usize, usize)],
    rng: &mut R,
) -> Result<Vec<TaskInstance>> {
    let mut tasks: Vec<TaskInstance> = positives.iter().map(|&(u, v)| TaskInstance::edge(u, v, 1)).collect();
    for (u, v) in sample_negative_edges(g, positives.len(), rng)? {
        tasks.push(TaskInstance::edge(u, v, 0));
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Activation;
    use ndarray::array;

    #[test]
    fn accuracy_basic() {
        assert_eq!(accuracy(&[0, 1, 1], &[0, 1, 0]).unwrap(), 2.0 / 3.0);
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn auc_extremes() {
        let labels = [false, false, true, true];
        assert_eq!(auc(&[0.1, 0.2, 0.3, 0.4], &labels).unwrap(), 1.0);
        assert_eq!(auc(&[0.4, 0.3, 0.2, 0.1], &labels).unwrap(), 0.0);
        assert_eq!(auc(&[0.5; 4], &labels).unwrap(), 0.5);
    }

    #[test]
    fn auc_single_class_undefined() {
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::MetricUndefined(_))));
    }

    #[test]
    fn prototype_tie_goes_to_first() {
        let p = PrototypeSet {
            vectors: array![[1.0, 0.0], [-1.0, 0.0]],
            class_ids: vec![7, 3],
        };
        assert_eq!(p.classify(&array![[0.0, 1.0], [-2.0, 0.0]], Distance::Euclidean), vec![7, 3]);
    }

    #[test]
    fn one_way_episodes_are_perfect() {
        let z = array![[0.0], [1.0], [2.0], [3.0]];
        let cfg = EpisodeConfig { ways: 1, shots: 1, num_tasks: 10, ..Default::default() };
        assert_eq!(in_context_on_embeddings(&z, &[4, 4, 4, 4], &cfg).unwrap(), 1.0);
    }

    #[test]
    fn too_few_instances_names_class() {
        let z = array![[0.0], [1.0], [2.0]];
        let cfg = EpisodeConfig { ways: 2, shots: 1, num_tasks: 1, ..Default::default() };
        let err = in_context_on_embeddings(&z, &[0, 0, 5], &cfg).unwrap_err();
        assert!(matches!(err, Error::Sampling(m) if m.contains("class 5")));
    }

    #[test]
    fn zero_shot_width_mismatch() {
        let p = EncoderParams::identity(2, 1, Activation::Identity);
        let g = Graph::new(&[], array![[1.0, 0.0]]).unwrap();
        let ds = Dataset::new(g, vec![TaskInstance::node(0, 0)], 1, Default::default(), None).unwrap();
        let cfg = EpisodeConfig::default();
        assert!(matches!(zero_shot_eval(&p, &ds, &array![[1.0]], &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn negative_edges_are_non_edges() {
        let g = Graph::new(&[(0, 1), (1, 2), (2, 3)], Array2::zeros((6, 1))).unwrap();
        let mut rng = SeedStream::new(2).rng();
        let neg = sample_negative_edges(&g, 10, &mut rng).unwrap();
        assert_eq!(neg.len(), 10);
        assert!(neg.iter().all(|&(u, v)| u < v && !g.has_edge(u, v)));
        assert!(sample_negative_edges(&g, 13, &mut rng).is_err());
    }

    #[test]
    fn finetune_requires_splits() {
        let p = EncoderParams::identity(1, 1, Activation::Identity);
        let g = Graph::new(&[], array![[1.0]]).unwrap();
        let ds = Dataset::new(g, vec![TaskInstance::node(0, 0)], 1, Default::default(), None).unwrap();
        assert!(matches!(finetune(&p, &ds, &FinetuneConfig::default()), Err(Error::Config(_))));
    }
}
