//! Instruction tuning: regress task-tree embeddings onto per-class vectors.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::dataset::{Dataset, TRAIN};
use crate::encoder::{backward, EncoderParams, Mode, Objective};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::optim::AdamW;
use crate::rng::SeedStream;
use crate::task::{embed_tasks, localize, TaskInstance};

/// One instruction vector per class.
#[derive(Debug, Clone, PartialEq)]
pub struct InstructionSet {
    pub vectors: Array2<f64>,
    pub source: Option<PathBuf>,
}

impl InstructionSet {
    pub fn new(vectors: Array2<f64>) -> Result<Self> {
        if vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("instruction vectors contain non-finite values".into()));
        }
        Ok(Self {
            vectors,
            source: None,
        })
    }

    /// Reads `class_vectors.txt`-style rows.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
        let m = crate::graph::io::parse_matrix(std::io::BufReader::new(f), &p.display().to_string())?;
        let mut set = Self::new(m)?;
        set.source = Some(p.to_path_buf());
        Ok(set)
    }

    /// The dataset's class vectors.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let cv = ds
            .class_vectors
            .as_ref()
            .ok_or_else(|| Error::Config("dataset has no class vectors".into()))?;
        Self::new(cv.clone())
    }

    pub fn check_width(&self, params: &EncoderParams) -> Result<()> {
        if self.vectors.ncols() != params.output_dim() {
            return Err(Error::Config(format!(
                "instruction width {} differs from embedding width {}",
                self.vectors.ncols(),
                params.output_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-6,
            batch_size: 4096,
            seed: 0,
        }
    }
}

/// `(1/n) Σ ‖z_i − ψ_{y_i}‖²` on post-projector task-tree embeddings.
pub fn sft_loss(
    params: &EncoderParams,
    g: &Graph,
    tasks: &[TaskInstance],
    instructions: &InstructionSet,
) -> Result<f64> {
    instructions.check_width(params)?;
    if let Some(t) = tasks.iter().find(|t| t.label >= instructions.vectors.nrows()) {
        return Err(Error::Config(format!("no instruction row for class {}", t.label)));
    }
    if tasks.is_empty() {
        return Ok(0.0);
    }
    let z = embed_tasks(params, g, tasks)?;
    let total: f64 = z
        .rows()
        .into_iter()
        .zip(tasks)
        .map(|(row, t)| {
            let d = &row - &instructions.vectors.row(t.label);
            d.dot(&d)
        })
        .sum();
    Ok(total / tasks.len() as f64)
}

/// Full-parameter tuning on the dataset's `train` split (every task when
/// the split is absent) toward its class vectors. The input is not modified.
pub fn specialize(pretrained: &EncoderParams, ds: &Dataset, cfg: &SftConfig) -> Result<EncoderParams> {
    let instructions = InstructionSet::from_dataset(ds)?;
    specialize_with(pretrained, &ds.graph, &ds.split_or_all(TRAIN), &instructions, cfg)
}

/// [`specialize`] with explicit tasks and instructions.
pub fn specialize_with(
    pretrained: &EncoderParams,
    g: &Graph,
    tasks: &[TaskInstance],
    instructions: &InstructionSet,
    cfg: &SftConfig,
) -> Result<EncoderParams> {
    instructions.check_width(pretrained)?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut params = pretrained.clone();
    if cfg.epochs == 0 || tasks.is_empty() {
        return Ok(params);
    }
    let root = SeedStream::new(cfg.seed).child("sft");
    let mut opt = AdamW::new(cfg.learning_rate, 0.0);
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    for epoch in 0..cfg.epochs {
        let es = root.indexed(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut es.rng_for("shuffle"));
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<TaskInstance> = chunk.iter().map(|&i| tasks[i].clone()).collect();
            let (sub, local) = localize(g, &batch, params.num_layers)?;
            let mut rng = es.child("dropout").indexed(b as u64).rng();
            let out = backward(
                &params,
                &sub,
                &local,
                Objective::Sft {
                    instructions: &instructions.vectors,
                },
                Mode::Train(&mut rng),
            )?;
            opt.step_encoder(&mut params, &out.grads)?;
        }
    }
    Ok(params)
}
