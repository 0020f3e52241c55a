use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array1;
use rand::seq::index;
use tasktree_core::benchmark::{run_bench, BenchConfig, Pipeline};
use tasktree_core::dataset::{load_dataset, TRAIN};
use tasktree_core::encoder::{init_params, load_checkpoint, save_checkpoint, Activation};
use tasktree_core::eval::{finetune, in_context_eval, zero_shot_eval, EpisodeConfig, FinetuneConfig, Protocol};
use tasktree_core::pretrain::{pretrain as run_pretrain, CorruptionConfig, PretrainConfig};
use tasktree_core::rng::SeedStream;
use tasktree_core::specialize::{sft_loss, specialize_with, InstructionSet, SftConfig};
use tasktree_core::synth::{generate, sbm_graph, write_benchmark, SbmConfig, SynthConfig};
use tasktree_core::{Dataset, EncoderConfig, EncoderParams, TaskInstance};

use crate::verify::stability_suite;
use crate::{CliError, RunConfig};

type Result<T> = std::result::Result<T, CliError>;

fn encoder_config(cfg: &RunConfig) -> Result<EncoderConfig> {
    let mut enc = EncoderConfig::default();
    cfg.apply("hidden", &mut enc.hidden_dim)?;
    cfg.apply("layers", &mut enc.num_layers)?;
    cfg.apply("dropout", &mut enc.dropout)?;
    cfg.apply("tied", &mut enc.tied_weights)?;
    if let Some(a) = cfg.raw("activation") {
        enc.activation = a.parse::<Activation>()?;
    }
    Ok(enc)
}

/// Creates the output directory and records the merged config in it.
fn prepare_out(cfg: &RunConfig) -> Result<std::path::PathBuf> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("run.cfg"), cfg.to_string())?;
    Ok(dir)
}

fn emit(out: &mut dyn Write, path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn single_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dirs = cfg.data_dirs()?;
    match dirs.as_slice() {
        [d] => Ok(load_dataset(d)?),
        _ => Err(CliError::Usage(format!("expected one dataset directory, got {}", dirs.len()))),
    }
}

fn instructions(cfg: &RunConfig, ds: &Dataset) -> Result<InstructionSet> {
    Ok(match cfg.existing_path("class_vectors")? {
        Some(p) => InstructionSet::load(p)?,
        None => InstructionSet::from_dataset(ds)?,
    })
}

/// The configured checkpoint, or a seeded fresh encoder when none is given.
fn encoder_for(cfg: &RunConfig, feature_dim: usize, seed: u64) -> Result<EncoderParams> {
    Ok(match cfg.existing_path("checkpoint")? {
        Some(p) => load_checkpoint(p, Some(feature_dim))?,
        None => init_params(feature_dim, &encoder_config(cfg)?, SeedStream::new(seed).child("init").seed())?,
    })
}

pub fn pretrain(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let seed = cfg.seed()?;
    let datasets = cfg
        .data_dirs()?
        .iter()
        .map(load_dataset)
        .collect::<tasktree_core::Result<Vec<_>>>()?;
    let enc = encoder_config(cfg)?;
    let mut pc = PretrainConfig { seed, ..PretrainConfig::default() };
    cfg.apply("epochs", &mut pc.epochs)?;
    cfg.apply("lr", &mut pc.learning_rate)?;
    cfg.apply("batch_size", &mut pc.batch_size)?;
    cfg.apply("weight_decay", &mut pc.weight_decay)?;
    cfg.apply("lambda", &mut pc.lambda)?;
    cfg.apply("fanout", &mut pc.fanout)?;
    let mut corruption = CorruptionConfig::default();
    cfg.apply("edge_drop", &mut corruption.edge_drop_rate)?;
    cfg.apply("feature_mask", &mut corruption.feature_mask_rate)?;

    let (params, log) = run_pretrain(&datasets, &enc, &pc, &corruption)?;
    let dir = prepare_out(cfg)?;
    save_checkpoint(dir.join("checkpoint.ttck"), &params)?;
    emit(out, &dir.join("pretrain.log"), &log.to_string())
}

pub fn specialize(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let seed = cfg.seed()?;
    let ckpt = cfg.required_path("checkpoint")?;
    let ds = single_dataset(cfg)?;
    let params = load_checkpoint(ckpt, Some(ds.graph.feature_dim()))?;
    let ins = instructions(cfg, &ds)?;
    let mut sc = SftConfig { seed, ..SftConfig::default() };
    cfg.apply("epochs", &mut sc.epochs)?;
    cfg.apply("lr", &mut sc.learning_rate)?;
    cfg.apply("batch_size", &mut sc.batch_size)?;

    let train = ds.split_tasks(TRAIN)?;
    let before = sft_loss(&params, &ds.graph, &train, &ins)?;
    let tuned = specialize_with(&params, &ds.graph, &train, &ins, &sc)?;
    let after = sft_loss(&tuned, &ds.graph, &train, &ins)?;
    let dir = prepare_out(cfg)?;
    save_checkpoint(dir.join("specialized.ttck"), &tuned)?;
    emit(out, &dir.join("specialize.txt"), &format!("sft_loss before {before:?} after {after:?}\n"))
}

pub fn eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let seed = cfg.seed()?;
    let protocol: Protocol = cfg
        .raw("protocol")
        .ok_or_else(|| CliError::Usage("missing required 'protocol'".into()))?
        .parse()
        .map_err(|e: tasktree_core::Error| CliError::Usage(e.to_string()))?;
    let ds = single_dataset(cfg)?;
    let params = encoder_for(cfg, ds.graph.feature_dim(), seed)?;
    let mut ep = EpisodeConfig { seed, ..EpisodeConfig::default() };
    cfg.apply("ways", &mut ep.ways)?;
    cfg.apply("shots", &mut ep.shots)?;
    cfg.apply("tasks", &mut ep.num_tasks)?;
    cfg.apply("queries", &mut ep.queries_per_class)?;
    cfg.apply("distance", &mut ep.distance)?;

    let report = match protocol {
        Protocol::InContext => in_context_eval(&params, &ds, &ep)?,
        Protocol::ZeroShot => zero_shot_eval(&params, &ds, &instructions(cfg, &ds)?.vectors, &ep)?,
        Protocol::Finetune => {
            let mut fc = FinetuneConfig { seed, ..FinetuneConfig::default() };
            cfg.apply("epochs", &mut fc.epochs)?;
            cfg.apply("lr", &mut fc.learning_rate)?;
            cfg.apply("weight_decay", &mut fc.weight_decay)?;
            cfg.apply("patience", &mut fc.patience)?;
            cfg.apply("batch_size", &mut fc.batch_size)?;
            finetune(&params, &ds, &fc)?.1
        }
    };
    let dir = prepare_out(cfg)?;
    emit(out, &dir.join("eval.txt"), &format!("{report}\n"))
}

pub fn verify(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let seed = cfg.seed()?;
    let suite = cfg.raw("suite").unwrap_or("stability");
    if suite != "stability" {
        return Err(CliError::Usage(format!("unknown suite '{suite}' (available: stability)")));
    }
    let trials = cfg.get_or("trials", 200usize)?;
    let activation = match cfg.raw("activation") {
        Some(a) => a.parse::<Activation>()?,
        None => Activation::Relu,
    };
    let report = stability_suite(trials, activation, seed)?;
    let dir = prepare_out(cfg)?;
    emit(out, &dir.join("verify.txt"), &report.to_string())?;
    match report.violations() {
        0 => Ok(()),
        n => Err(CliError::Validation(format!("{n} of {trials} stability trials violated the bound chain"))),
    }
}

pub fn bench(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let seed = cfg.seed()?;
    let root = SeedStream::new(seed).child("bench_input");
    let batch = cfg.get_or("tasks", 512usize)?;
    let (graph, pool) = if cfg.raw("data").is_some() {
        let ds = single_dataset(cfg)?;
        (ds.graph, ds.tasks)
    } else {
        let nodes = cfg.get_or("nodes", 5000usize)?;
        let d = cfg.get_or("feature_dim", 8usize)?;
        let classes = 10;
        let sbm = SbmConfig {
            classes,
            nodes_per_class: nodes.div_ceil(classes),
            p_in: 0.01,
            p_out: 0.0005,
            ..SbmConfig::default()
        };
        let (g, labels) = sbm_graph(&sbm, d, &Array1::zeros(d), &mut root.rng_for("graph"))?;
        let tasks = labels.iter().enumerate().map(|(v, &y)| TaskInstance::node(v, y)).collect();
        (g, tasks)
    };
    let take = batch.min(pool.len());
    let tasks: Vec<TaskInstance> = index::sample(&mut root.rng_for("batch"), pool.len(), take)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    let params = encoder_for(cfg, graph.feature_dim(), seed)?;
    let mut bc = BenchConfig { seed, ..BenchConfig::default() };
    cfg.apply("reps", &mut bc.reps)?;
    cfg.apply("hops", &mut bc.hops)?;
    cfg.apply("fanout", &mut bc.fanout)?;

    let report = run_bench(&params, &graph, &tasks, &bc)?;
    let agree = (&report.tree_embeddings - &report.subgraph_embeddings)
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let text = format!(
        "nodes {} tasks {} reps {}\n{report}speedup {:.3}\nembedding_max_abs_diff {agree:e}\n",
        graph.num_nodes(),
        tasks.len(),
        bc.reps,
        report.total(Pipeline::Subgraph) / report.total(Pipeline::TaskTree),
    );
    let dir = prepare_out(cfg)?;
    emit(out, &dir.join("bench.txt"), &text)
}

pub fn synth(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let mut sc = SynthConfig { seed: cfg.seed()?, ..SynthConfig::default() };
    cfg.apply("feature_dim", &mut sc.feature_dim)?;
    cfg.apply("classes", &mut sc.domain_a.classes)?;
    cfg.apply("nodes_per_class", &mut sc.domain_a.nodes_per_class)?;
    cfg.apply("p_in", &mut sc.domain_a.p_in)?;
    cfg.apply("p_out", &mut sc.domain_a.p_out)?;
    cfg.apply("separation", &mut sc.domain_a.separation)?;
    cfg.apply("sigma", &mut sc.domain_a.sigma)?;
    cfg.apply("graphs_per_class", &mut sc.domain_b.graphs_per_class)?;
    cfg.apply("nodes_per_graph", &mut sc.domain_b.nodes_per_graph)?;
    cfg.apply("motif_sigma", &mut sc.domain_b.sigma)?;
    cfg.apply("domain_shift", &mut sc.domain_shift)?;
    cfg.apply("class_vector_dim", &mut sc.class_vector_dim)?;

    let bench = generate(&sc)?;
    let dir = prepare_out(cfg)?;
    write_benchmark(&bench, &dir)?;
    let (a, b) = (&bench.domain_a, &bench.domain_b);
    let text = format!(
        "domain_a nodes {} edges {} tasks {} classes {}\ndomain_b nodes {} edges {} tasks {} classes {}\n",
        a.graph.num_nodes(),
        a.graph.num_edges(),
        a.tasks.len(),
        a.num_classes,
        b.graph.num_nodes(),
        b.graph.num_edges(),
        b.tasks.len(),
        b.num_classes,
    );
    emit(out, &dir.join("synth.txt"), &text)
}
