use std::fs;
use std::path::Path;

use tasktree_core::dataset::{load_dataset, TEST, TRAIN, VAL};
use tasktree_core::synth::{generate, mean_clustering, write_benchmark, MotifConfig, SbmConfig, SynthConfig};
use tasktree_core::Graph;

fn config(seed: u64) -> SynthConfig {
    SynthConfig {
        domain_a: SbmConfig { nodes_per_class: 30, ..SbmConfig::default() },
        domain_b: MotifConfig { graphs_per_class: 30, ..MotifConfig::default() },
        seed,
        ..SynthConfig::default()
    }
}

fn degree_variance(g: &Graph) -> f64 {
    let n = g.num_nodes() as f64;
    let d: Vec<f64> = (0..g.num_nodes()).map(|v| g.degree(v) as f64).collect();
    let m = d.iter().sum::<f64>() / n;
    d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

#[test]
fn motif_classes_differ_in_structure() {
    let b = generate(&config(5)).unwrap().domain_b;
    let (mut clust, mut var) = ([0.0; 2], [0.0; 2]);
    let mut count = [0usize; 2];
    for t in &b.tasks {
        let part = b.graph.induced_subgraph(&t.nodes);
        clust[t.label] += mean_clustering(&part);
        var[t.label] += degree_variance(&part);
        count[t.label] += 1;
    }
    let [tri_c, star_c] = [clust[0] / count[0] as f64, clust[1] / count[1] as f64];
    let [tri_v, star_v] = [var[0] / count[0] as f64, var[1] / count[1] as f64];
    assert!(tri_c > star_c, "{tri_c} vs {star_c}");
    assert!(star_v > tri_v, "{star_v} vs {tri_v}");
}

#[test]
fn sbm_is_assortative() {
    let a = generate(&config(6)).unwrap().domain_a;
    let labels = a.labels();
    let within = a.graph.edges().filter(|&(u, v)| labels[u] == labels[v]).count();
    assert!(within * 2 > a.graph.num_edges());
}

#[test]
fn splits_partition_tasks() {
    let b = generate(&config(7)).unwrap();
    for ds in [&b.domain_a, &b.domain_b] {
        let mut all: Vec<usize> = [TRAIN, VAL, TEST].iter().flat_map(|s| ds.split(s).unwrap().to_vec()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.tasks.len()).collect::<Vec<_>>());
    }
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["domain_a", "domain_b"] {
        let mut files: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        for f in files {
            out.push((format!("{sub}/{}", f.file_name().unwrap().to_string_lossy()), fs::read(&f).unwrap()));
        }
    }
    out
}

#[test]
fn bundles_are_byte_identical_per_seed() {
    let (d1, d2, d3) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_benchmark(&generate(&config(8)).unwrap(), d1.path()).unwrap();
    write_benchmark(&generate(&config(8)).unwrap(), d2.path()).unwrap();
    write_benchmark(&generate(&config(9)).unwrap(), d3.path()).unwrap();
    let (a, b, c) = (read_tree(d1.path()), read_tree(d2.path()), read_tree(d3.path()));
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn written_bundles_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let bench = generate(&config(10)).unwrap();
    write_benchmark(&bench, dir.path()).unwrap();
    let a = load_dataset(dir.path().join("domain_a")).unwrap();
    assert_eq!(a.tasks, bench.domain_a.tasks);
    assert_eq!(a.num_classes, bench.domain_a.num_classes);
    assert_eq!(a.graph.num_edges(), bench.domain_a.graph.num_edges());
    let max = (a.graph.features() - bench.domain_a.graph.features()).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
    assert!(max < 1e-12);
}
