mod common;

use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use tasktree_core::encoder::{forward, Activation, EncoderParams, Mode};
use tasktree_core::graph::disjoint_union;
use tasktree_core::task::{
    augment_with_task_nodes, embed_tasks, encode_task_trees, ego_nodes, extract_ego_subgraph, localize,
    relevant_nodes, subtree_info,
};
use tasktree_core::{Graph, TaskInstance};

use common::*;

/// Relabels the nodes of `g` by `perm` (old id `v` becomes `perm[v]`).
fn permute(g: &Graph, perm: &[usize]) -> Graph {
    let edges: Vec<(usize, usize)> = g.edges().map(|(u, v)| (perm[u], perm[v])).collect();
    let mut x = Array2::zeros(g.features().dim());
    for (v, row) in g.features().rows().into_iter().enumerate() {
        x.row_mut(perm[v]).assign(&row);
    }
    Graph::new(&edges, x).unwrap()
}

fn explicit(task: &TaskInstance, g: &Graph) -> TaskInstance {
    let mut t = task.clone();
    t.nodes = relevant_nodes(task, g).unwrap();
    t.component = None;
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_matches_loop_reference(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.random_range(1..=4);
        let g = random_multigraph(d, &mut r);
        let act = if r.random::<bool>() { Activation::Relu } else { Activation::Identity };
        let p = random_params(d, r.random_range(1..=3), act, r.random::<bool>(), &mut r);
        let fast = forward(&p, &g, Mode::Eval).unwrap();
        let slow = naive_forward(&p, &neighbor_lists(&g), g.features(), |_| true);
        for (v, row) in slow.iter().enumerate() {
            for (k, x) in row.iter().enumerate() {
                prop_assert!((fast[[v, k]] - x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn augmented_mean_equals_direct_encoding(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.random_range(1..=3);
        let g = random_multigraph(d, &mut r);
        let tasks: Vec<TaskInstance> = (0..r.random_range(1..=6)).map(|_| random_task(&g, &mut r)).collect();
        let p = random_params(d, r.random_range(1..=3), Activation::Relu, false, &mut r);
        let direct = encode_task_trees(&p, &g, &tasks).unwrap();
        let aug = augment_with_task_nodes(&g, &tasks).unwrap();
        let via_virtual = aug.virtual_mean(&forward(&p, &g, Mode::Eval).unwrap());
        prop_assert!(max_abs_diff(&direct, &via_virtual) < 1e-12);
    }

    #[test]
    fn relabeling_nodes_leaves_embeddings_unchanged(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.random_range(1..=3);
        let g = random_multigraph(d, &mut r);
        let tasks: Vec<TaskInstance> = (0..4).map(|_| explicit(&random_task(&g, &mut r), &g)).collect();
        let p = random_params(d, r.random_range(1..=3), Activation::Relu, r.random::<bool>(), &mut r);
        let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
        perm.shuffle(&mut r);
        let h = permute(&g, &perm);
        let moved: Vec<TaskInstance> = tasks
            .iter()
            .map(|t| {
                let mut m = t.clone();
                m.nodes = t.nodes.iter().rev().map(|&v| perm[v]).collect();
                m
            })
            .collect();
        let a = embed_tasks(&p, &g, &tasks).unwrap();
        let b = embed_tasks(&p, &h, &moved).unwrap();
        prop_assert!(max_abs_diff(&a, &b) < 1e-12);
    }

    #[test]
    fn disjoint_parts_do_not_interact(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.random_range(1..=3);
        let g1 = random_multigraph(d, &mut r);
        let g2 = random_multigraph(d, &mut r);
        let p = random_params(d, r.random_range(1..=3), Activation::Relu, false, &mut r);
        let t = explicit(&random_task(&g1, &mut r), &g1);
        let alone = embed_tasks(&p, &g1, std::slice::from_ref(&t)).unwrap();
        let union = disjoint_union(&[&g1, &g2]).unwrap();
        let with_other = embed_tasks(&p, &union, std::slice::from_ref(&t)).unwrap();
        prop_assert!(max_abs_diff(&alone, &with_other) == 0.0);
        let shifted = TaskInstance::graph(t.nodes.iter().map(|&v| v + g2.num_nodes()).collect(), 0);
        let union_rev = disjoint_union(&[&g2, &g1]).unwrap();
        let other_side = embed_tasks(&p, &union_rev, std::slice::from_ref(&shifted)).unwrap();
        prop_assert!(max_abs_diff(&alone, &other_side) < 1e-12);
    }

    #[test]
    fn identity_activation_is_linear_in_features(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut r = rng(seed);
        let d = r.random_range(1..=3);
        let g = random_multigraph(d, &mut r);
        let mut p = random_params(d, r.random_range(1..=3), Activation::Identity, false, &mut r);
        p.projector.bias.fill(0.0);
        let tasks: Vec<TaskInstance> = (0..3).map(|_| random_task(&g, &mut r)).collect();
        let x1 = g.features().clone();
        let x2 = gaussian(g.num_nodes(), d, 1.0, &mut r);
        let mix = g.with_features(&x1 * a + &x2 * b).unwrap();
        let lhs = embed_tasks(&p, &mix, &tasks).unwrap();
        let e1 = embed_tasks(&p, &g, &tasks).unwrap();
        let e2 = embed_tasks(&p, &g.with_features(x2).unwrap(), &tasks).unwrap();
        prop_assert!(max_abs_diff(&lhs, &(e1 * a + e2 * b)) < 1e-10);
    }

    #[test]
    fn localizing_to_encoder_depth_is_exact(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.random_range(1..=3);
        let g = random_multigraph(d, &mut r);
        let tasks: Vec<TaskInstance> = (0..r.random_range(1..=4)).map(|_| random_task(&g, &mut r)).collect();
        let layers = r.random_range(1..=3);
        let p = random_params(d, layers, Activation::Relu, false, &mut r);
        let (sub, local) = localize(&g, &tasks, layers).unwrap();
        let full = embed_tasks(&p, &g, &tasks).unwrap();
        let part = embed_tasks(&p, &sub, &local).unwrap();
        prop_assert!(max_abs_diff(&full, &part) < 1e-12);
    }

    #[test]
    fn subtree_levels_match_recursive_means(seed in any::<u64>(), depth in 1usize..5) {
        let mut r = rng(seed);
        let g = random_multigraph(2, &mut r);
        let info = subtree_info(&g, depth).unwrap();
        prop_assert_eq!(info.depth(), depth);
        // Level l at node v, computed by recursing into neighbors.
        fn level(g: &Graph, v: usize, l: usize, k: usize) -> f64 {
            if l == 0 {
                return g.features()[[v, k]];
            }
            let nb = g.neighbors(v);
            if nb.is_empty() {
                return 0.0;
            }
            nb.iter().map(|&u| level(g, u, l - 1, k)).sum::<f64>() / nb.len() as f64
        }
        for l in 0..depth {
            for v in 0..g.num_nodes() {
                for k in 0..2 {
                    prop_assert!((info.levels[l][[v, k]] - level(&g, v, l, k)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn ego_sets_grow_with_hops(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_multigraph(1, &mut r);
        let roots = vec![r.random_range(0..g.num_nodes())];
        let mut prev = ego_nodes(&g, &roots, 0);
        prop_assert_eq!(&prev, &roots);
        for hops in 1..4 {
            let next = ego_nodes(&g, &roots, hops);
            prop_assert!(prev.iter().all(|v| next.contains(v)));
            let sub = extract_ego_subgraph(&g, &roots, hops).unwrap();
            prop_assert_eq!(sub.num_nodes(), next.len());
            prev = next;
        }
    }
}

#[test]
fn graph_task_embedding_is_mean_over_component() {
    let a = Graph::new(&[(0, 1), (1, 2)], ndarray::array![[1.0], [2.0], [3.0]]).unwrap();
    let b = Graph::new(&[(0, 1)], ndarray::array![[-1.0], [5.0]]).unwrap();
    let g = disjoint_union(&[&a, &b]).unwrap();
    let p = EncoderParams::identity(1, 1, Activation::Identity);
    let z = forward(&p, &g, Mode::Eval).unwrap();
    let comp = encode_task_trees(&p, &g, &[TaskInstance::component(1, 0)]).unwrap();
    let expect = z.select(Axis(0), &[3, 4]).mean_axis(Axis(0)).unwrap();
    assert!((comp[[0, 0]] - expect[0]).abs() < 1e-15);
}

#[test]
fn dropout_only_acts_in_train_mode() {
    let mut r = rng(5);
    let g = random_graph(8, 0.4, 3, 1.0, &mut r);
    let mut p = random_params(3, 2, Activation::Relu, false, &mut r);
    p.dropout = 0.5;
    let eval = forward(&p, &g, Mode::Eval).unwrap();
    assert_eq!(eval, forward(&p, &g, Mode::Eval).unwrap());
    let mut stream = rng(6);
    let train = forward(&p, &g, Mode::Train(&mut stream)).unwrap();
    assert_ne!(eval, train);
}
