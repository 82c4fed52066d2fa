use std::collections::{BTreeSet, VecDeque};
use std::path::PathBuf;
use std::sync::Arc;

use milt_core::nj::NjTree;
use milt_core::synthetic::{generate_clustered, ClusteredConfig};
use milt_core::tree::{depth_scores, leaf_positions, PositionKind};
use milt_core::{
    build_miltree, classify_positions, euclidean_matrix, nj_build, suggest_training, Bag, Method, MilDataset,
    SelectionConfig, Session, SvmConfig, TrainingMode,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn musk1() -> Arc<MilDataset> {
    Arc::new(MilDataset::load_csv(data_file("musk1.csv")).unwrap())
}

/// Adjacency lists rebuilt from the edge list.
fn adjacency(t: &NjTree) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); t.node_count()];
    for e in t.edges() {
        adj[e.a].push(e.b);
        adj[e.b].push(e.a);
    }
    adj
}

fn bfs_parents(adj: &[Vec<usize>], root: usize) -> (Vec<usize>, Vec<usize>) {
    let mut parent = vec![usize::MAX; adj.len()];
    let mut hops = vec![usize::MAX; adj.len()];
    hops[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if hops[w] == usize::MAX {
                hops[w] = hops[v] + 1;
                parent[w] = v;
                queue.push_back(w);
            }
        }
    }
    (parent, hops)
}

/// Depth scores by brute force: the center minimizes the maximum hop
/// count (lowest id on ties), then virtual nodes are counted on each
/// leaf's path up to it.
fn oracle_depths(t: &NjTree) -> Vec<f64> {
    let adj = adjacency(t);
    let ecc: Vec<usize> = (0..adj.len())
        .map(|v| *bfs_parents(&adj, v).1.iter().max().unwrap())
        .collect();
    let best = *ecc.iter().min().unwrap();
    let center = ecc.iter().position(|&e| e == best).unwrap();
    let (parent, _) = bfs_parents(&adj, center);
    (0..t.leaf_count())
        .map(|leaf| {
            let mut v = leaf;
            let mut count = 0;
            loop {
                if !t.is_leaf(v) {
                    count += 1;
                }
                if v == center {
                    break;
                }
                v = parent[v];
            }
            count as f64
        })
        .collect()
}

fn oracle_external(depths: &[f64]) -> BTreeSet<usize> {
    let mut sorted = depths.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    (0..n).filter(|&i| depths[i] > median).collect()
}

fn external_set(t: &NjTree) -> BTreeSet<usize> {
    leaf_positions(t)
        .iter()
        .enumerate()
        .filter(|(_, (k, _))| *k == PositionKind::External)
        .map(|(i, _)| i)
        .collect()
}

/// Spine of seven virtual nodes 9..=15; leaves 0, 1 hang off one end,
/// leaves 2, 3 off the other and leaves 4..=8 off the inner spine nodes.
fn caterpillar() -> NjTree {
    let mut edges = Vec::new();
    for k in 0..6 {
        edges.push((9 + k, 10 + k, 1.0));
    }
    edges.extend([(0, 9, 1.0), (1, 9, 1.0), (2, 15, 1.0), (3, 15, 1.0)]);
    for k in 1..6 {
        edges.push((3 + k, 9 + k, 1.0));
    }
    NjTree::from_edges(9, 7, &edges).unwrap()
}

#[test]
fn caterpillar_end_leaves_are_external() {
    let t = caterpillar();
    assert_eq!(t.center(), 12);
    let depths = depth_scores(&t);
    assert_eq!(depths, oracle_depths(&t));
    assert_eq!(depths, vec![4.0, 4.0, 4.0, 4.0, 3.0, 2.0, 1.0, 2.0, 3.0]);
    assert_eq!(external_set(&t), BTreeSet::from([0, 1, 2, 3]));
}

#[test]
fn star_is_all_internal() {
    let edges: Vec<(usize, usize, f64)> = (0..6).map(|i| (i, 6, 1.0 + i as f64)).collect();
    let t = NjTree::from_edges(6, 1, &edges).unwrap();
    assert!(leaf_positions(&t).iter().all(|&(k, s)| k == PositionKind::Internal && s == 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn positions_match_path_counting(seed in any::<u64>(), m in 3usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Vec<f64>> = (0..m).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let t = nj_build(&euclidean_matrix(&points).unwrap());
        let depths = oracle_depths(&t);
        prop_assert_eq!(depth_scores(&t), depths.clone());
        prop_assert_eq!(external_set(&t), oracle_external(&depths));
    }
}

fn clustered(classes: usize, per_class: usize, seed: u64) -> Arc<MilDataset> {
    let cfg = ClusteredConfig {
        classes,
        bags_per_class: per_class,
        seed,
        ..ClusteredConfig::default()
    };
    Arc::new(generate_clustered(&cfg).unwrap().dataset)
}

#[test]
fn two_hundred_bags_give_198_virtual_nodes_and_a_partition() {
    let ds = clustered(4, 50, 3);
    assert_eq!(ds.len(), 200);
    let (tree, _) = build_miltree(ds, Method::Med, &SelectionConfig::default()).unwrap();
    assert_eq!(tree.bag_tree().leaf_count(), 200);
    assert_eq!(tree.bag_tree().internal_count(), 198);
    let positions = classify_positions(&tree);
    let ext = positions.iter().filter(|p| p.kind == PositionKind::External).count();
    let int = positions.iter().filter(|p| p.kind == PositionKind::Internal).count();
    assert_eq!(ext + int, 200);
    assert!(ext > 0 && int > 0);
}

#[test]
fn musk1_suggestion_counts() {
    let ds = musk1();
    let (tree, _) = build_miltree(ds.clone(), Method::Med, &SelectionConfig::default()).unwrap();
    let positions = classify_positions(&tree);
    for seed in 0..5 {
        let picked = suggest_training(&tree, &positions, 0.3, seed, TrainingMode::Combined).unwrap();
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
        let mut total = 0;
        for class in 0..2 {
            let members: Vec<usize> = (0..ds.len()).filter(|&b| ds.bag(b).label == class).collect();
            let half = (0.3 * members.len() as f64 / 2.0).ceil() as usize;
            let mine: Vec<usize> = picked.iter().copied().filter(|&b| ds.bag(b).label == class).collect();
            assert_eq!(mine.len(), 2 * half);
            let ext = mine.iter().filter(|&&b| positions[b].kind == PositionKind::External).count();
            let pool_ext = members.iter().filter(|&&b| positions[b].kind == PositionKind::External).count();
            let pool_int = members.len() - pool_ext;
            let expect_ext = if pool_ext < half {
                pool_ext
            } else if pool_int < half {
                2 * half - pool_int
            } else {
                half
            };
            assert_eq!(ext, expect_ext, "class {class}");
            total += mine.len();
        }
        // 47 positives give 2 * ceil(7.05) and 45 negatives 2 * ceil(6.75)
        assert_eq!(total, 30);
        let again = suggest_training(&tree, &positions, 0.3, seed, TrainingMode::Combined).unwrap();
        assert_eq!(picked, again);
    }
    let a = suggest_training(&tree, &positions, 0.3, 1, TrainingMode::Combined).unwrap();
    let b = suggest_training(&tree, &positions, 0.3, 2, TrainingMode::Combined).unwrap();
    assert_ne!(a, b);
}

#[test]
fn single_modes_draw_from_one_pool() {
    let ds = clustered(3, 20, 4);
    let (tree, _) = build_miltree(ds.clone(), Method::Med, &SelectionConfig::default()).unwrap();
    let positions = classify_positions(&tree);
    for (mode, kind) in [
        (TrainingMode::External, PositionKind::External),
        (TrainingMode::Internal, PositionKind::Internal),
    ] {
        let picked = suggest_training(&tree, &positions, 0.2, 9, mode).unwrap();
        for class in 0..3 {
            let pool = (0..ds.len())
                .filter(|&b| ds.bag(b).label == class && positions[b].kind == kind)
                .count();
            let from_pool = picked
                .iter()
                .filter(|&&b| ds.bag(b).label == class && positions[b].kind == kind)
                .count();
            assert_eq!(from_pool, pool.min(4), "{mode} class {class}");
            assert_eq!(picked.iter().filter(|&&b| ds.bag(b).label == class).count(), 4);
        }
    }
}

#[test]
fn class_of_one_bag_is_always_picked() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bags: Vec<Bag> = (0..12)
        .map(|i| Bag::new(format!("n{i}"), 0, vec![vec![rng.random(), rng.random()]]))
        .collect();
    bags.push(Bag::new("lonely", 1, vec![vec![5.0, 5.0]]));
    let ds = Arc::new(MilDataset::with_default_classes("one", 2, bags).unwrap());
    let (tree, _) = build_miltree(ds, Method::Med, &SelectionConfig::default()).unwrap();
    let positions = classify_positions(&tree);
    for mode in [TrainingMode::Combined, TrainingMode::External, TrainingMode::Internal] {
        for seed in 0..5 {
            let picked = suggest_training(&tree, &positions, 0.1, seed, mode).unwrap();
            assert!(picked.contains(&12));
            assert!(picked.iter().any(|&b| b < 12));
        }
    }
}

#[test]
fn instance_trees_cover_exactly_the_bag() {
    let ds = musk1();
    let (tree, slots) = build_miltree(ds.clone(), Method::Med, &SelectionConfig::default()).unwrap();
    for (b, bag) in ds.bags().iter().enumerate() {
        let t = tree.instance_tree(&bag.id).unwrap();
        assert_eq!(t.leaf_count(), bag.len());
        assert_eq!(t.internal_count(), bag.len().saturating_sub(2));
        assert!(std::ptr::eq(t, tree.instance_tree(&bag.id).unwrap()));
        let json = tree.instance_tree_json(&bag.id, Some(&slots[b])).unwrap();
        let leaves: Vec<&serde_json::Value> = json["nodes"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|n| n["kind"] == "leaf")
            .collect();
        let items: BTreeSet<u64> = leaves.iter().map(|n| n["item"].as_u64().unwrap()).collect();
        assert_eq!(items, (0..bag.len() as u64).collect());
        let flagged: Vec<u64> = leaves
            .iter()
            .filter(|n| n["proto_proj"] == true)
            .map(|n| n["item"].as_u64().unwrap())
            .collect();
        assert_eq!(flagged, vec![slots[b].proto_proj() as u64]);
    }
    assert!(tree.instance_tree("missing").is_err());
}

#[test]
fn rebuild_is_identical() {
    let ds = clustered(3, 15, 8);
    let cfg = SelectionConfig::default();
    for method in [Method::Med, Method::Si] {
        let (a, _) = build_miltree(ds.clone(), method, &cfg).unwrap();
        let (b, _) = build_miltree(ds.clone(), method, &cfg).unwrap();
        let pa = classify_positions(&a);
        let pb = classify_positions(&b);
        assert_eq!(a.layout_json(&pa).to_string(), b.layout_json(&pb).to_string());
    }
}

#[test]
fn session_updates_leave_the_layout_untouched() {
    let ds = clustered(3, 15, 11);
    let mut s = Session::from_dataset(ds.clone(), Method::Med, &SelectionConfig::default(), SvmConfig::default()).unwrap();
    let positions = s.positions();
    let before = s.tree().layout_json(&positions).to_string();
    let proj_before: Vec<usize> = s.slots().iter().map(|x| x.proto_proj()).collect();
    let training = s.suggest(0.3, 2, TrainingMode::Combined).unwrap();
    s.set_training(&training).unwrap();
    s.train().unwrap();
    let all: Vec<String> = ds.bags().iter().map(|b| b.id.clone()).collect();
    s.swap_to_alternative(&all).unwrap();
    for id in &all {
        let b = ds.bag_index(id).unwrap();
        let n = ds.bag(b).len();
        s.set_prototype(id, n - 1).unwrap();
    }
    let first = ds.bag_index(&training[0]).unwrap();
    if ds.bag(first).len() > 1 {
        s.add_prototype(&training[0], Some(0)).unwrap();
    }
    let rest: Vec<String> = all.iter().filter(|id| !training.contains(id)).cloned().collect();
    s.add_bags(&rest).unwrap();
    s.train().unwrap();
    assert_eq!(s.tree().layout_json(&s.positions()).to_string(), before);
    let proj_after: Vec<usize> = s.slots().iter().map(|x| x.proto_proj()).collect();
    assert_eq!(proj_before, proj_after);
}
