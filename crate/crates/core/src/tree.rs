//! The two-level MILTree.
//!
//! The bag-space tree is built once from each bag's projection prototype and
//! never changes afterwards. Instance-space trees are built on first request
//! and cached.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::MilDataset;
use crate::error::{Error, Result};
use crate::layout::{radial_layout, LayoutConfig};
use crate::nj::{euclidean_matrix, nj_build, NjTree, NodeKind};
use crate::select::{select_prototypes, Method, PrototypePair, SelectionConfig};

/// Per-bag prototype state. `proto_proj` is fixed at build time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BagSlots {
    pub bag_id: String,
    proto_proj: usize,
    pub proto_class: usize,
    pub extra_protos: Vec<usize>,
    pub b_ix: usize,
    pub b_iy: usize,
}

impl BagSlots {
    fn from_pair(bag_id: &str, p: &PrototypePair) -> Self {
        Self {
            bag_id: bag_id.to_string(),
            proto_proj: p.b_ix,
            proto_class: p.b_ix,
            extra_protos: Vec::new(),
            b_ix: p.b_ix,
            b_iy: p.b_iy,
        }
    }

    pub fn proto_proj(&self) -> usize {
        self.proto_proj
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionKind {
    External,
    Internal,
}

impl fmt::Display for PositionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PositionKind::External => "external",
            PositionKind::Internal => "internal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagPosition {
    pub bag_id: String,
    pub kind: PositionKind,
    /// Virtual nodes on the path from the leaf to the tree center.
    pub depth_score: f64,
}

/// Which position pools `suggest_training` draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    #[default]
    Combined,
    External,
    Internal,
}

impl fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainingMode::Combined => "combined",
            TrainingMode::External => "external",
            TrainingMode::Internal => "internal",
        })
    }
}

impl FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "combined" => Ok(TrainingMode::Combined),
            "external" => Ok(TrainingMode::External),
            "internal" => Ok(TrainingMode::Internal),
            other => Err(Error::InvalidArgument(format!(
                "unknown training mode `{other}` (expected combined, external or internal)"
            ))),
        }
    }
}

#[derive(Debug)]
pub struct MilTree {
    dataset: Arc<MilDataset>,
    method: Method,
    cfg: SelectionConfig,
    pairs: Vec<PrototypePair>,
    bag_tree: NjTree,
    instance_trees: Vec<OnceLock<NjTree>>,
}

/// Builds the bag-space tree and the initial slots (`proto_class = proto_proj = b_ix`).
pub fn build_miltree(
    ds: Arc<MilDataset>,
    method: Method,
    cfg: &SelectionConfig,
) -> Result<(MilTree, Vec<BagSlots>)> {
    let pairs = select_prototypes(&ds, method, cfg)?;
    let features: Vec<&[f64]> = pairs
        .iter()
        .map(|p| ds.bag(p.bag).instances[p.b_ix].as_slice())
        .collect();
    let mut bag_tree = nj_build(&euclidean_matrix(&features)?);
    radial_layout(&mut bag_tree, &LayoutConfig::default());
    let slots = pairs
        .iter()
        .map(|p| BagSlots::from_pair(&ds.bag(p.bag).id, p))
        .collect();
    let instance_trees = (0..ds.len()).map(|_| OnceLock::new()).collect();
    Ok((
        MilTree {
            dataset: ds,
            method,
            cfg: *cfg,
            pairs,
            bag_tree,
            instance_trees,
        },
        slots,
    ))
}

impl MilTree {
    pub fn dataset(&self) -> &Arc<MilDataset> {
        &self.dataset
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn selection_config(&self) -> &SelectionConfig {
        &self.cfg
    }

    pub fn pairs(&self) -> &[PrototypePair] {
        &self.pairs
    }

    pub fn bag_tree(&self) -> &NjTree {
        &self.bag_tree
    }

    /// Slots as they were right after the build.
    pub fn initial_slots(&self) -> Vec<BagSlots> {
        self.pairs
            .iter()
            .map(|p| BagSlots::from_pair(&self.dataset.bag(p.bag).id, p))
            .collect()
    }

    pub fn proto_proj(&self, bag: usize) -> usize {
        self.pairs[bag].b_ix
    }

    /// Instance-space tree of one bag, built on first use.
    pub fn instance_tree(&self, bag_id: &str) -> Result<&NjTree> {
        let b = self.dataset.bag_index(bag_id)?;
        Ok(self.instance_tree_at(b))
    }

    pub fn instance_tree_at(&self, bag: usize) -> &NjTree {
        self.instance_trees[bag].get_or_init(|| {
            let d = euclidean_matrix(&self.dataset.bag(bag).instances).expect("bag instances share a dimension");
            let mut t = nj_build(&d);
            radial_layout(&mut t, &LayoutConfig::default());
            t
        })
    }

    /// Instance tree export; leaves carry `proto_proj`, `b_ix`, `b_iy` flags
    /// and, when given, the current `proto_class` flag.
    pub fn instance_tree_json(&self, bag_id: &str, slots: Option<&BagSlots>) -> Result<Value> {
        let b = self.dataset.bag_index(bag_id)?;
        let t = self.instance_tree_at(b);
        let p = self.pairs[b];
        let json = t.to_json_with(|id, obj| {
            if t.nodes()[id].kind == NodeKind::Leaf {
                obj.insert("proto_proj".into(), (id == p.b_ix).into());
                obj.insert("b_ix".into(), (id == p.b_ix).into());
                obj.insert("b_iy".into(), (id == p.b_iy).into());
                if let Some(s) = slots {
                    obj.insert("proto_class".into(), (id == s.proto_class).into());
                    obj.insert("extra".into(), s.extra_protos.contains(&id).into());
                }
            }
        });
        let mut out = Map::new();
        out.insert("bag_id".into(), bag_id.into());
        out.insert("label".into(), self.dataset.bag(b).label.into());
        if let Value::Object(m) = json {
            out.extend(m);
        }
        Ok(Value::Object(out))
    }

    /// Bag tree export annotated with bag ids, labels, positions and the
    /// projection prototype. Independent of any session state.
    pub fn layout_json(&self, positions: &[BagPosition]) -> Value {
        self.export_json(positions, None)
    }

    /// Bag tree export; with `slots`, leaves also carry `proto_class`.
    pub fn export_json(&self, positions: &[BagPosition], slots: Option<&[BagSlots]>) -> Value {
        self.bag_tree.to_json_with(|id, obj| {
            if id < self.dataset.len() {
                let bag = self.dataset.bag(id);
                obj.insert("bag_id".into(), bag.id.clone().into());
                obj.insert("label".into(), bag.label.into());
                if let Some(p) = positions.get(id) {
                    obj.insert("position".into(), p.kind.to_string().into());
                }
                obj.insert("proto_proj".into(), self.pairs[id].b_ix.into());
                if let Some(s) = slots {
                    obj.insert("proto_class".into(), s[id].proto_class.into());
                }
            }
        })
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Depth scores of every leaf: virtual nodes on its path to the center,
/// the center included.
pub fn depth_scores(t: &NjTree) -> Vec<f64> {
    if t.node_count() == 0 {
        return Vec::new();
    }
    let root = t.center();
    let (parent, order) = t.rooted(root);
    let mut count = vec![0usize; t.node_count()];
    for &v in &order {
        let own = usize::from(!t.is_leaf(v));
        count[v] = own + parent[v].map_or(0, |(p, _)| count[p]);
    }
    count[..t.leaf_count()].iter().map(|&c| c as f64).collect()
}

/// Position of every leaf of `t`: external when its depth score exceeds
/// the median over all leaves.
pub fn leaf_positions(t: &NjTree) -> Vec<(PositionKind, f64)> {
    let scores = depth_scores(t);
    let med = median(&scores);
    scores
        .into_iter()
        .map(|s| {
            let kind = if s > med { PositionKind::External } else { PositionKind::Internal };
            (kind, s)
        })
        .collect()
}

pub fn classify_positions(tree: &MilTree) -> Vec<BagPosition> {
    tree.dataset
        .bags()
        .iter()
        .zip(leaf_positions(&tree.bag_tree))
        .map(|(bag, (kind, depth_score))| BagPosition {
            bag_id: bag.id.clone(),
            kind,
            depth_score,
        })
        .collect()
}

/// Training bag indices, ascending.
///
/// Per class, `ceil(fraction * n_c / 2)` bags are drawn from each of the
/// external and internal pools (`Combined`), or twice that from one pool.
/// A short pool is topped up from the other one.
pub fn suggest_training(
    tree: &MilTree,
    positions: &[BagPosition],
    fraction: f64,
    seed: u64,
    mode: TrainingMode,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("fraction must be in (0, 1), got {fraction}")));
    }
    let ds = &tree.dataset;
    if positions.len() != ds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} positions for {} bags",
            positions.len(),
            ds.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for class in 0..ds.n_classes() {
        let members: Vec<usize> = (0..ds.len()).filter(|&b| ds.bag(b).label == class).collect();
        if members.is_empty() {
            return Err(Error::Dataset(format!("class {class} has no bags")));
        }
        let half = (fraction * members.len() as f64 / 2.0).ceil() as usize;
        let mut external: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&b| positions[b].kind == PositionKind::External)
            .collect();
        let mut internal: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&b| positions[b].kind == PositionKind::Internal)
            .collect();
        external.shuffle(&mut rng);
        internal.shuffle(&mut rng);
        let (first, second, want_first, want_second) = match mode {
            TrainingMode::Combined => (external, internal, half, half),
            TrainingMode::External => (external, internal, 2 * half, 0),
            TrainingMode::Internal => (internal, external, 2 * half, 0),
        };
        let take_first = want_first.min(first.len());
        let take_second = (want_second + want_first - take_first).min(second.len());
        let take_first = (take_first + want_second.saturating_sub(take_second)).min(first.len());
        chosen.extend_from_slice(&first[..take_first]);
        chosen.extend_from_slice(&second[..take_second]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}
