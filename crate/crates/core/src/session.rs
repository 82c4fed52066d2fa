//! The analyst's train / inspect / update loop.
//!
//! Every state change is an [`Action`] appended to the history, so a saved
//! session is reproduced by replaying its history on a fresh session. Any
//! action drops the trained model; [`Session::train`] must be called again.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::MilDataset;
use crate::error::{Error, Result};
use crate::metrics::{score, Metrics};
use crate::select::{Method, SelectionConfig};
use crate::svm::{train_multiclass, MulticlassModel, SvmConfig};
use crate::tree::{build_miltree, classify_positions, suggest_training, BagPosition, BagSlots, MilTree, TrainingMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// Training bags only.
    Training,
    /// Every bag.
    All,
    /// Bags outside the training set.
    Test,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Training => "training",
            Scope::All => "all",
            Scope::Test => "test",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "training" => Ok(Scope::Training),
            "all" => Ok(Scope::All),
            "test" => Ok(Scope::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown scope `{other}` (expected training, all or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BagStatus {
    Correct,
    Misclassified,
    Untested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagResult {
    pub bag_id: String,
    pub label: usize,
    pub status: BagStatus,
    pub predicted: Option<usize>,
    pub decision: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMatchReport {
    pub scope: Scope,
    /// One entry per bag, in dataset order.
    pub bags: Vec<BagResult>,
    pub confusion: Vec<Vec<usize>>,
    pub metrics: Metrics,
}

impl ClassMatchReport {
    pub fn evaluated(&self) -> usize {
        self.bags.iter().filter(|b| b.status != BagStatus::Untested).count()
    }

    pub fn misclassified(&self) -> Vec<String> {
        self.bags
            .iter()
            .filter(|b| b.status == BagStatus::Misclassified)
            .map(|b| b.bag_id.clone())
            .collect()
    }
}

/// A state change, as accepted by [`Session::apply`] and stored in the history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    SetTraining { bag_ids: Vec<String> },
    SwapToAlternative { bag_ids: Vec<String> },
    SetPrototype { bag_id: String, index: usize },
    /// `index` defaults to the bag's `b_iy`.
    AddPrototype {
        bag_id: String,
        #[serde(default)]
        index: Option<usize>,
    },
    AddBags { bag_ids: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateAction {
    /// Position in the session's action sequence, starting at 1.
    pub seq: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBranch {
    pub node: usize,
    pub leaves: usize,
    pub errors: usize,
    pub rate: f64,
    pub bag_ids: Vec<String>,
}

/// Saved session: enough to rebuild the tree and replay the history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFile {
    pub dataset: String,
    pub dataset_hash: String,
    pub method: Method,
    pub selection: SelectionConfig,
    pub svm: SvmConfig,
    pub training: Vec<String>,
    pub slots: Vec<BagSlots>,
    pub history: Vec<UpdateAction>,
    pub trained: bool,
}

#[derive(Debug, Clone)]
pub struct Session {
    tree: Arc<MilTree>,
    slots: Vec<BagSlots>,
    training: BTreeSet<usize>,
    model: Option<MulticlassModel>,
    svm: SvmConfig,
    history: Vec<UpdateAction>,
}

impl Session {
    pub fn new(tree: Arc<MilTree>, svm: SvmConfig) -> Self {
        Self {
            slots: tree.initial_slots(),
            tree,
            training: BTreeSet::new(),
            model: None,
            svm,
            history: Vec::new(),
        }
    }

    pub fn from_dataset(ds: Arc<MilDataset>, method: Method, selection: &SelectionConfig, svm: SvmConfig) -> Result<Self> {
        svm.validate()?;
        let (tree, _) = build_miltree(ds, method, selection)?;
        Ok(Self::new(Arc::new(tree), svm))
    }

    pub fn tree(&self) -> &Arc<MilTree> {
        &self.tree
    }

    pub fn dataset(&self) -> &MilDataset {
        self.tree.dataset()
    }

    pub fn slots(&self) -> &[BagSlots] {
        &self.slots
    }

    pub fn svm_config(&self) -> &SvmConfig {
        &self.svm
    }

    pub fn model(&self) -> Option<&MulticlassModel> {
        self.model.as_ref()
    }

    pub fn history(&self) -> &[UpdateAction] {
        &self.history
    }

    pub fn training_indices(&self) -> Vec<usize> {
        self.training.iter().copied().collect()
    }

    /// Training bag ids in dataset order.
    pub fn training_ids(&self) -> Vec<String> {
        self.training.iter().map(|&b| self.dataset().bag(b).id.clone()).collect()
    }

    pub fn is_training(&self, bag: usize) -> bool {
        self.training.contains(&bag)
    }

    pub fn positions(&self) -> Vec<BagPosition> {
        classify_positions(&self.tree)
    }

    /// Suggested training bag ids; does not change the session.
    pub fn suggest(&self, fraction: f64, seed: u64, mode: TrainingMode) -> Result<Vec<String>> {
        let picked = suggest_training(&self.tree, &self.positions(), fraction, seed, mode)?;
        Ok(picked.into_iter().map(|b| self.dataset().bag(b).id.clone()).collect())
    }

    fn resolve(&self, ids: &[String]) -> Result<Vec<usize>> {
        let mut seen = BTreeSet::new();
        ids.iter()
            .map(|id| {
                let b = self.dataset().bag_index(id)?;
                if !seen.insert(b) {
                    return Err(Error::Duplicate(format!("bag `{id}` listed twice")));
                }
                Ok(b)
            })
            .collect()
    }

    fn check_index(&self, bag: usize, index: usize) -> Result<()> {
        let b = self.dataset().bag(bag);
        if index >= b.len() {
            return Err(Error::InstanceIndex {
                bag: b.id.clone(),
                index,
                len: b.len(),
            });
        }
        Ok(())
    }

    /// Validates and applies one action, then records it.
    pub fn apply(&mut self, action: Action) -> Result<()> {
        let recorded = match action {
            Action::SetTraining { bag_ids } => {
                let bags = self.resolve(&bag_ids)?;
                self.training = bags.into_iter().collect();
                Action::SetTraining { bag_ids }
            }
            Action::SwapToAlternative { bag_ids } => {
                for b in self.resolve(&bag_ids)? {
                    self.slots[b].proto_class = self.slots[b].b_iy;
                }
                Action::SwapToAlternative { bag_ids }
            }
            Action::SetPrototype { bag_id, index } => {
                let b = self.dataset().bag_index(&bag_id)?;
                self.check_index(b, index)?;
                self.slots[b].proto_class = index;
                Action::SetPrototype { bag_id, index }
            }
            Action::AddPrototype { bag_id, index } => {
                let b = self.dataset().bag_index(&bag_id)?;
                if !self.training.contains(&b) {
                    return Err(Error::Training(format!("bag `{bag_id}` is not in the training set")));
                }
                let index = index.unwrap_or(self.slots[b].b_iy);
                self.check_index(b, index)?;
                let slot = &self.slots[b];
                if slot.proto_class == index || slot.extra_protos.contains(&index) {
                    return Err(Error::Duplicate(format!(
                        "instance {index} of bag `{bag_id}` is already a prototype"
                    )));
                }
                self.slots[b].extra_protos.push(index);
                Action::AddPrototype {
                    bag_id,
                    index: Some(index),
                }
            }
            Action::AddBags { bag_ids } => {
                let bags = self.resolve(&bag_ids)?;
                if let Some(&b) = bags.iter().find(|b| self.training.contains(b)) {
                    return Err(Error::Duplicate(format!(
                        "bag `{}` is already in the training set",
                        self.dataset().bag(b).id
                    )));
                }
                self.training.extend(bags);
                Action::AddBags { bag_ids }
            }
        };
        self.model = None;
        self.history.push(UpdateAction {
            seq: self.history.len() as u64 + 1,
            action: recorded,
        });
        Ok(())
    }

    pub fn set_training(&mut self, bag_ids: &[String]) -> Result<()> {
        self.apply(Action::SetTraining {
            bag_ids: bag_ids.to_vec(),
        })
    }

    pub fn swap_to_alternative(&mut self, bag_ids: &[String]) -> Result<()> {
        self.apply(Action::SwapToAlternative {
            bag_ids: bag_ids.to_vec(),
        })
    }

    pub fn set_prototype(&mut self, bag_id: &str, index: usize) -> Result<()> {
        self.apply(Action::SetPrototype {
            bag_id: bag_id.into(),
            index,
        })
    }

    pub fn add_prototype(&mut self, bag_id: &str, index: Option<usize>) -> Result<()> {
        self.apply(Action::AddPrototype {
            bag_id: bag_id.into(),
            index,
        })
    }

    pub fn add_bags(&mut self, bag_ids: &[String]) -> Result<()> {
        self.apply(Action::AddBags {
            bag_ids: bag_ids.to_vec(),
        })
    }

    /// Training rows: each training bag's `proto_class`, then its extra
    /// prototypes, all labelled with the bag's class.
    pub fn training_rows(&self) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for &b in &self.training {
            let bag = self.dataset().bag(b);
            let slot = &self.slots[b];
            for &j in std::iter::once(&slot.proto_class).chain(&slot.extra_protos) {
                rows.push(bag.instances[j].clone());
                labels.push(bag.label);
            }
        }
        (rows, labels)
    }

    /// Trains on the current training rows and re-predicts the training bags.
    pub fn train(&mut self) -> Result<ClassMatchReport> {
        if self.training.is_empty() {
            return Err(Error::Training("training set is empty".into()));
        }
        let (rows, labels) = self.training_rows();
        self.model = Some(train_multiclass(&rows, &labels, self.dataset().n_classes(), &self.svm)?);
        self.classmatch(Scope::Training)
    }

    /// Predicts the bags in `scope` from their `proto_class` rows.
    pub fn classmatch(&self, scope: Scope) -> Result<ClassMatchReport> {
        let model = self.model.as_ref().ok_or(Error::NoModel)?;
        let ds = self.dataset();
        let k = ds.n_classes();
        let mut confusion = vec![vec![0usize; k]; k];
        let mut bags = Vec::with_capacity(ds.len());
        for (b, bag) in ds.bags().iter().enumerate() {
            let in_scope = match scope {
                Scope::Training => self.training.contains(&b),
                Scope::Test => !self.training.contains(&b),
                Scope::All => true,
            };
            let mut result = BagResult {
                bag_id: bag.id.clone(),
                label: bag.label,
                status: BagStatus::Untested,
                predicted: None,
                decision: None,
            };
            if in_scope {
                let (class, dv) = model.predict(&bag.instances[self.slots[b].proto_class])?;
                confusion[bag.label][class] += 1;
                result.status = if class == bag.label {
                    BagStatus::Correct
                } else {
                    BagStatus::Misclassified
                };
                result.predicted = Some(class);
                result.decision = Some(dv);
            }
            bags.push(result);
        }
        let metrics = score(&confusion)?;
        Ok(ClassMatchReport {
            scope,
            bags,
            confusion,
            metrics,
        })
    }

    pub fn classmatch_all(&self) -> Result<ClassMatchReport> {
        self.classmatch(Scope::All)
    }

    /// Virtual nodes of the bag tree (rooted at its center) whose subtree
    /// holds at least three evaluated bags and a non-zero error rate,
    /// highest rate first, then larger subtrees, then lower node id.
    pub fn error_branches(&self, report: &ClassMatchReport) -> Vec<ErrorBranch> {
        let t = self.tree.bag_tree();
        if t.node_count() == 0 {
            return Vec::new();
        }
        let (parent, order) = t.rooted(t.center());
        let mut below: Vec<Vec<usize>> = vec![Vec::new(); t.node_count()];
        for &v in order.iter().rev() {
            let mut acc = Vec::new();
            if t.is_leaf(v) && report.bags.get(v).is_some_and(|r| r.status != BagStatus::Untested) {
                acc.push(v);
            }
            for (c, _) in t.children(v, &parent) {
                acc.extend_from_slice(&below[c]);
            }
            below[v] = acc;
        }
        let mut out: Vec<ErrorBranch> = (t.leaf_count()..t.node_count())
            .filter_map(|v| {
                let mut leaves = below[v].clone();
                leaves.sort_unstable();
                let errors = leaves
                    .iter()
                    .filter(|&&b| report.bags[b].status == BagStatus::Misclassified)
                    .count();
                (leaves.len() >= 3 && errors > 0).then(|| ErrorBranch {
                    node: v,
                    leaves: leaves.len(),
                    errors,
                    rate: errors as f64 / leaves.len() as f64,
                    bag_ids: leaves.iter().map(|&b| report.bags[b].bag_id.clone()).collect(),
                })
            })
            .collect();
        out.sort_by(|a, b| {
            b.rate
                .total_cmp(&a.rate)
                .then(b.leaves.cmp(&a.leaves))
                .then(a.node.cmp(&b.node))
        });
        out
    }

    pub fn save(&self) -> SessionFile {
        SessionFile {
            dataset: self.dataset().name().to_string(),
            dataset_hash: self.dataset().content_hash(),
            method: self.tree.method(),
            selection: *self.tree.selection_config(),
            svm: self.svm,
            training: self.training_ids(),
            slots: self.slots.clone(),
            history: self.history.clone(),
            trained: self.model.is_some(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.save())?)
    }

    /// Rebuilds a session from `file` by replaying its history on `tree`,
    /// retraining if the saved session was trained.
    pub fn load(file: &SessionFile, tree: Arc<MilTree>) -> Result<Self> {
        let ds = tree.dataset();
        if ds.content_hash() != file.dataset_hash {
            return Err(Error::Session(format!(
                "dataset `{}` does not match the saved hash",
                ds.name()
            )));
        }
        if tree.method() != file.method || *tree.selection_config() != file.selection {
            return Err(Error::Session("tree was built with different selection settings".into()));
        }
        let mut s = Self::new(tree, file.svm);
        for (k, entry) in file.history.iter().enumerate() {
            if entry.seq != k as u64 + 1 {
                return Err(Error::Session(format!("history entry {} has seq {}", k + 1, entry.seq)));
            }
            s.apply(entry.action.clone())?;
        }
        if s.slots != file.slots || s.training_ids() != file.training {
            return Err(Error::Session("history does not reproduce the saved state".into()));
        }
        if file.trained {
            s.train()?;
        }
        Ok(s)
    }

    pub fn from_json(json: &str, tree: Arc<MilTree>) -> Result<Self> {
        let file: SessionFile = serde_json::from_str(json)?;
        Self::load(&file, tree)
    }

    /// A fresh session with only the first `len` history entries replayed.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        let mut s = Self::new(self.tree.clone(), self.svm);
        for entry in self.history.iter().take(len) {
            s.apply(entry.action.clone())?;
        }
        Ok(s)
    }
}
