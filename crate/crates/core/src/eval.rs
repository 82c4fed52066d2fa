//! Batch benchmark harness: the interactive loop with an automatic policy
//! standing in for the analyst.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{split, MilDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::select::{Method, SelectionConfig};
use crate::session::{Scope, Session};
use crate::svm::SvmConfig;
use crate::tree::{build_miltree, MilTree, TrainingMode};

/// Where the training bags come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainingSource {
    /// Tree-position based suggestion.
    Suggested { mode: TrainingMode },
    /// Stratified random split.
    Random,
}

impl Default for TrainingSource {
    fn default() -> Self {
        TrainingSource::Suggested {
            mode: TrainingMode::Combined,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub method: Method,
    pub train_fraction: f64,
    pub seed: u64,
    pub selection: SelectionConfig,
    pub svm: SvmConfig,
    /// Automatic update rounds after the first training.
    pub rounds: usize,
    pub source: TrainingSource,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            method: Method::Med,
            train_fraction: 0.3,
            seed: 1,
            selection: SelectionConfig::default(),
            svm: SvmConfig::default(),
            rounds: 1,
            source: TrainingSource::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionSummary {
    pub rounds_run: usize,
    pub swapped: usize,
    pub added: usize,
    /// Training accuracy after the first training and after every round.
    pub train_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub dataset: String,
    pub method: Method,
    pub train_fraction: f64,
    pub seed: u64,
    pub source: TrainingSource,
    pub n_train: usize,
    pub n_test: usize,
    /// Correctly classified test bags.
    pub matching: usize,
    pub non_matching: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Vec<Vec<usize>>,
    pub actions: ActionSummary,
}

impl EvalResult {
    pub const CSV_HEADER: &'static str =
        "dataset,method,source,seed,train_fraction,n_train,n_test,matching,non_matching,accuracy,precision,recall,f1";

    pub fn source_label(&self) -> String {
        match self.source {
            TrainingSource::Suggested { mode } => mode.to_string(),
            TrainingSource::Random => "random".into(),
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            self.dataset,
            self.method,
            self.source_label(),
            self.seed,
            self.train_fraction,
            self.n_train,
            self.n_test,
            self.matching,
            self.non_matching,
            self.accuracy,
            self.precision,
            self.recall,
            self.f1
        )
    }
}

/// Builds the tree, then runs [`run_benchmark_on`].
pub fn run_benchmark(ds: Arc<MilDataset>, cfg: &BenchConfig) -> Result<EvalResult> {
    let (tree, _) = build_miltree(ds, cfg.method, &cfg.selection)?;
    run_benchmark_on(Arc::new(tree), cfg)
}

/// Suggest (or split) → train → automatic update rounds → score the
/// bags outside the training set.
///
/// One update round swaps every misclassified training bag to `b_iy`
/// (medoid trees) or adds `b_iy` as an extra training row (salience
/// trees), then retrains. Rounds stop early once training is error-free.
pub fn run_benchmark_on(tree: Arc<MilTree>, cfg: &BenchConfig) -> Result<EvalResult> {
    if tree.method() != cfg.method {
        return Err(Error::InvalidArgument(format!(
            "tree was built with {} but the benchmark asks for {}",
            tree.method(),
            cfg.method
        )));
    }
    let mut session = Session::new(tree, cfg.svm);
    let training = match cfg.source {
        TrainingSource::Suggested { mode } => session.suggest(cfg.train_fraction, cfg.seed, mode)?,
        TrainingSource::Random => {
            let ds = session.dataset();
            split(ds, &SplitSpec::new(cfg.train_fraction, cfg.seed))?
                .train
                .into_iter()
                .map(|b| ds.bag(b).id.clone())
                .collect()
        }
    };
    session.set_training(&training)?;
    let mut report = session.train()?;
    let mut actions = ActionSummary {
        train_accuracy: vec![report.metrics.accuracy],
        ..Default::default()
    };
    for _ in 0..cfg.rounds {
        let wrong = report.misclassified();
        if wrong.is_empty() {
            break;
        }
        match cfg.method {
            Method::Med => {
                actions.swapped += wrong.len();
                session.swap_to_alternative(&wrong)?;
            }
            Method::Si => {
                for id in &wrong {
                    let b = session.dataset().bag_index(id)?;
                    let slot = &session.slots()[b];
                    if slot.b_iy != slot.proto_class && !slot.extra_protos.contains(&slot.b_iy) {
                        session.add_prototype(id, None)?;
                        actions.added += 1;
                    }
                }
            }
        }
        report = session.train()?;
        actions.rounds_run += 1;
        actions.train_accuracy.push(report.metrics.accuracy);
    }

    let test = session.classmatch(Scope::Test)?;
    let n_test = test.evaluated();
    let matching: usize = (0..test.confusion.len()).map(|c| test.confusion[c][c]).sum();
    Ok(EvalResult {
        dataset: session.dataset().name().to_string(),
        method: cfg.method,
        train_fraction: cfg.train_fraction,
        seed: cfg.seed,
        source: cfg.source,
        n_train: training.len(),
        n_test,
        matching,
        non_matching: n_test - matching,
        accuracy: test.metrics.accuracy,
        precision: test.metrics.precision,
        recall: test.metrics.recall,
        f1: test.metrics.f1,
        confusion: test.confusion,
        actions,
    })
}

/// The same benchmark with External, Internal and Combined suggestions.
pub fn positioning_experiment(tree: Arc<MilTree>, cfg: &BenchConfig) -> Result<Vec<EvalResult>> {
    if tree.dataset().len() < 40 {
        return Err(Error::InvalidArgument(format!(
            "positioning needs at least 40 bags, dataset has {}",
            tree.dataset().len()
        )));
    }
    [TrainingMode::External, TrainingMode::Internal, TrainingMode::Combined]
        .into_iter()
        .map(|mode| {
            run_benchmark_on(
                tree.clone(),
                &BenchConfig {
                    source: TrainingSource::Suggested { mode },
                    ..cfg.clone()
                },
            )
        })
        .collect()
}
