//! Interactive multiple-instance learning workbench.
//!
//! Bags are mapped to single instance prototypes, laid out in a two-level
//! neighbor-joining tree, and classified with a linear SVM. A [`Session`]
//! tracks the analyst's train / inspect / update loop.

pub mod data;
pub mod error;
pub mod eval;
pub mod kmedoids;
pub mod layout;
pub mod metrics;
pub mod nj;
pub mod select;
pub mod session;
pub mod svm;
pub mod synthetic;
pub mod tree;

pub use data::{Bag, MilDataset, Split, SplitSpec};
pub use error::{Error, Result};
pub use eval::{positioning_experiment, run_benchmark, run_benchmark_on, BenchConfig, EvalResult, TrainingSource};
pub use layout::{radial_layout, LayoutConfig};
pub use nj::{euclidean_matrix, nj_build, DistanceMatrix, NjTree};
pub use metrics::{score, Metrics};
pub use select::{Method, PrototypePair, SelectionConfig};
pub use session::{Action, ClassMatchReport, Scope, Session, SessionFile};
pub use svm::{MulticlassModel, SvmConfig, SvmVariant};
pub use tree::{build_miltree, classify_positions, suggest_training, BagPosition, BagSlots, MilTree, TrainingMode};
