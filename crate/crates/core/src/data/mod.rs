//! Dialogs, region features, batching and the synthetic corpus.

mod batch;
mod dialog;
mod features;
mod synthetic;

pub use batch::{batch_iter, RoundRef};
pub use dialog::{load_dialogs, Dataset, Dialog, RawDataset, RawDialog, RawRound, Round, DATASET_VERSION};
pub use features::{load_features, FeatureStore, ObjectFeatureSet, RegionBounds, FEATURE_MAGIC};
pub use synthetic::{gen_synthetic, oracle_scores, SyntheticConfig, SyntheticCorpus, SyntheticOracle};
