//! Dataset ingestion, split protocols, synthetic data and batching.

mod batch;
mod manifest;
mod split;
mod synthetic;
mod wfdb;

pub use batch::{batch_iterator, prepare_records, Batch, BatchIter, Mode, PreprocessConfig};
pub use manifest::{read_csv_signal, write_csv_signal, DatasetManifest, LabelSchema, ManifestEntry, LABEL_SEPARATOR};
pub use split::{check_task, class_counts, ptbxl_split, stratified_kfold, SplitPlan};
pub use synthetic::{generate_synthetic_dataset, signature_frequency, write_dataset, SyntheticSpec};
pub use wfdb::{load_wfdb_record, parse_header, write_wfdb_record, SignalSpec, WfdbHeader, DEFAULT_GAIN};
