//! Command-line harness around the `fxam` library: schema-driven CSV
//! ingestion, k-fold evaluation with timing, and synthetic experiment sweeps.

pub mod data;
pub mod decompose;
pub mod error;
pub mod eval;

pub use data::{ingest_csv, ingest_csv_unlabeled, write_columns, write_dataset_csv, write_rows, write_truth_csv, ColumnKind, ColumnSpec, SchemaFile};
pub use decompose::decompose;
pub use error::{HarnessError, Result};
pub use eval::{
    kfold_split, rmse, run_experiment, sweep, with_schema_temporals, Ablation, EvalOptions, EvalReport, FoldResult,
    SweepOptions, SweepRow,
};
