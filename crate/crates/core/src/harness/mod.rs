//! Dataset I/O, experiment drivers and the candidate-generation client.

pub mod data;
pub mod generate;
pub mod run;

pub use data::{
    load_jsonl, load_pairs, load_pools, load_references, load_verif_dataset, to_jsonl, write_atomic, DatasetKind,
    FieldMap, LabelRecord, LoadError, PoolRecord, ProblemRecord, Reference, SchemaIssue, StatementPair,
    UnparsedVerif, VerifDataset,
};
pub use generate::{render_prompt, EndpointConfig, GenerateError, GenerationRun, Generator};
pub use run::{
    run_tasks, verdict_counts, verif_report, AutoformOptions, AutoformRun, AutoformSummary, Harness, RunError,
};
