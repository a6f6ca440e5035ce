//! Evaluation stack for Lean 4 statement autoformalization.
//!
//! * [`normalize`] cleans generator output into comparable statements.
//! * [`prover`] talks to a Lean REPL (or replays a recorded transcript).
//! * [`beq`] decides equivalence of two statements with tactic scripts.
//! * [`pipeline`] filters sampled candidates by type-checking and selects one.
//! * [`metrics`] scores metrics against human labels and aggregates runs.
//! * [`harness`] loads datasets and drives whole experiments.

pub mod beq;
pub mod exec;
pub mod harness;
mod landmarks;
mod lexer;
pub mod metrics;
pub mod normalize;
pub mod pipeline;
pub mod prover;
pub mod statement;

pub use exec::Execution;
pub use statement::{
    Candidate, CandidatePool, ContextMode, DecodeMode, Diagnostic, DirectionProof,
    EquivalenceVerdict, FormalStatement, GenerationConfig, Origin, Position, Severity,
    StatementError, Strategy, TypeCheckKind, TypeCheckStatus, Verdict, VerifRecord,
};
