//! Domain types shared across the crate. Everything here is an immutable
//! value with no I/O.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::landmarks::{count_declarations, find_declaration};

/// Prefix of the placeholder names given to cleaned candidates.
pub const DUMMY_PREFIX: &str = "dummy_thm_";

/// Placeholder name for the `k`-th candidate of a pool.
pub fn dummy_name(k: usize) -> String {
    format!("{DUMMY_PREFIX}{k}")
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatementError {
    #[error("no theorem declaration found")]
    NoDeclaration,
    #[error("expected exactly one top-level declaration, found {0}")]
    MultipleDeclarations(usize),
    #[error("statement contains a proof body at byte {0}")]
    HasProof(usize),
    #[error("declaration has no name")]
    Anonymous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Reference,
    Prediction,
    Synthetic,
}

/// A theorem header plus the source text needed to elaborate it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FormalStatement {
    name: String,
    context: String,
    signature_src: String,
    origin: Origin,
}

impl FormalStatement {
    /// Builds a statement from its parts, checking that `signature_src` holds
    /// exactly one proof-free declaration.
    pub fn new(
        context: impl Into<String>,
        signature_src: impl Into<String>,
        origin: Origin,
    ) -> Result<Self, StatementError> {
        let context = context.into();
        let signature_src = signature_src.into().trim().to_string();
        let decl = find_declaration(&signature_src).ok_or(StatementError::NoDeclaration)?;
        if decl.modifiers_start != 0 {
            return Err(StatementError::NoDeclaration);
        }
        let count = count_declarations(&signature_src);
        if count != 1 {
            return Err(StatementError::MultipleDeclarations(count));
        }
        if let Some(at) = decl.proof_start {
            return Err(StatementError::HasProof(at));
        }
        if decl.statement_end != signature_src.len() {
            return Err(StatementError::HasProof(decl.statement_end));
        }
        let name = decl
            .name
            .map(|r| signature_src[r].to_string())
            .ok_or(StatementError::Anonymous)?;
        Ok(Self {
            name,
            context,
            signature_src,
            origin,
        })
    }

    /// Parses source text of the form `context \n theorem ... [:= proof]`.
    /// Any proof is discarded.
    pub fn parse(src: &str, origin: Origin) -> Result<Self, StatementError> {
        let decl = find_declaration(src).ok_or(StatementError::NoDeclaration)?;
        let context = src[..decl.modifiers_start].trim_end();
        let signature = &src[decl.keyword.start..decl.statement_end];
        Self::new(context, signature, origin)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn context(&self) -> &str {
        &self.context
    }

    pub fn signature_src(&self) -> &str {
        &self.signature_src
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    /// Character length of the signature (Unicode scalar values, context
    /// excluded).
    pub fn char_len(&self) -> usize {
        self.signature_src.chars().count()
    }

    pub fn with_context(mut self, context: impl Into<String>) -> Self {
        self.context = context.into();
        self
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    /// Returns a copy whose declaration is called `name`. `example`
    /// declarations never reach this type, so only the name token changes.
    pub fn renamed(&self, name: &str) -> Self {
        let decl = find_declaration(&self.signature_src).expect("validated on construction");
        let range = decl.name.expect("validated on construction");
        let mut sig = String::with_capacity(self.signature_src.len() + name.len());
        sig.push_str(&self.signature_src[..range.start]);
        sig.push_str(name);
        sig.push_str(&self.signature_src[range.end..]);
        Self {
            name: name.to_string(),
            context: self.context.clone(),
            signature_src: sig,
            origin: self.origin,
        }
    }

    /// Everything after the name token: binders, colon and type.
    pub fn header_after_name(&self) -> &str {
        let decl = find_declaration(&self.signature_src).expect("validated on construction");
        let range = decl.name.expect("validated on construction");
        &self.signature_src[range.end..]
    }

    /// The canonical source form with a placeholder proof.
    pub fn serialize_with_sorry(&self) -> String {
        if self.context.is_empty() {
            format!("{} := sorry", self.signature_src)
        } else {
            format!("{}\n{} := sorry", self.context, self.signature_src)
        }
    }
}

impl fmt::Display for FormalStatement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.signature_src)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    None,
    FullFile,
    NoTheoremsProofs,
    NoProofs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    TemperatureSampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub num_samples: usize,
    pub model_id: String,
    pub decode_mode: DecodeMode,
}

impl GenerationConfig {
    /// Greedy decoding when sampling a single output at temperature zero.
    pub fn for_request(model_id: impl Into<String>, temperature: f64, num_samples: usize) -> Self {
        let decode_mode = if num_samples == 1 && temperature == 0.0 {
            DecodeMode::Greedy
        } else {
            DecodeMode::TemperatureSampling
        };
        Self {
            temperature,
            num_samples,
            model_id: model_id.into(),
            decode_mode,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.num_samples == 0 {
            return Err("num_samples must be >= 1".into());
        }
        if self.decode_mode == DecodeMode::Greedy && self.num_samples != 1 {
            return Err("greedy decoding implies num_samples = 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
    Info,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Position {
    pub line: u32,
    pub column: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub pos: Option<Position>,
    pub end_pos: Option<Position>,
    pub message: String,
}

impl Diagnostic {
    pub fn new(severity: Severity, message: impl Into<String>) -> Self {
        Self {
            severity,
            pos: None,
            end_pos: None,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeCheckKind {
    WellTypedWithSorry,
    WellTypedComplete,
    IllTyped,
    Timeout,
    BackendFailure,
}

impl TypeCheckKind {
    pub fn is_well_typed(self) -> bool {
        matches!(self, Self::WellTypedWithSorry | Self::WellTypedComplete)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeCheckStatus {
    pub kind: TypeCheckKind,
    pub diagnostics: Vec<Diagnostic>,
}

impl TypeCheckStatus {
    pub fn failure(kind: TypeCheckKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            diagnostics: vec![Diagnostic::new(Severity::Error, message)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cleaned: Option<FormalStatement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typecheck: Option<TypeCheckStatus>,
}

impl Candidate {
    pub fn raw(raw_text: impl Into<String>) -> Self {
        Self {
            raw_text: raw_text.into(),
            cleaned: None,
            typecheck: None,
        }
    }

    /// Text used for exact-match grouping: the cleaned signature after its
    /// (per-candidate) name, or the raw text when cleaning has not produced
    /// one.
    pub fn grouping_key(&self) -> &str {
        self.cleaned
            .as_ref()
            .map(|s| s.header_after_name().trim_start())
            .unwrap_or(&self.raw_text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub problem_id: String,
    pub informal: String,
    /// Source shared by every candidate (already prepared for `context_mode`).
    #[serde(default)]
    pub context: String,
    pub context_mode: ContextMode,
    pub candidates: Vec<Candidate>,
    pub gen_config: GenerationConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    ExactRestricted,
    /// `apply` when `convert_depth` is `None`, else `convert ... using k`.
    ConclusionMatch { convert_depth: Option<u32> },
    DirectAssumption,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionProof {
    pub success: bool,
    pub strategy: Strategy,
    /// The tactic source of the successful attempt, or of the last one tried.
    pub script: String,
    /// The goal was closed without using the source theorem.
    pub trivially_provable: bool,
    #[serde(with = "duration_ms")]
    pub elapsed: Duration,
    pub attempts: u32,
}

impl DirectionProof {
    pub fn failed(script: String, elapsed: Duration, attempts: u32) -> Self {
        Self {
            success: false,
            strategy: Strategy::None,
            script,
            trivially_provable: false,
            elapsed,
            attempts,
        }
    }

    pub fn skipped() -> Self {
        Self::failed(String::new(), Duration::ZERO, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Equivalent,
    ForwardOnly,
    BackwardOnly,
    NotProven,
    TrivialityFlagged,
    Error,
}

impl Verdict {
    /// Derives the pair verdict from its two directions.
    ///
    /// With the guard on, any triviality flag wins over success.
    pub fn derive(forward: &DirectionProof, backward: &DirectionProof, guard: bool) -> Self {
        if guard && (forward.trivially_provable || backward.trivially_provable) {
            return Self::TrivialityFlagged;
        }
        match (forward.success, backward.success) {
            (true, true) => Self::Equivalent,
            (true, false) => Self::ForwardOnly,
            (false, true) => Self::BackwardOnly,
            (false, false) => Self::NotProven,
        }
    }

    /// The verdict with forward and backward swapped.
    pub fn mirrored(self) -> Self {
        match self {
            Self::ForwardOnly => Self::BackwardOnly,
            Self::BackwardOnly => Self::ForwardOnly,
            v => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceVerdict {
    pub forward: DirectionProof,
    pub backward: DirectionProof,
    pub verdict: Verdict,
    /// Failing stage when `verdict` is `Error`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EquivalenceVerdict {
    pub fn from_directions(forward: DirectionProof, backward: DirectionProof, guard: bool) -> Self {
        let verdict = Verdict::derive(&forward, &backward, guard);
        Self {
            forward,
            backward,
            verdict,
            error: None,
        }
    }

    pub fn error(stage: impl Into<String>) -> Self {
        Self {
            forward: DirectionProof::skipped(),
            backward: DirectionProof::skipped(),
            verdict: Verdict::Error,
            error: Some(stage.into()),
        }
    }

    pub fn is_equivalent(&self) -> bool {
        self.verdict == Verdict::Equivalent
    }
}

/// One row of a metric benchmark: a prediction judged by a human against
/// its informal statement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifRecord {
    pub id: String,
    pub informal: String,
    pub reference: FormalStatement,
    pub prediction: FormalStatement,
    pub label: bool,
    pub reference_length: usize,
}

impl VerifRecord {
    pub fn new(
        id: String,
        informal: String,
        reference: FormalStatement,
        prediction: FormalStatement,
        label: bool,
    ) -> Self {
        let reference_length = reference.char_len();
        Self {
            id,
            informal,
            reference,
            prediction,
            label,
            reference_length,
        }
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}
