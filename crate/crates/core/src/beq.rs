//! Symbolic equivalence of two statements.
//!
//! Each direction poses the target theorem against an environment in which
//! the source theorem is assumed (declared with `sorry`) and tries a fixed
//! sequence of tactic scripts. Every attempt is a fresh REPL command against
//! the same cached environment, so the command sequence is a pure function
//! of the two statements and the configuration.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::prover::{
    merge_contexts, with_default_header, BackendError, ReplResult, Session, DEFAULT_ATTEMPT_TIMEOUT,
    SORRY_MARKER,
};
use crate::statement::{DirectionProof, EquivalenceVerdict, FormalStatement, Strategy};

/// Name the assumed theorem is declared under.
pub const SOURCE_NAME: &str = "src_thm";
/// Name the theorem being proved is declared under.
pub const TARGET_NAME: &str = "tgt_thm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    BeqL,
    BeqPlus,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::BeqL => "beq_l",
            Self::BeqPlus => "beq_plus",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").to_ascii_lowercase().as_str() {
            "beq_l" | "beql" => Ok(Self::BeqL),
            "beq_plus" | "beq+" | "beqplus" => Ok(Self::BeqPlus),
            _ => Err(format!("unknown metric `{s}` (expected beq-l or beq-plus)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeqConfig {
    pub max_convert_depth: u32,
    /// Tactics tried, in order, to close residual goals.
    pub closure_tactics: Vec<String>,
    /// Tactics that close the main goal once the `have` is in place.
    pub main_closure_tactics: Vec<String>,
    pub max_closure_rounds: u32,
    #[serde(with = "secs")]
    pub per_attempt_timeout: Duration,
    pub triviality_guard: bool,
    /// Skip the backward direction when the forward one fails.
    pub short_circuit: bool,
    /// Imports used when the merged context brings none.
    pub header: Option<String>,
    /// Record wall-clock time per direction. Off gives byte-stable logs.
    pub record_timing: bool,
}

impl Default for BeqConfig {
    fn default() -> Self {
        Self {
            max_convert_depth: 5,
            closure_tactics: ["tauto", "simp_all_arith!", "noncomm_ring", "exact?"]
                .map(String::from)
                .to_vec(),
            main_closure_tactics: ["tauto", "simp_all_arith!", "exact? using this"]
                .map(String::from)
                .to_vec(),
            max_closure_rounds: 3,
            per_attempt_timeout: DEFAULT_ATTEMPT_TIMEOUT,
            triviality_guard: true,
            short_circuit: false,
            header: Some("import Mathlib".to_string()),
            record_timing: true,
        }
    }
}

impl BeqConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_closure_rounds < 1 {
            return Err("max_closure_rounds must be at least 1".into());
        }
        if self.closure_tactics.is_empty() || self.main_closure_tactics.is_empty() {
            return Err("closure tactic lists must not be empty".into());
        }
        if self.per_attempt_timeout.is_zero() {
            return Err("per_attempt_timeout must be positive".into());
        }
        Ok(())
    }

    /// `all_goals iterate n (first | t1 | t2 | ...)`
    pub fn closure_line(&self) -> String {
        format!("all_goals {}", iterate_first(self.max_closure_rounds, &self.closure_tactics))
    }

    pub fn main_closure_line(&self) -> String {
        iterate_first(self.max_closure_rounds, &self.main_closure_tactics)
    }
}

fn iterate_first(rounds: u32, tactics: &[String]) -> String {
    format!("iterate {rounds} (first | {})", tactics.join(" | "))
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BeqError {
    #[error("context_clash: {0}")]
    ContextClash(String),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
}

/// Environments one direction is checked against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckEnv {
    /// The merged contexts, without the source theorem.
    pub ctx_env: Option<u64>,
    /// `ctx_env` plus the source theorem declared with `sorry`.
    pub check_env: Option<u64>,
    /// The source theorem's statement as a closed proposition, when the
    /// backend reported its goal.
    pub source_goal: Option<String>,
}

/// One proof attempt in a direction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attempt {
    pub strategy: Strategy,
    pub tactics: Vec<String>,
}

/// The merged context both statements are elaborated in.
pub fn merged_context(t1: &FormalStatement, t2: &FormalStatement, cfg: &BeqConfig) -> String {
    with_default_header(&merge_contexts(t1.context(), t2.context()), cfg.header.as_deref())
}

/// `theorem src_thm <header> := sorry`
pub fn source_command(source: &FormalStatement) -> String {
    format!("theorem {SOURCE_NAME}{} := sorry", source.header_after_name())
}

/// `theorem tgt_thm <header> := by` followed by the tactic lines.
pub fn attempt_command(target: &FormalStatement, tactics: &[String]) -> String {
    let mut cmd = format!("theorem {TARGET_NAME}{} := by", target.header_after_name());
    for line in tactics {
        for sub in line.lines() {
            cmd.push_str("\n  ");
            cmd.push_str(sub);
        }
    }
    cmd
}

/// The standalone probe: the closure arsenal without the source theorem.
pub fn probe_command(target: &FormalStatement, cfg: &BeqConfig) -> String {
    attempt_command(target, &[cfg.closure_line()])
}

/// The attempts of one direction in execution order.
pub fn plan(metric: Metric, cfg: &BeqConfig, source_goal: Option<&str>) -> Vec<Attempt> {
    let mut attempts = vec![Attempt {
        strategy: Strategy::ExactRestricted,
        tactics: vec!["exact?".to_string()],
    }];
    if metric == Metric::BeqL {
        return attempts;
    }
    let closure = cfg.closure_line();
    attempts.push(Attempt {
        strategy: Strategy::ConclusionMatch { convert_depth: None },
        tactics: vec![format!("apply {SOURCE_NAME}"), closure.clone()],
    });
    for k in 0..=cfg.max_convert_depth {
        attempts.push(Attempt {
            strategy: Strategy::ConclusionMatch {
                convert_depth: Some(k),
            },
            tactics: vec![format!("convert {SOURCE_NAME} using {k}"), closure.clone()],
        });
    }
    if let Some(goal) = source_goal {
        attempts.push(Attempt {
            strategy: Strategy::DirectAssumption,
            tactics: vec![
                format!("have : {goal} := by\n  apply_rules [{SOURCE_NAME}]\n  {closure}"),
                cfg.main_closure_line(),
            ],
        });
    }
    attempts
}

/// Elaborates the merged context and declares `source` on top of it.
pub fn build_check_env(
    session: &mut Session,
    source: &FormalStatement,
    target: &FormalStatement,
    cfg: &BeqConfig,
) -> Result<CheckEnv, BeqError> {
    let context = merged_context(source, target, cfg);
    let ctx_env = match session.context_env(&context) {
        Ok(env) => env,
        Err(BackendError::ContextRejected(msg)) => return Err(BeqError::ContextClash(msg)),
        Err(e) => return Err(e.into()),
    };
    let r = session.run_command(&source_command(source), ctx_env, None)?;
    if r.has_errors() {
        let msg = r.errors().map(|d| d.message.as_str()).collect::<Vec<_>>().join("; ");
        return Err(BeqError::ContextClash(format!("source statement: {msg}")));
    }
    let source_goal = r.sorries.first().and_then(|s| goal_to_proposition(&s.goal));
    Ok(CheckEnv {
        ctx_env,
        check_env: r.env,
        source_goal,
    })
}

/// Turns a pretty-printed goal state into one proposition by quantifying
/// over its hypotheses.
pub fn goal_to_proposition(goal: &str) -> Option<String> {
    let mut entries: Vec<String> = Vec::new();
    for line in goal.lines() {
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with(char::is_whitespace) {
            let last = entries.last_mut()?;
            last.push(' ');
            last.push_str(line.trim());
        } else if line.starts_with("case ") {
            continue;
        } else {
            entries.push(line.trim().to_string());
        }
    }
    let (conclusion, hyps) = entries.split_last()?;
    let conclusion = conclusion.strip_prefix("⊢")?.trim();
    let mut binders = Vec::new();
    for h in hyps {
        let (names, ty) = h.split_once(" : ")?;
        if ty.contains(" := ") {
            return None;
        }
        let ty = anonymize_universes(ty.trim());
        let mut named = Vec::new();
        for name in names.split_whitespace() {
            if !name.contains('✝') {
                named.push(name);
                continue;
            }
            if !named.is_empty() {
                binders.push(format!("({} : {ty})", named.join(" ")));
                named.clear();
            }
            if name.starts_with("inst") {
                binders.push(format!("[{ty}]"));
            } else {
                binders.push(format!("(_ : {ty})"));
            }
        }
        if !named.is_empty() {
            binders.push(format!("({} : {ty})", named.join(" ")));
        }
    }
    let conclusion = anonymize_universes(conclusion);
    if binders.is_empty() {
        Some(conclusion)
    } else {
        Some(format!("∀ {}, {conclusion}", binders.join(" ")))
    }
}

/// Auto-bound universe names (`u_1`, ...) are out of scope inside a proof,
/// so they become placeholders.
fn anonymize_universes(ty: &str) -> String {
    let mut out = String::with_capacity(ty.len());
    let mut rest = ty;
    while let Some(at) = rest.find("u_") {
        let before = &rest[..at];
        let after = &rest[at + 2..];
        let digits = after.chars().take_while(char::is_ascii_digit).count();
        let boundary_before = before.chars().next_back().is_none_or(|c| !is_ident_char(c));
        let boundary_after = after[digits..].chars().next().is_none_or(|c| !is_ident_char(c));
        let sort_before = before.ends_with("Type ") || before.ends_with("Sort ");
        out.push_str(before);
        if digits > 0 && boundary_before && boundary_after && sort_before {
            out.push('_');
        } else {
            out.push_str(&rest[at..at + 2 + digits]);
        }
        rest = &after[digits..];
    }
    out.push_str(rest);
    out
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '\'' | '.' | '!' | '?' | '✝')
}

/// Whether `text` uses the identifier `name` as a whole token.
pub fn mentions_ident(text: &str, name: &str) -> bool {
    text.match_indices(name).any(|(at, _)| {
        let before = text[..at].chars().next_back();
        let after = text[at + name.len()..].chars().next();
        before.is_none_or(|c| !is_ident_char(c) || c == '@') && after.is_none_or(|c| !is_ident_char(c) || c == '.')
    })
}

/// Suggestions reported by `exact?` in a response.
pub fn suggestions(r: &ReplResult) -> Vec<String> {
    r.messages
        .iter()
        .filter_map(|d| d.message.split_once("Try this:").map(|(_, s)| s.trim().to_string()))
        .collect()
}

fn closed(r: &ReplResult) -> bool {
    !r.has_errors() && !r.mentions(SORRY_MARKER)
}

enum Outcome {
    Closed(ReplResult),
    Open,
}

/// Runs the attempts of one direction against one session, reviving the
/// session after a timeout.
struct Direction<'a> {
    session: &'a mut Session,
    source: &'a FormalStatement,
    target: &'a FormalStatement,
    cfg: &'a BeqConfig,
    env: CheckEnv,
    attempts: u32,
}

impl Direction<'_> {
    fn run(&mut self, cmd: &str, env: Option<u64>) -> Result<Outcome, BeqError> {
        self.attempts += 1;
        match self.session.run_command(cmd, env, Some(self.cfg.per_attempt_timeout)) {
            Ok(r) if closed(&r) => Ok(Outcome::Closed(r)),
            Ok(_) => Ok(Outcome::Open),
            Err(BackendError::CommandTimeout(t)) => {
                debug!(timeout = ?t, "attempt timed out; restarting session");
                self.session.recycle()?;
                self.env = build_check_env(self.session, self.source, self.target, self.cfg)?;
                Ok(Outcome::Open)
            }
            Err(e) => Err(e.into()),
        }
    }

    fn run_attempt(&mut self, attempt: &Attempt) -> Result<Option<(String, bool)>, BeqError> {
        let cmd = attempt_command(self.target, &attempt.tactics);
        let env = self.env.check_env;
        match self.run(&cmd, env)? {
            Outcome::Open => Ok(None),
            Outcome::Closed(r) if attempt.strategy == Strategy::ExactRestricted => {
                match suggestions(&r).into_iter().next() {
                    Some(s) => {
                        let uses_source = mentions_ident(&s, SOURCE_NAME);
                        Ok(Some((s, uses_source)))
                    }
                    None => Ok(None),
                }
            }
            Outcome::Closed(_) => {
                let script = attempt.tactics.join("\n");
                let uses_source = mentions_ident(&script, SOURCE_NAME);
                Ok(Some((script, uses_source)))
            }
        }
    }

    fn probe(&mut self) -> Result<bool, BeqError> {
        let cmd = probe_command(self.target, self.cfg);
        let env = self.env.ctx_env;
        Ok(matches!(self.run(&cmd, env)?, Outcome::Closed(_)))
    }
}

/// Tries to derive `target` from `source`.
pub fn direction(
    session: &mut Session,
    source: &FormalStatement,
    target: &FormalStatement,
    metric: Metric,
    cfg: &BeqConfig,
) -> Result<DirectionProof, BeqError> {
    let started = Instant::now();
    let env = build_check_env(session, source, target, cfg)?;
    let mut dir = Direction {
        session,
        source,
        target,
        cfg,
        env,
        attempts: 0,
    };
    let mut trivially_provable = false;
    let mut last_script = String::new();
    let mut found = None;
    let planned = plan(metric, cfg, dir.env.source_goal.as_deref());
    if metric == Metric::BeqPlus && dir.env.source_goal.is_none() {
        warn!("no goal reported for the source statement; direct assumption is skipped");
    }
    for attempt in &planned {
        last_script = attempt.tactics.join("\n");
        match dir.run_attempt(attempt)? {
            Some((script, true)) => {
                found = Some((attempt.strategy, script));
                break;
            }
            Some((script, false)) => {
                debug!(%script, "goal closed without the source theorem");
                trivially_provable = true;
            }
            None => {}
        }
    }
    if found.is_some() && cfg.triviality_guard && !trivially_provable {
        trivially_provable = dir.probe()?;
    }
    let attempts = dir.attempts;
    let elapsed = if cfg.record_timing {
        started.elapsed()
    } else {
        Duration::ZERO
    };
    Ok(match found {
        Some((strategy, script)) => DirectionProof {
            success: true,
            strategy,
            script,
            trivially_provable,
            elapsed,
            attempts,
        },
        None => DirectionProof {
            trivially_provable,
            ..DirectionProof::failed(last_script, elapsed, attempts)
        },
    })
}

/// `exact?` restricted to suggestions that use the source theorem.
pub fn exact_restricted(
    session: &mut Session,
    source: &FormalStatement,
    target: &FormalStatement,
    cfg: &BeqConfig,
) -> Result<DirectionProof, BeqError> {
    direction(session, source, target, Metric::BeqL, cfg)
}

/// The staged search for one direction.
pub fn beq_plus_direction(
    session: &mut Session,
    source: &FormalStatement,
    target: &FormalStatement,
    cfg: &BeqConfig,
) -> Result<DirectionProof, BeqError> {
    direction(session, source, target, Metric::BeqPlus, cfg)
}

/// Checks both directions. Backend failures become an `Error` verdict that
/// names the failing stage.
pub fn check(
    session: &mut Session,
    t1: &FormalStatement,
    t2: &FormalStatement,
    metric: Metric,
    cfg: &BeqConfig,
) -> EquivalenceVerdict {
    let forward = match direction(session, t1, t2, metric, cfg) {
        Ok(p) => p,
        Err(e) => return EquivalenceVerdict::error(format!("forward: {e}")),
    };
    let backward = if cfg.short_circuit && !forward.success {
        DirectionProof::skipped()
    } else {
        match direction(session, t2, t1, metric, cfg) {
            Ok(p) => p,
            Err(e) => {
                return EquivalenceVerdict {
                    forward,
                    ..EquivalenceVerdict::error(format!("backward: {e}"))
                }
            }
        }
    };
    EquivalenceVerdict::from_directions(forward, backward, cfg.triviality_guard)
}

pub fn beq_plus(session: &mut Session, t1: &FormalStatement, t2: &FormalStatement, cfg: &BeqConfig) -> EquivalenceVerdict {
    check(session, t1, t2, Metric::BeqPlus, cfg)
}

pub fn beq_l(session: &mut Session, t1: &FormalStatement, t2: &FormalStatement, cfg: &BeqConfig) -> EquivalenceVerdict {
    check(session, t1, t2, Metric::BeqL, cfg)
}

/// One line of the verdict log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictLogEntry {
    pub id: String,
    pub metric: Metric,
    pub first: String,
    pub second: String,
    #[serde(flatten)]
    pub result: EquivalenceVerdict,
}

impl VerdictLogEntry {
    pub fn new(id: impl Into<String>, metric: Metric, t1: &FormalStatement, t2: &FormalStatement, result: EquivalenceVerdict) -> Self {
        Self {
            id: id.into(),
            metric,
            first: t1.signature_src().to_string(),
            second: t2.signature_src().to_string(),
            result,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("verdict log entry serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goal_telescope() {
        assert_eq!(goal_to_proposition("⊢ 1 = 1").unwrap(), "1 = 1");
        let g = "a b : ℤ\nh : a ∣ b\n⊢ a ∣ b";
        assert_eq!(goal_to_proposition(g).unwrap(), "∀ (a b : ℤ) (h : a ∣ b), a ∣ b");
        let g = "α : Type u_1\ninst✝ : Fintype α\nx✝ : α\n⊢ Fintype.card α ≥\n    1";
        assert_eq!(
            goal_to_proposition(g).unwrap(),
            "∀ (α : Type _) [Fintype α] (_ : α), Fintype.card α ≥ 1"
        );
        assert!(goal_to_proposition("a : ℕ").is_none());
    }

    #[test]
    fn universe_placeholders_only_touch_auto_bound_names() {
        assert_eq!(anonymize_universes("Type u_12 → Sort u_1"), "Type _ → Sort _");
        assert_eq!(anonymize_universes("Type u → menu_1"), "Type u → menu_1");
    }

    #[test]
    fn ident_mentions() {
        assert!(mentions_ident("exact src_thm a b", "src_thm"));
        assert!(mentions_ident("exact (@src_thm _ h)", "src_thm"));
        assert!(mentions_ident("exact src_thm.mp h", "src_thm"));
        assert!(!mentions_ident("exact my_src_thm a", "src_thm"));
        assert!(!mentions_ident("exact src_thm' a", "src_thm"));
        assert!(!mentions_ident("exact h", "src_thm"));
    }

    #[test]
    fn plan_order_and_shape() {
        let cfg = BeqConfig::default();
        let steps = plan(Metric::BeqPlus, &cfg, Some("∀ (n : ℕ), n = n"));
        assert_eq!(steps.len(), 1 + 1 + 6 + 1);
        assert_eq!(steps[0].strategy, Strategy::ExactRestricted);
        assert_eq!(steps[1].tactics[0], "apply src_thm");
        for k in 0..=5u32 {
            assert_eq!(steps[2 + k as usize].tactics[0], format!("convert src_thm using {k}"));
        }
        assert_eq!(steps[8].strategy, Strategy::DirectAssumption);
        assert_eq!(plan(Metric::BeqL, &cfg, None).len(), 1);
        assert_eq!(
            cfg.closure_line(),
            "all_goals iterate 3 (first | tauto | simp_all_arith! | noncomm_ring | exact?)"
        );
    }

    #[test]
    fn attempt_command_indents_nested_blocks() {
        let t = FormalStatement::new("", "theorem x (n : ℕ) : n = n", crate::Origin::Synthetic).unwrap();
        let cmd = attempt_command(&t, &["have : 1 = 1 := by\n  rfl".into(), "rfl".into()]);
        assert_eq!(cmd, "theorem tgt_thm (n : ℕ) : n = n := by\n  have : 1 = 1 := by\n    rfl\n  rfl");
        assert_eq!(source_command(&t), "theorem src_thm (n : ℕ) : n = n := sorry");
    }

    #[test]
    fn metric_names() {
        assert_eq!("beq-plus".parse::<Metric>().unwrap(), Metric::BeqPlus);
        assert_eq!("beq_l".parse::<Metric>().unwrap(), Metric::BeqL);
        assert!("bleu".parse::<Metric>().is_err());
    }
}
