//! Type-check filtering and candidate selection over a sampled pool.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::exec::Execution;
use crate::normalize::clean;
use crate::prover::{classify, merge_contexts, with_default_header, BackendError, Session};
use crate::statement::{
    dummy_name, Candidate, CandidatePool, FormalStatement, TypeCheckKind, TypeCheckStatus,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("cannot select from an empty pool")]
    EmptyPool,
}

/// Cleans every candidate that has not been cleaned yet. Candidate `k` is
/// renamed `dummy_thm_k`; its context is the pool context followed by any
/// preamble the generator emitted. Cleaning failures are recorded as
/// ill-typed.
pub fn prepare_pool(pool: &mut CandidatePool) {
    let shared = pool.context.clone();
    for (k, cand) in pool.candidates.iter_mut().enumerate() {
        if cand.cleaned.is_some() || cand.typecheck.is_some() {
            continue;
        }
        match clean(&cand.raw_text, &dummy_name(k)) {
            Ok(s) => {
                let context = merge_contexts(&shared, s.context());
                cand.cleaned = Some(s.with_context(context));
            }
            Err(e) => {
                cand.typecheck = Some(TypeCheckStatus::failure(TypeCheckKind::IllTyped, format!("clean: {e}")));
            }
        }
    }
}

/// Type-checks one statement with a `sorry` proof on top of its context.
pub fn typecheck_statement(session: &mut Session, stmt: &FormalStatement, header: Option<&str>) -> TypeCheckStatus {
    if session.is_dead() {
        if let Err(e) = session.recycle() {
            return TypeCheckStatus::failure(TypeCheckKind::BackendFailure, e.to_string());
        }
    }
    let context = with_default_header(stmt.context(), header);
    let env = match session.context_env(&context) {
        Ok(env) => env,
        Err(BackendError::ContextRejected(msg)) => {
            return TypeCheckStatus::failure(TypeCheckKind::IllTyped, format!("context: {msg}"))
        }
        Err(e) => return backend_failure(e),
    };
    let cmd = format!("{} := sorry", stmt.signature_src());
    match session.run_command(&cmd, env, None) {
        Ok(r) => classify(&r),
        Err(e) => backend_failure(e),
    }
}

fn backend_failure(e: BackendError) -> TypeCheckStatus {
    let kind = match e {
        BackendError::CommandTimeout(_) | BackendError::StartupTimeout => TypeCheckKind::Timeout,
        _ => TypeCheckKind::BackendFailure,
    };
    TypeCheckStatus::failure(kind, e.to_string())
}

/// A pool after type-checking.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    /// Every candidate, with `typecheck` set.
    pub checked: CandidatePool,
    /// Indices into `checked.candidates` of the kept candidates, in order.
    pub survivors: Vec<usize>,
}

impl Filtered {
    /// Whether at least one candidate survived.
    pub fn type_checks(&self) -> bool {
        !self.survivors.is_empty()
    }

    /// The pool restricted to survivors, generation order preserved.
    pub fn survivor_pool(&self) -> CandidatePool {
        CandidatePool {
            candidates: self.survivors.iter().map(|&i| self.checked.candidates[i].clone()).collect(),
            ..self.checked.clone()
        }
    }
}

/// Sets each candidate's type-check status (reusing any already present)
/// and keeps the well-typed ones. With `enabled` false every cleaned
/// candidate is kept.
pub fn filter_with<F>(mut pool: CandidatePool, enabled: bool, mut check: F) -> Filtered
where
    F: FnMut(&FormalStatement) -> TypeCheckStatus,
{
    prepare_pool(&mut pool);
    let mut survivors = Vec::new();
    for (i, cand) in pool.candidates.iter_mut().enumerate() {
        if enabled && cand.typecheck.is_none() {
            let stmt = cand.cleaned.as_ref().expect("prepared candidates are cleaned or failed");
            let status = check(stmt);
            if matches!(status.kind, TypeCheckKind::BackendFailure | TypeCheckKind::Timeout) {
                warn!(problem = %pool.problem_id, candidate = i, kind = ?status.kind, "candidate excluded after backend failure");
            }
            cand.typecheck = Some(status);
        }
        let keep = if enabled {
            cand.typecheck.as_ref().is_some_and(|t| t.kind.is_well_typed())
        } else {
            cand.cleaned.is_some()
        };
        if keep {
            survivors.push(i);
        }
    }
    Filtered {
        checked: pool,
        survivors,
    }
}

pub fn filter_well_typed(pool: CandidatePool, session: &mut Session, header: Option<&str>) -> Filtered {
    filter_with(pool, true, |stmt| typecheck_statement(session, stmt, header))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Random,
    Majority,
    SelfBleu,
    Symbolic,
}

impl SelectionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Majority => "majority",
            Self::SelfBleu => "self_bleu",
            Self::Symbolic => "symbolic",
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").to_ascii_lowercase().as_str() {
            "random" => Ok(Self::Random),
            "majority" => Ok(Self::Majority),
            "self_bleu" => Ok(Self::SelfBleu),
            "symbolic" | "symbolic_equiv" => Ok(Self::Symbolic),
            _ => Err(format!(
                "unknown selection method `{s}` (expected random, majority, self-bleu or symbolic)"
            )),
        }
    }
}

/// A chosen candidate: an index into the slice passed to the selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub index: usize,
    pub tie_break_applied: bool,
}

/// One line of the selection log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionLogEntry {
    pub problem_id: String,
    pub method: SelectionMethod,
    /// Index into the original pool, absent when nothing survived.
    pub chosen_index: Option<usize>,
    pub pool_size: usize,
    pub survivors: usize,
    pub tie_break_applied: bool,
}

/// FNV-1a, used to derive a per-problem seed that is stable across builds.
fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Uniform choice from a generator seeded by `seed` and the problem id.
pub fn select_random(cands: &[Candidate], seed: u64, problem_id: &str) -> Result<Selection, PipelineError> {
    if cands.is_empty() {
        return Err(PipelineError::EmptyPool);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(problem_id));
    Ok(Selection {
        index: rng.random_range(0..cands.len()),
        tie_break_applied: false,
    })
}

/// The cleaned statement as a token stream, so that spacing between
/// symbols does not split a group.
pub fn majority_key(c: &Candidate) -> String {
    tokenize(c.grouping_key()).join(" ")
}

/// The earliest member of the most frequent cleaned statement.
pub fn select_majority(cands: &[Candidate]) -> Result<Selection, PipelineError> {
    if cands.is_empty() {
        return Err(PipelineError::EmptyPool);
    }
    let mut groups: HashMap<String, (usize, usize)> = HashMap::new();
    for (i, c) in cands.iter().enumerate() {
        groups.entry(majority_key(c)).or_insert((0, i)).0 += 1;
    }
    let best = groups.values().map(|&(count, _)| count).max().expect("non-empty");
    let mut leaders: Vec<usize> = groups
        .values()
        .filter(|&&(count, _)| count == best)
        .map(|&(_, first)| first)
        .collect();
    leaders.sort_unstable();
    Ok(Selection {
        index: leaders[0],
        tie_break_applied: leaders.len() > 1,
    })
}

/// Splits source text into identifier runs and single symbol characters.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        let word = ch.is_alphanumeric() || ch == '_' || ch == '\'';
        if word {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            tokens.push(&text[s..i]);
        }
        if !ch.is_whitespace() {
            tokens.push(&text[i..i + ch.len_utf8()]);
        }
    }
    if let Some(s) = start {
        tokens.push(&text[s..]);
    }
    tokens
}

const BLEU_ORDER: usize = 4;

/// Sentence BLEU-4 of `hyp` against one reference. Unigram precision is
/// unsmoothed; higher orders use add-one smoothing. The brevity penalty is
/// `exp(1 - r/c)` for hypotheses shorter than the reference.
pub fn bleu<T: Eq + std::hash::Hash>(hyp: &[T], reference: &[T]) -> f64 {
    bleu_counts(&NgramCounts::new(hyp), &NgramCounts::new(reference))
}

/// n-gram counts of one token sequence, orders 1 to `BLEU_ORDER`.
struct NgramCounts<'a, T> {
    len: usize,
    orders: Vec<HashMap<&'a [T], usize>>,
}

impl<'a, T: Eq + std::hash::Hash> NgramCounts<'a, T> {
    fn new(tokens: &'a [T]) -> Self {
        let orders = (1..=BLEU_ORDER)
            .map(|n| {
                let mut counts: HashMap<&[T], usize> = HashMap::new();
                for g in tokens.windows(n) {
                    *counts.entry(g).or_default() += 1;
                }
                counts
            })
            .collect();
        Self {
            len: tokens.len(),
            orders,
        }
    }
}

fn bleu_counts<T: Eq + std::hash::Hash>(hyp: &NgramCounts<'_, T>, reference: &NgramCounts<'_, T>) -> f64 {
    if hyp.len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=BLEU_ORDER {
        let total = hyp.len.saturating_sub(n - 1);
        let ref_counts = &reference.orders[n - 1];
        let matched: usize = hyp.orders[n - 1]
            .iter()
            .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let c = hyp.len as f64;
    let r = reference.len as f64;
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / BLEU_ORDER as f64).exp()
}

/// Self-BLEU score of every candidate: the sum of its BLEU against each
/// other candidate. Terms are summed in ascending order so the score does
/// not depend on pool order.
pub fn self_bleu_scores(cands: &[Candidate], exec: Execution) -> Vec<f64> {
    let tokens: Vec<Vec<&str>> = cands.iter().map(|c| tokenize(c.grouping_key())).collect();
    let counts: Vec<NgramCounts<'_, &str>> = tokens.iter().map(|t| NgramCounts::new(t)).collect();
    exec.map_range(cands.len(), |i| {
        let mut terms: Vec<f64> = (0..tokens.len())
            .filter(|&j| j != i)
            .map(|j| bleu_counts(&counts[i], &counts[j]))
            .collect();
        terms.sort_by(f64::total_cmp);
        terms.iter().sum()
    })
}

pub fn select_self_bleu(cands: &[Candidate], exec: Execution) -> Result<Selection, PipelineError> {
    if cands.is_empty() {
        return Err(PipelineError::EmptyPool);
    }
    let scores = self_bleu_scores(cands, exec);
    Ok(argmax_first(&scores))
}

fn argmax_first(scores: &[f64]) -> Selection {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    let ties = scores.iter().filter(|&&s| s == scores[best]).count();
    Selection {
        index: best,
        tie_break_applied: ties > 1,
    }
}

/// Decides equivalence of two pool members by index.
pub trait PairChecker: Sync {
    fn equivalent(&self, a: usize, b: usize) -> bool;

    /// Whether `equivalent` may be called from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }
}

impl<F: Fn(usize, usize) -> bool + Sync> PairChecker for F {
    fn equivalent(&self, a: usize, b: usize) -> bool {
        self(a, b)
    }
}

#[derive(Debug, Clone)]
struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    /// Keeps the smaller index as root so roots are class minima.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolicSelection {
    pub selection: Selection,
    /// Equivalence classes, each sorted, ordered by their first member.
    pub classes: Vec<Vec<usize>>,
    pub checks: usize,
    pub budget_exhausted: bool,
}

/// Clusters candidates by checked equivalence and picks the earliest member
/// of the largest class.
///
/// Rows are processed in index order; in row `i` every later candidate not
/// already in `i`'s class is checked against `i`. Verdicts in a row may be
/// computed concurrently but are merged in index order, so the partition is
/// the transitive closure of the checked relation regardless of scheduling.
pub fn select_symbolic(
    n: usize,
    checker: &dyn PairChecker,
    exec: Execution,
    budget: Option<usize>,
) -> Result<SymbolicSelection, PipelineError> {
    if n == 0 {
        return Err(PipelineError::EmptyPool);
    }
    let mut uf = UnionFind::new(n);
    let mut checks = 0;
    let mut budget_exhausted = false;
    for i in 0..n {
        let root = uf.find(i);
        let mut row: Vec<usize> = (i + 1..n).filter(|&j| uf.find(j) != root).collect();
        if let Some(b) = budget {
            let left = b.saturating_sub(checks);
            if row.len() > left {
                row.truncate(left);
                budget_exhausted = true;
            }
        }
        let verdicts: Vec<bool> = if checker.concurrent() {
            exec.map(&row, |&j| checker.equivalent(i, j))
        } else {
            row.iter().map(|&j| checker.equivalent(i, j)).collect()
        };
        checks += row.len();
        for (&j, eq) in row.iter().zip(verdicts) {
            if eq {
                uf.union(i, j);
            }
        }
        if budget_exhausted {
            break;
        }
    }
    let mut by_root: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        by_root.entry(uf.find(i)).or_default().push(i);
    }
    let mut classes: Vec<Vec<usize>> = by_root.into_values().collect();
    classes.sort_by_key(|c| c[0]);
    let largest = classes.iter().map(Vec::len).max().expect("n > 0");
    let mut leaders = classes.iter().filter(|c| c.len() == largest).map(|c| c[0]);
    let index = leaders.next().expect("some class is largest");
    Ok(SymbolicSelection {
        selection: Selection {
            index,
            tie_break_applied: leaders.next().is_some(),
        },
        classes,
        checks,
        budget_exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statement::{ContextMode, GenerationConfig};

    fn pool(raws: &[&str]) -> CandidatePool {
        CandidatePool {
            problem_id: "p".into(),
            informal: String::new(),
            context: "open Nat".into(),
            context_mode: ContextMode::None,
            candidates: raws.iter().map(|r| Candidate::raw(*r)).collect(),
            gen_config: GenerationConfig::for_request("m", 0.7, raws.len().max(1)),
        }
    }

    fn cleaned(raws: &[&str]) -> Vec<Candidate> {
        let mut p = pool(raws);
        prepare_pool(&mut p);
        p.candidates
    }

    #[test]
    fn prepare_names_and_contexts() {
        let c = cleaned(&["theorem a : 1 = 1 := rfl", "open Real\ntheorem b : 2 = 2", "def f := 1"]);
        let s = c[1].cleaned.as_ref().unwrap();
        assert_eq!(s.name(), "dummy_thm_1");
        assert_eq!(s.context(), "open Nat\nopen Real");
        assert_eq!(c[2].typecheck.as_ref().unwrap().kind, TypeCheckKind::IllTyped);
    }

    #[test]
    fn filter_is_stable_and_idempotent() {
        let p = pool(&["theorem a : 1 = 1", "theorem b : 1 = 2", "nonsense", "theorem c : 3 = 3"]);
        let check = |s: &FormalStatement| {
            let kind = if s.signature_src().contains("1 = 2") {
                TypeCheckKind::IllTyped
            } else {
                TypeCheckKind::WellTypedWithSorry
            };
            TypeCheckStatus { kind, diagnostics: vec![] }
        };
        let once = filter_with(p, true, check);
        assert_eq!(once.survivors, vec![0, 3]);
        let twice = filter_with(once.survivor_pool(), true, |_| panic!("statuses are reused"));
        assert_eq!(twice.survivor_pool(), once.survivor_pool());
        let unfiltered = filter_with(pool(&["theorem a : 1 = 2", "bad"]), false, |_| unreachable!());
        assert_eq!(unfiltered.survivors, vec![0]);
    }

    #[test]
    fn majority_examples() {
        let s = select_majority(&cleaned(&["theorem x : a", "theorem x : b", "theorem x : a"])).unwrap();
        assert_eq!(s.index, 0);
        assert!(!s.tie_break_applied);
        let s = select_majority(&cleaned(&["theorem x : a", "theorem x : b"])).unwrap();
        assert_eq!((s.index, s.tie_break_applied), (0, true));
        let s = select_majority(&cleaned(&["theorem X:1=1:=by rfl", "theorem Y : 2 = 2", "theorem  X  : 1=1"])).unwrap();
        assert_eq!(s.index, 0);
        assert!(!s.tie_break_applied);
        assert_eq!(select_majority(&[]), Err(PipelineError::EmptyPool));
    }

    #[test]
    fn random_is_seeded() {
        let c = cleaned(&["theorem a : 1 = 1", "theorem b : 2 = 2", "theorem c : 3 = 3"]);
        let a = select_random(&c, 7, "p1").unwrap();
        assert_eq!(a, select_random(&c, 7, "p1").unwrap());
        assert_eq!(select_random(&c[..1], 99, "x").unwrap().index, 0);
    }

    #[test]
    fn tokenizer_splits_symbols() {
        assert_eq!(
            tokenize("theorem x (n : ℕ) : n+0 = n'"),
            vec!["theorem", "x", "(", "n", ":", "ℕ", ")", ":", "n", "+", "0", "=", "n'"]
        );
    }

    #[test]
    fn bleu_basics() {
        let a = tokenize("the cat sat on the mat");
        assert!((bleu(&a, &a) - 1.0).abs() < 1e-15);
        assert_eq!(bleu::<&str>(&[], &a), 0.0);
        let b = tokenize("dog ran far away quickly");
        assert!(bleu(&a, &b) < 0.05);
    }

    #[test]
    fn self_bleu_prefers_duplicates() {
        let c = cleaned(&["theorem x : a + b = c", "theorem x : a + b = c", "theorem x : ∀ y, y ≤ y * 2"]);
        let s = select_self_bleu(&c, Execution::Sequential).unwrap();
        assert_eq!(s.index, 0);
        assert_eq!(select_self_bleu(&c[2..], Execution::Sequential).unwrap().index, 0);
    }

    #[test]
    fn symbolic_classes() {
        // classes {0,2,4} and {1,3}
        let rel = |a: usize, b: usize| a % 2 == b % 2;
        let r = select_symbolic(5, &rel, Execution::Sequential, None).unwrap();
        assert_eq!(r.classes, vec![vec![0, 2, 4], vec![1, 3]]);
        assert_eq!(r.selection.index, 0);
        assert!(r.checks <= 10);
        let all = |_: usize, _: usize| true;
        let r = select_symbolic(50, &all, Execution::Parallel, None).unwrap();
        assert_eq!(r.classes.len(), 1);
        assert_eq!(r.checks, 49);
        let none = |_: usize, _: usize| false;
        let r = select_symbolic(50, &none, Execution::Parallel, None).unwrap();
        assert_eq!(r.checks, 1225);
        assert!(r.selection.tie_break_applied);
        let r = select_symbolic(50, &none, Execution::Parallel, Some(100)).unwrap();
        assert!(r.budget_exhausted);
        assert_eq!(r.checks, 100);
    }
}
