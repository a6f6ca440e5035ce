//! Experiment drivers over a session pool.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use super::data::{LabelRecord, Reference, StatementPair, VerifDataset};
use crate::beq::{check, BeqConfig, Metric, VerdictLogEntry};
use crate::exec::Execution;
use crate::metrics::{
    aggregate_report, binary_metrics, length_bucket, BinaryScore, EvalReport, MetricsError, ProblemOutcome,
    VerifReport,
};
use crate::pipeline::{
    filter_with, select_majority, select_random, select_self_bleu, select_symbolic, typecheck_statement, Filtered,
    PairChecker, Selection, SelectionLogEntry, SelectionMethod,
};
use crate::prover::{BackendError, ProverBackend, Session, SessionOptions, SessionPool};
use crate::statement::{CandidatePool, FormalStatement, Verdict};

#[derive(Debug, Error)]
pub enum RunError {
    /// The backend failed in a way that stops the run. Whatever finished
    /// before the failure is kept.
    #[error("backend failure after {completed} completed task(s): {error}")]
    Backend {
        error: BackendError,
        completed: usize,
        /// Verdict-log lines of the tasks that completed.
        partial_log: Vec<String>,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Runs `f` over `items` on at most `jobs` worker threads. Results keep
/// input order.
pub fn run_tasks<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                slots.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every task ran"))
        .collect()
}

/// Shared state of a run: the session pool, worker count and BEq settings.
pub struct Harness {
    pool: SessionPool,
    jobs: usize,
    pub beq: BeqConfig,
    /// Parallelism inside a single task (Self-BLEU scoring).
    pub exec: Execution,
}

impl Harness {
    pub fn new(backend: Arc<dyn ProverBackend>, jobs: usize, options: SessionOptions, beq: BeqConfig) -> Self {
        let jobs = jobs.max(1);
        Self {
            pool: SessionPool::new(backend, jobs, options),
            jobs,
            beq,
            exec: Execution::default(),
        }
    }

    pub fn backend(&self) -> &Arc<dyn ProverBackend> {
        self.pool.backend()
    }

    pub fn jobs(&self) -> usize {
        self.jobs
    }

    fn with_session<R>(&self, f: impl FnOnce(&mut Session) -> R) -> Result<R, BackendError> {
        let mut s = self.pool.acquire()?;
        Ok(f(&mut s))
    }

    /// Cleans and type-checks every pool.
    pub fn typecheck_pools(&self, pools: &[CandidatePool]) -> Result<Vec<Filtered>, RunError> {
        let header = self.beq.header.as_deref();
        let results = run_tasks(pools, self.jobs, |_, pool| {
            self.with_session(|s| filter_with(pool.clone(), true, |stmt| typecheck_statement(s, stmt, header)))
        });
        collect_all(results)
    }

    /// Checks every pair; the result keeps input order.
    pub fn check_pairs(&self, pairs: &[StatementPair], metric: Metric) -> Result<Vec<VerdictLogEntry>, RunError> {
        let results = run_tasks(pairs, self.jobs, |_, p| {
            self.with_session(|s| {
                let v = check(s, &p.t1, &p.t2, metric, &self.beq);
                VerdictLogEntry::new(p.id.clone(), metric, &p.t1, &p.t2, v)
            })
        });
        collect_logged(results)
    }

    /// Scores a metric against human labels, overall and per length stratum.
    pub fn eval_verif(
        &self,
        data: &VerifDataset,
        metric: Metric,
        cuts: (usize, usize),
    ) -> Result<(VerifReport, Vec<VerdictLogEntry>), RunError> {
        let results = run_tasks(&data.records, self.jobs, |_, r| {
            self.with_session(|s| {
                let v = check(s, &r.prediction, &r.reference, metric, &self.beq);
                VerdictLogEntry::new(r.id.clone(), metric, &r.prediction, &r.reference, v)
            })
        });
        let log = collect_logged(results)?;

        // (prediction, label, reference length)
        let mut rows: Vec<(bool, bool, usize)> = data
            .records
            .iter()
            .zip(&log)
            .map(|(r, e)| (e.result.is_equivalent(), r.label, r.reference_length))
            .collect();
        rows.extend(data.unparsed.iter().map(|u| (false, u.label, u.reference_length)));
        let report = verif_report(&rows, metric, cuts, count_errors(&log))?;
        Ok((report, log))
    }

    /// The sampling pipeline for every problem that has a reference.
    pub fn eval_autoform(&self, pools: &[CandidatePool], refs: &[Reference], opts: &AutoformOptions) -> Result<AutoformRun, RunError> {
        let by_id: HashMap<&str, &Reference> = refs.iter().map(|r| (r.problem_id.as_str(), r)).collect();
        let pool_ids: HashSet<&str> = pools.iter().map(|p| p.problem_id.as_str()).collect();
        let mut unmatched: Vec<String> = pools
            .iter()
            .filter(|p| !by_id.contains_key(p.problem_id.as_str()))
            .map(|p| format!("pool without reference: {}", p.problem_id))
            .collect();
        unmatched.extend(
            refs.iter()
                .filter(|r| !pool_ids.contains(r.problem_id.as_str()))
                .map(|r| format!("reference without pool: {}", r.problem_id)),
        );
        for u in &unmatched {
            warn!("{u}");
        }
        let joined: Vec<(&CandidatePool, &Reference)> = pools
            .iter()
            .filter_map(|p| by_id.get(p.problem_id.as_str()).map(|r| (p, *r)))
            .collect();

        let results = run_tasks(&joined, self.jobs, |_, (pool, reference)| {
            self.with_session(|s| self.solve_problem(s, pool, &reference.statement, opts))
        });
        let problems = collect_all(results)?;

        let labels = index_labels(&opts.labels, opts.method);
        let mut outcomes = Vec::with_capacity(problems.len());
        let mut selection_log = Vec::with_capacity(problems.len());
        let mut verdict_log = Vec::new();
        let mut budget_exhausted = Vec::new();
        for mut p in problems {
            p.outcome.human_label = labels.get(p.outcome.problem_id.as_str()).copied();
            outcomes.push(p.outcome);
            selection_log.push(p.selection);
            verdict_log.extend(p.verdicts);
            if p.budget_exhausted {
                budget_exhausted.push(p.selection_problem);
            }
        }
        let report = aggregate_report(opts.method.as_str(), &outcomes, &opts.metrics, &opts.k_list)?;
        info!(problems = outcomes.len(), "autoformalization run finished");
        Ok(AutoformRun {
            report,
            outcomes,
            selection_log,
            verdict_log,
            unmatched,
            budget_exhausted,
        })
    }

    fn solve_problem(
        &self,
        session: &mut Session,
        pool: &CandidatePool,
        reference: &FormalStatement,
        opts: &AutoformOptions,
    ) -> ProblemRun {
        let header = self.beq.header.as_deref();
        let filtered = if opts.filter {
            filter_with(pool.clone(), true, |stmt| typecheck_statement(session, stmt, header))
        } else {
            filter_with(pool.clone(), false, |_| unreachable!("filtering disabled"))
        };
        let survivors = filtered.survivor_pool().candidates;
        let statements: Vec<FormalStatement> = survivors
            .iter()
            .map(|c| c.cleaned.clone().expect("survivors are cleaned"))
            .collect();

        let mut budget_exhausted = false;
        let selection: Option<Selection> = if survivors.is_empty() {
            None
        } else {
            let chosen = match opts.method {
                SelectionMethod::Random => select_random(&survivors, opts.seed, &pool.problem_id),
                SelectionMethod::Majority => select_majority(&survivors),
                SelectionMethod::SelfBleu => select_self_bleu(&survivors, self.exec),
                SelectionMethod::Symbolic => {
                    let checker = SessionChecker {
                        session: Mutex::new(&mut *session),
                        statements: &statements,
                        cfg: &self.beq,
                    };
                    select_symbolic(statements.len(), &checker, Execution::Sequential, opts.symbolic_budget).map(|r| {
                        budget_exhausted = r.budget_exhausted;
                        r.selection
                    })
                }
            };
            Some(chosen.expect("non-empty survivors"))
        };

        let mut verdicts = Vec::new();
        let mut outcome = ProblemOutcome {
            problem_id: pool.problem_id.clone(),
            pool_size: pool.candidates.len(),
            survivors: survivors.len(),
            chosen_index: selection.map(|s| filtered.survivors[s.index]),
            beq_l: None,
            beq_plus: None,
            correct: None,
            human_label: None,
        };
        let mut plus_by_survivor: HashMap<usize, bool> = HashMap::new();
        if let Some(sel) = selection {
            let chosen = &statements[sel.index];
            for &metric in &opts.metrics {
                let v = check(session, chosen, reference, metric, &self.beq);
                match metric {
                    Metric::BeqL => outcome.beq_l = Some(v.verdict),
                    Metric::BeqPlus => {
                        outcome.beq_plus = Some(v.verdict);
                        plus_by_survivor.insert(sel.index, v.is_equivalent());
                    }
                }
                verdicts.push(VerdictLogEntry::new(pool.problem_id.clone(), metric, chosen, reference, v));
            }
        }
        if !opts.k_list.is_empty() {
            let mut correct = 0;
            for (i, stmt) in statements.iter().enumerate() {
                let ok = match plus_by_survivor.get(&i) {
                    Some(&ok) => ok,
                    None => {
                        let v = check(session, stmt, reference, Metric::BeqPlus, &self.beq);
                        let ok = v.is_equivalent();
                        verdicts.push(VerdictLogEntry::new(
                            format!("{}#{}", pool.problem_id, filtered.survivors[i]),
                            Metric::BeqPlus,
                            stmt,
                            reference,
                            v,
                        ));
                        ok
                    }
                };
                correct += usize::from(ok);
            }
            outcome.correct = Some(correct);
        }
        ProblemRun {
            selection: SelectionLogEntry {
                problem_id: pool.problem_id.clone(),
                method: opts.method,
                chosen_index: outcome.chosen_index,
                pool_size: outcome.pool_size,
                survivors: outcome.survivors,
                tie_break_applied: selection.is_some_and(|s| s.tie_break_applied),
            },
            selection_problem: pool.problem_id.clone(),
            outcome,
            verdicts,
            budget_exhausted,
        }
    }
}

/// Pair checks for symbolic selection on the task's own session.
struct SessionChecker<'a, 's> {
    session: Mutex<&'s mut Session>,
    statements: &'a [FormalStatement],
    cfg: &'a BeqConfig,
}

impl PairChecker for SessionChecker<'_, '_> {
    fn equivalent(&self, a: usize, b: usize) -> bool {
        let mut s = self.session.lock().expect("session lock");
        check(&mut s, &self.statements[a], &self.statements[b], Metric::BeqPlus, self.cfg).is_equivalent()
    }

    fn concurrent(&self) -> bool {
        false
    }
}

struct ProblemRun {
    outcome: ProblemOutcome,
    selection: SelectionLogEntry,
    selection_problem: String,
    verdicts: Vec<VerdictLogEntry>,
    budget_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoformOptions {
    pub method: SelectionMethod,
    pub seed: u64,
    pub metrics: Vec<Metric>,
    pub k_list: Vec<u64>,
    /// Type-check filtering before selection (off for the ablation).
    pub filter: bool,
    /// Maximum pair checks per problem for symbolic selection.
    pub symbolic_budget: Option<usize>,
    pub labels: Vec<LabelRecord>,
}

impl Default for AutoformOptions {
    fn default() -> Self {
        Self {
            method: SelectionMethod::Random,
            seed: 0,
            metrics: vec![Metric::BeqL, Metric::BeqPlus],
            k_list: Vec::new(),
            filter: true,
            symbolic_budget: None,
            labels: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoformRun {
    pub report: EvalReport,
    pub outcomes: Vec<ProblemOutcome>,
    pub selection_log: Vec<SelectionLogEntry>,
    pub verdict_log: Vec<VerdictLogEntry>,
    /// Join failures between pools and references.
    pub unmatched: Vec<String>,
    /// Problems whose symbolic selection ran out of pair-check budget.
    pub budget_exhausted: Vec<String>,
}

/// The serialized form of an autoformalization run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoformSummary {
    pub report: EvalReport,
    pub unmatched: Vec<String>,
    pub budget_exhausted: Vec<String>,
    pub outcomes: Vec<ProblemOutcome>,
}

impl From<&AutoformRun> for AutoformSummary {
    fn from(r: &AutoformRun) -> Self {
        Self {
            report: r.report.clone(),
            unmatched: r.unmatched.clone(),
            budget_exhausted: r.budget_exhausted.clone(),
            outcomes: r.outcomes.clone(),
        }
    }
}

fn index_labels(labels: &[LabelRecord], method: SelectionMethod) -> HashMap<&str, bool> {
    let mut out = HashMap::new();
    for l in labels {
        match l.method.as_deref() {
            None => {
                out.entry(l.problem_id.as_str()).or_insert(l.correct);
            }
            Some(m) if m.parse::<SelectionMethod>().ok() == Some(method) => {
                out.insert(l.problem_id.as_str(), l.correct);
            }
            Some(_) => {}
        }
    }
    out
}

fn split_results<R>(results: Vec<Result<R, BackendError>>) -> (Vec<R>, Option<BackendError>) {
    let mut ok = Vec::with_capacity(results.len());
    let mut first_err = None;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    (ok, first_err)
}

fn collect_all<R>(results: Vec<Result<R, BackendError>>) -> Result<Vec<R>, RunError> {
    match split_results(results) {
        (ok, None) => Ok(ok),
        (ok, Some(error)) => Err(RunError::Backend {
            error,
            completed: ok.len(),
            partial_log: Vec::new(),
        }),
    }
}

fn collect_logged(results: Vec<Result<VerdictLogEntry, BackendError>>) -> Result<Vec<VerdictLogEntry>, RunError> {
    match split_results(results) {
        (ok, None) => Ok(ok),
        (ok, Some(error)) => Err(RunError::Backend {
            error,
            completed: ok.len(),
            partial_log: ok.iter().map(VerdictLogEntry::to_json_line).collect(),
        }),
    }
}

fn count_errors(log: &[VerdictLogEntry]) -> usize {
    log.iter().filter(|e| e.result.verdict == Verdict::Error).count()
}

/// Builds the verif report from (prediction, label, reference length) rows.
pub fn verif_report(
    rows: &[(bool, bool, usize)],
    metric: Metric,
    cuts: (usize, usize),
    errors: usize,
) -> Result<VerifReport, MetricsError> {
    if cuts.0 >= cuts.1 {
        return Err(MetricsError::Domain(format!("cuts must increase: {} >= {}", cuts.0, cuts.1)));
    }
    let preds: Vec<bool> = rows.iter().map(|r| r.0).collect();
    let labels: Vec<bool> = rows.iter().map(|r| r.1).collect();
    let overall = binary_metrics(&preds, &labels)?;
    let mut strata: Vec<Option<BinaryScore>> = Vec::with_capacity(3);
    for bucket in 0..3 {
        let (p, l): (Vec<bool>, Vec<bool>) = rows
            .iter()
            .filter(|r| length_bucket(r.2, cuts) == bucket)
            .map(|r| (r.0, r.1))
            .unzip();
        strata.push(binary_metrics(&p, &l).ok());
    }
    Ok(VerifReport {
        metric,
        overall,
        cuts,
        strata,
        errors,
    })
}

/// Verdict counts for a batch of pair checks.
pub fn verdict_counts(log: &[VerdictLogEntry]) -> Vec<(Verdict, usize)> {
    let order = [
        Verdict::Equivalent,
        Verdict::ForwardOnly,
        Verdict::BackwardOnly,
        Verdict::NotProven,
        Verdict::TrivialityFlagged,
        Verdict::Error,
    ];
    order
        .iter()
        .map(|&v| (v, log.iter().filter(|e| e.result.verdict == v).count()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tasks_keep_order_under_any_job_count() {
        let items: Vec<usize> = (0..100).collect();
        for jobs in [1, 3, 16] {
            let out = run_tasks(&items, jobs, |i, &x| {
                assert_eq!(i, x);
                x * 2
            });
            assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        }
        assert!(run_tasks(&Vec::<u8>::new(), 4, |_, _| 0).is_empty());
    }

    #[test]
    fn verif_report_strata() {
        let rows = [(true, true, 100), (false, true, 120), (true, false, 200), (false, false, 165)];
        let r = verif_report(&rows, Metric::BeqPlus, (115, 165), 0).unwrap();
        assert_eq!(r.overall.tp, 1);
        assert_eq!(r.strata[0].as_ref().unwrap().tp, 1);
        assert_eq!(r.strata[1].as_ref().unwrap().total(), 2);
        assert_eq!(r.strata[2].as_ref().unwrap().fp, 1);
    }
}
