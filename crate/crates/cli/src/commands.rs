use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;
use tracing::warn;

use beqh_core::beq::BeqConfig;
use beqh_core::exec::Execution;
use beqh_core::harness::{
    load_jsonl, load_pairs, load_pools, load_references, load_verif_dataset, to_jsonl, verdict_counts, write_atomic,
    AutoformOptions, AutoformSummary, DatasetKind, EndpointConfig, FieldMap, GenerateError, Generator, Harness,
    LabelRecord, LoadError, PoolRecord, ProblemRecord, RunError, SchemaIssue,
};
use beqh_core::metrics::{correlate, correlation_markdown, report_markdown, verif_markdown, BenchmarkPoint, MetricsError};
use beqh_core::prover::{BackendError, LeanReplBackend, ProverBackend, RecordingBackend, ScriptedBackend, SessionOptions};
use beqh_core::statement::{TypeCheckStatus, Verdict};

use crate::manifest::{BackendInfo, RunManifest};
use crate::{exit, BackendKind, BeqFlags, Cli, Command, Common};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("{0}")]
    Schema(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error("{0}")]
    Partial(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Load(LoadError::Schema { .. }) | CliError::Schema(_) => exit::SCHEMA,
            CliError::Load(LoadError::Io { .. }) | CliError::Other(_) => exit::FAILURE,
            CliError::Backend(_) => exit::BACKEND,
            CliError::Partial(_) => exit::PARTIAL,
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Other(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Other(format!("{}: {e}", path.display()))
}

/// Output files of a run, written atomically and listed in the manifest.
struct Outputs<'a> {
    dir: &'a Path,
    manifest: &'a mut RunManifest,
}

impl Outputs<'_> {
    fn write(&mut self, path: &Path, contents: &[u8]) -> Result<(), CliError> {
        write_atomic(path, contents).map_err(io_err(path))?;
        self.manifest.outputs.push(path.display().to_string());
        Ok(())
    }

    fn write_named(&mut self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        self.write(&path, contents)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        self.write_named(name, text.as_bytes())
    }
}

pub fn run(cli: &Cli, argv: &[OsString]) -> Result<u8, CliError> {
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let mut manifest = RunManifest::new(command_name(&cli.command), args, cli.common.jobs);
    let result = dispatch(cli, &mut manifest);
    manifest.exit_code = match &result {
        Ok(()) => exit::OK,
        Err(e) => e.exit_code(),
    };
    let path = cli.common.out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    if let Err(e) = write_atomic(&path, text.as_bytes()) {
        warn!("could not write {}: {e}", path.display());
    }
    result.map(|()| exit::OK)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Typecheck { .. } => "typecheck",
        Command::Beq { .. } => "beq",
        Command::EvalVerif { .. } => "eval-verif",
        Command::EvalAutoform { .. } => "eval-autoform",
        Command::Correlate { .. } => "correlate",
        Command::Generate { .. } => "generate",
    }
}

fn dispatch(cli: &Cli, manifest: &mut RunManifest) -> Result<(), CliError> {
    let common = &cli.common;
    let fields = common.field_map.as_deref().map(FieldMap::load).transpose()?;
    let fields = fields.as_ref();
    match &cli.command {
        Command::Typecheck { pools } => {
            manifest.add_dataset("pools", pools).map_err(io_err(pools))?;
            let pools = load_pools(pools, fields)?;
            with_prover(common, None, manifest, |h, out| typecheck(h, &pools, out))
        }
        Command::Beq {
            pairs,
            metric,
            beq,
            out,
        } => {
            manifest.add_dataset("pairs", pairs).map_err(io_err(pairs))?;
            let pairs = load_pairs(pairs, fields)?;
            let out_path = out.clone().unwrap_or_else(|| common.out_dir.join("verdicts.jsonl"));
            with_prover(common, Some(beq), manifest, |h, out| {
                let log = h.check_pairs(&pairs, *metric);
                let log = keep_partial(log, out, &out_path)?;
                out.write(&out_path, to_jsonl(&log).as_bytes())?;
                for (v, n) in verdict_counts(&log) {
                    println!("{:<20} {n}", verdict_name(v));
                }
                errors_are_partial(log.iter().filter(|e| e.result.verdict == Verdict::Error).count())
            })
        }
        Command::EvalVerif {
            dataset,
            metric,
            strata,
            beq,
        } => {
            manifest.add_dataset("dataset", dataset).map_err(io_err(dataset))?;
            let data = load_verif_dataset(dataset, fields)?;
            println!(
                "loaded {} records: {} positive, {} with unparseable prediction",
                data.total(),
                data.positives(),
                data.unparsed.len()
            );
            for u in &data.unparsed {
                warn!(id = %u.id, line = u.line, "prediction scored negative: {}", u.error);
            }
            let verdict_path = common.out_dir.join("verdicts.jsonl");
            with_prover(common, Some(beq), manifest, |h, out| {
                let (report, log) = keep_partial(h.eval_verif(&data, *metric, *strata), out, &verdict_path)?;
                out.write(&verdict_path, to_jsonl(&log).as_bytes())?;
                out.write_json("verif_report.json", &report)?;
                let md = verif_markdown(&report);
                out.write_named("verif_report.md", md.as_bytes())?;
                print!("{md}");
                if report.errors > 0 {
                    warn!(errors = report.errors, "some checks ended in backend errors and count as negative");
                }
                errors_are_partial(report.errors)
            })
        }
        Command::EvalAutoform {
            pools,
            refs,
            method,
            seed,
            k_list,
            metrics,
            no_filter,
            labels,
            budget,
            beq,
        } => {
            manifest.seed = Some(*seed);
            manifest.add_dataset("pools", pools).map_err(io_err(pools))?;
            manifest.add_dataset("refs", refs).map_err(io_err(refs))?;
            let pools = load_pools(pools, fields)?;
            let refs = load_references(refs, fields)?;
            let labels = match labels {
                Some(p) => {
                    manifest.add_dataset("labels", p).map_err(io_err(p))?;
                    load_jsonl::<LabelRecord>(p, DatasetKind::LabelFile, fields)?
                        .into_iter()
                        .map(|(_, l)| l)
                        .collect()
                }
                None => Vec::new(),
            };
            let opts = AutoformOptions {
                method: *method,
                seed: *seed,
                metrics: metrics.clone(),
                k_list: k_list.clone(),
                filter: !no_filter,
                symbolic_budget: *budget,
                labels,
            };
            with_prover(common, Some(beq), manifest, |h, out| {
                let run = h.eval_autoform(&pools, &refs, &opts).map_err(run_error)?;
                out.write_named("selection.jsonl", to_jsonl(&run.selection_log).as_bytes())?;
                out.write_named("verdicts.jsonl", to_jsonl(&run.verdict_log).as_bytes())?;
                out.write_json("report.json", &AutoformSummary::from(&run))?;
                let md = report_markdown(std::slice::from_ref(&run.report));
                out.write_named("report.md", md.as_bytes())?;
                print!("{md}");
                for u in &run.unmatched {
                    eprintln!("warning: {u}");
                }
                for p in &run.budget_exhausted {
                    eprintln!("warning: symbolic selection budget exhausted for {p}");
                }
                errors_are_partial(run.verdict_log.iter().filter(|e| e.result.verdict == Verdict::Error).count())
            })
        }
        Command::Correlate { points } => {
            manifest.add_dataset("points", points).map_err(io_err(points))?;
            let rows: Vec<(usize, BenchmarkPoint)> = load_jsonl(points, DatasetKind::PointFile, fields)?;
            let issues: Vec<SchemaIssue> = rows
                .iter()
                .filter_map(|(line, p)| p.validate().err().map(|message| SchemaIssue { line: *line, message }))
                .collect();
            if !issues.is_empty() {
                return Err(LoadError::Schema {
                    path: points.clone(),
                    kind: DatasetKind::PointFile,
                    issues,
                }
                .into());
            }
            let pts: Vec<BenchmarkPoint> = rows.into_iter().map(|(_, p)| p).collect();
            let table = match correlate(&pts, execution(common)) {
                Ok(t) => t,
                Err(e @ MetricsError::TooFewPoints(_)) => return Err(CliError::Schema(e.to_string())),
                Err(e) => return Err(e.into()),
            };
            let mut out = Outputs {
                dir: &common.out_dir,
                manifest,
            };
            out.write_json("correlation.json", &table)?;
            let md = correlation_markdown(&table);
            out.write_named("correlation.md", md.as_bytes())?;
            print!("{md}");
            Ok(())
        }
        Command::Generate {
            problems,
            endpoint,
            model,
            temperature,
            n,
            max_tokens,
            retries,
            token_env,
            prompt_template,
            out,
        } => {
            manifest.add_dataset("problems", problems).map_err(io_err(problems))?;
            manifest.add_dataset("prompt_template", prompt_template).map_err(io_err(prompt_template))?;
            let records: Vec<ProblemRecord> = load_jsonl(problems, DatasetKind::ProblemFile, fields)?
                .into_iter()
                .map(|(_, p)| p)
                .collect();
            let template = fs::read_to_string(prompt_template).map_err(io_err(prompt_template))?;
            let mut cfg = EndpointConfig::new(endpoint.clone().unwrap_or_default(), model.clone(), *temperature, *n);
            cfg.token_env = token_env.clone();
            cfg.max_tokens = *max_tokens;
            cfg.retries = *retries;
            cfg.request_timeout = secs(common.timeout)?;
            let gen = Generator::new(cfg).map_err(gen_error)?;
            let run = gen.generate(&records, &template).map_err(gen_error)?;
            let out_path = out.clone().unwrap_or_else(|| common.out_dir.join("pools.jsonl"));
            let pool_records: Vec<PoolRecord> = run.pools.iter().map(PoolRecord::from).collect();
            let mut outputs = Outputs {
                dir: &common.out_dir,
                manifest,
            };
            outputs.write(&out_path, to_jsonl(&pool_records).as_bytes())?;
            println!("wrote {} pool(s) to {}", run.pools.len(), out_path.display());
            if run.failures.is_empty() {
                Ok(())
            } else {
                for (pid, e) in &run.failures {
                    eprintln!("failed: {pid}: {e}");
                }
                Err(CliError::Partial(format!(
                    "{} of {} problem(s) failed; partial pool file written",
                    run.failures.len(),
                    records.len()
                )))
            }
        }
    }
}

/// Error verdicts are written out like any other, but the run reports
/// partial results.
fn errors_are_partial(errors: usize) -> Result<(), CliError> {
    if errors == 0 {
        Ok(())
    } else {
        Err(CliError::Partial(format!("{errors} check(s) ended in an error verdict")))
    }
}

fn gen_error(e: GenerateError) -> CliError {
    match e {
        GenerateError::BadTemplate | GenerateError::Config(_) => CliError::Schema(e.to_string()),
        _ => CliError::Other(e.to_string()),
    }
}

fn run_error(e: RunError) -> CliError {
    match e {
        RunError::Backend { .. } => CliError::Backend(e.to_string()),
        RunError::Metrics(m) => m.into(),
    }
}

/// On a backend failure, saves the finished part of the verdict log next to
/// `path` before reporting the error.
fn keep_partial<T>(
    result: Result<T, RunError>,
    out: &mut Outputs<'_>,
    path: &Path,
) -> Result<T, CliError> {
    match result {
        Ok(v) => Ok(v),
        Err(RunError::Backend {
            error,
            completed,
            partial_log,
        }) => {
            let partial = partial_path(path);
            let mut text = partial_log.join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            out.write(&partial, text.as_bytes())?;
            Err(CliError::Backend(format!(
                "{error} ({completed} check(s) completed, log kept in {})",
                partial.display()
            )))
        }
        Err(e) => Err(run_error(e)),
    }
}

fn partial_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{name}.partial"))
}

fn verdict_name(v: Verdict) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| format!("{v:?}"))
}

fn execution(common: &Common) -> Execution {
    if common.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn secs(v: f64) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(v)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| CliError::Schema(format!("timeout must be a positive number of seconds, got {v}")))
}

fn beq_config(common: &Common, flags: Option<&BeqFlags>) -> Result<BeqConfig, CliError> {
    let mut cfg = BeqConfig {
        per_attempt_timeout: secs(common.attempt_timeout)?,
        header: (!common.no_header).then(|| common.header.clone()),
        record_timing: !common.no_timing,
        ..BeqConfig::default()
    };
    if let Some(f) = flags {
        cfg.triviality_guard = !f.no_guard;
        cfg.short_circuit = f.short_circuit;
    }
    cfg.validate().map_err(CliError::Schema)?;
    Ok(cfg)
}

fn open_backend(common: &Common) -> Result<Arc<dyn ProverBackend>, CliError> {
    match common.backend {
        BackendKind::Scripted => {
            let path = common
                .transcript
                .as_ref()
                .ok_or_else(|| CliError::Other("--backend scripted needs --transcript FILE".into()))?;
            let b = ScriptedBackend::from_file(path).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
            Ok(Arc::new(b))
        }
        BackendKind::Lean => {
            let root = common.project.as_ref().ok_or_else(|| {
                CliError::Backend("no Lean project; pass --project DIR or set BEQH_LEAN_PROJECT".into())
            })?;
            let mut b = LeanReplBackend::new(root);
            if let Some(cmd) = &common.repl_cmd {
                let mut parts = cmd.split_whitespace().map(String::from);
                let program = parts
                    .next()
                    .ok_or_else(|| CliError::Other("--repl-cmd is empty".into()))?;
                b = b.with_command(program, parts.collect());
            }
            Ok(Arc::new(b))
        }
    }
}

/// Opens the backend, runs `f` with a harness, and saves the recorded
/// transcript when `--record` is set.
fn with_prover<F>(common: &Common, flags: Option<&BeqFlags>, manifest: &mut RunManifest, f: F) -> Result<(), CliError>
where
    F: FnOnce(&Harness, &mut Outputs<'_>) -> Result<(), CliError>,
{
    let beq = beq_config(common, flags)?;
    let backend = open_backend(common)?;
    if let Some(t) = &common.transcript {
        if common.backend == BackendKind::Scripted {
            manifest.add_dataset("transcript", t).map_err(io_err(t))?;
        }
    }
    manifest.backend = Some(BackendInfo {
        kind: backend.kind().to_string(),
        toolchain: backend.toolchain(),
    });
    manifest.beq = Some(beq.clone());
    let recorder = common.record.as_ref().map(|_| Arc::new(RecordingBackend::new(Arc::clone(&backend))));
    let effective: Arc<dyn ProverBackend> = match &recorder {
        Some(r) => r.clone(),
        None => backend,
    };
    let options = SessionOptions {
        command_timeout: secs(common.timeout)?,
        recycle_after: common.recycle_after.max(1),
    };
    let mut harness = Harness::new(effective, common.jobs, options, beq);
    harness.exec = execution(common);
    let mut out = Outputs {
        dir: &common.out_dir,
        manifest,
    };
    let result = f(&harness, &mut out);
    drop(harness);
    if let (Some(rec), Some(path)) = (recorder, &common.record) {
        rec.transcript()
            .save(path)
            .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
        out.manifest.outputs.push(path.display().to_string());
    }
    result
}

fn typecheck(h: &Harness, pools: &[beqh_core::statement::CandidatePool], out: &mut Outputs<'_>) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Row<'a> {
        problem_id: &'a str,
        pool_size: usize,
        survivors: &'a [usize],
        statuses: Vec<Option<&'a TypeCheckStatus>>,
    }
    let filtered = h.typecheck_pools(pools).map_err(run_error)?;
    let rows: Vec<Row> = filtered
        .iter()
        .map(|f| Row {
            problem_id: &f.checked.problem_id,
            pool_size: f.checked.candidates.len(),
            survivors: &f.survivors,
            statuses: f.checked.candidates.iter().map(|c| c.typecheck.as_ref()).collect(),
        })
        .collect();
    out.write_named("typecheck.jsonl", to_jsonl(&rows).as_bytes())?;
    let passing = filtered.iter().filter(|f| f.type_checks()).count();
    let candidates: usize = filtered.iter().map(|f| f.checked.candidates.len()).sum();
    let survivors: usize = filtered.iter().map(|f| f.survivors.len()).sum();
    let rate = if filtered.is_empty() {
        0.0
    } else {
        100.0 * passing as f64 / filtered.len() as f64
    };
    println!("problems: {}  with a well-typed candidate: {passing} ({rate:.1}%)", filtered.len());
    println!("candidates: {candidates}  well-typed: {survivors}");
    Ok(())
}
