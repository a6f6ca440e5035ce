//! The Lean REPL transport against a stand-in REPL written in Python.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Duration;

use beqh_core::beq::{beq_plus, BeqConfig};
use beqh_core::prover::{BackendError, LeanReplBackend, ProverBackend, SessionOptions};
use beqh_core::{FormalStatement, Origin, Verdict};

/// Reads blank-line separated JSON requests and answers with pretty-printed
/// (multi-line) JSON. Commands mentioning `SLOW` stall, `CRASH` exits.
const FAKE_REPL: &str = r#"
import json, sys, time
env = 0
buf = ""
for line in sys.stdin:
    if line.strip():
        buf += line
        continue
    if not buf.strip():
        continue
    req = json.loads(buf)
    buf = ""
    cmd = req["cmd"]
    if "SLOW" in cmd:
        time.sleep(30)
    if "CRASH" in cmd:
        sys.exit(1)
    resp = {"env": env}
    if "sorry" in cmd:
        resp["sorries"] = [{"pos": {"line": 1, "column": 0}, "endPos": {"line": 1, "column": 5},
                            "goal": "⊢ True"}]
    if "BROKEN" in cmd:
        resp["messages"] = [{"severity": "error", "pos": {"line": 1, "column": 0},
                             "endPos": {"line": 1, "column": 6}, "data": "unknown identifier"}]
    if "exact?" in cmd and "src_thm" in cmd:
        resp["messages"] = [{"severity": "info", "pos": {"line": 2, "column": 2},
                             "endPos": {"line": 2, "column": 8}, "data": "Try this: exact src_thm"}]
    if cmd.startswith("theorem tgt_thm") and "all_goals" in cmd.split(":= by", 1)[1].split("\n")[1]:
        resp["messages"] = [{"severity": "error", "pos": {"line": 2, "column": 2},
                             "endPos": {"line": 2, "column": 8}, "data": "unsolved goals"}]
    env += 1
    with open("requests.log", "a") as log:
        log.write(json.dumps(req) + "\n")
    print(json.dumps(resp, indent=2, ensure_ascii=False))
    print()
    sys.stdout.flush()
"#;

fn python() -> Option<&'static str> {
    Command::new("python3").arg("--version").output().ok().map(|_| "python3")
}

fn fake_project(dir: &Path) -> LeanReplBackend {
    fs::write(dir.join("fake_repl.py"), FAKE_REPL).unwrap();
    fs::write(dir.join("lean-toolchain"), "leanprover/lean4:v4.9.0\n").unwrap();
    LeanReplBackend::new(dir)
        .with_command("python3", vec!["-u".into(), "fake_repl.py".into()])
        .with_startup_timeout(Duration::from_secs(10))
}

fn options(timeout_ms: u64) -> SessionOptions {
    SessionOptions {
        command_timeout: Duration::from_millis(timeout_ms),
        ..SessionOptions::default()
    }
}

#[test]
fn multi_line_responses_and_env_numbering() {
    if python().is_none() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let backend = fake_project(dir.path());
    assert_eq!(backend.toolchain(), "leanprover/lean4:v4.9.0");
    let mut s = backend.start_session(options(5000)).unwrap();
    let first = s.run_command("import Mathlib", None, None).unwrap();
    assert_eq!(first.env, Some(0));
    let second = s.run_command("theorem t : True := sorry", first.env, None).unwrap();
    assert_eq!(second.env, Some(1));
    assert_eq!(second.sorries[0].goal, "⊢ True");
    let bad = s.run_command("theorem t : BROKEN := trivial", Some(0), None).unwrap();
    assert!(bad.has_errors());

    let log = fs::read_to_string(dir.path().join("requests.log")).unwrap();
    let reqs: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(reqs[0].get("env").is_none());
    assert_eq!(reqs[1]["env"], 0);
    assert_eq!(reqs[1]["cmd"], "theorem t : True := sorry");
}

#[test]
fn timeout_kills_the_session_and_recycle_restarts_it() {
    if python().is_none() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let backend = fake_project(dir.path());
    let mut s = backend.start_session(options(5000)).unwrap();
    s.run_command("import Mathlib", None, None).unwrap();
    let err = s
        .run_command("theorem SLOW : True := trivial", Some(0), Some(Duration::from_millis(300)))
        .unwrap_err();
    assert_eq!(err, BackendError::CommandTimeout(Duration::from_millis(300)));
    assert!(s.is_dead());
    assert_eq!(s.run_command("import Mathlib", None, None).unwrap_err(), BackendError::SessionDead);
    s.recycle().unwrap();
    // a fresh process numbers environments from zero again
    assert_eq!(s.run_command("import Mathlib", None, None).unwrap().env, Some(0));
}

#[test]
fn crash_is_reported_as_dead_session() {
    if python().is_none() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let mut s = fake_project(dir.path()).start_session(options(5000)).unwrap();
    s.run_command("import Mathlib", None, None).unwrap();
    assert_eq!(s.run_command("CRASH", Some(0), None).unwrap_err(), BackendError::SessionDead);
}

#[test]
fn missing_toolchain() {
    let dir = tempfile::tempdir().unwrap();
    let missing = LeanReplBackend::new(dir.path().join("nope"));
    assert!(matches!(missing.start_session(options(100)), Err(BackendError::ToolchainMissing(_))));
    let no_binary = LeanReplBackend::new(dir.path()).with_command("beqh-no-such-repl", Vec::new());
    assert!(matches!(no_binary.start_session(options(100)), Err(BackendError::ToolchainMissing(_))));
    assert_eq!(LeanReplBackend::new(dir.path()).toolchain(), "unknown");
}

#[test]
fn beq_plus_over_the_transport() {
    if python().is_none() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let mut s = fake_project(dir.path()).start_session(options(5000)).unwrap();
    let t = FormalStatement::parse("theorem a (n : ℕ) : n = n", Origin::Synthetic).unwrap();
    let cfg = BeqConfig {
        record_timing: false,
        ..BeqConfig::default()
    };
    let v = beq_plus(&mut s, &t, &t, &cfg);
    assert_eq!(v.verdict, Verdict::Equivalent, "{v:?}");
}
