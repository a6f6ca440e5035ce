use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn beqh() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_beqh"));
    c.env_remove("BEQH_LEAN_PROJECT").env_remove("BEQH_TIMEOUT").env_remove("RUST_LOG");
    c
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("data").join(name)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn write_lines(path: &Path, rows: &[Value]) {
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    fs::write(path, text).unwrap();
}

fn point(label: &str, human: f64, tc: f64, l: f64, plus: f64) -> Value {
    json!({"label": label, "human_accuracy": human, "type_check_rate": tc, "beq_l_rate": l, "beq_plus_rate": plus})
}

#[test]
fn correlate_identity_and_reversed() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("points.jsonl");
    let rows: Vec<Value> = (0..6)
        .map(|i| {
            let h = 10.0 * i as f64 + 5.0;
            point(&format!("m{i}"), h, 100.0 - h, 50.0, h)
        })
        .collect();
    write_lines(&pts, &rows);
    let out = dir.path().join("out");
    let o = beqh().arg("--out-dir").arg(&out).arg("correlate").arg("--points").arg(&pts).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = read_json(&out.join("correlation.json"));
    let rows = table.as_array().expect("rows");
    let find = |m: &str| rows.iter().find(|r| r["metric"] == m).unwrap_or_else(|| panic!("{m} in {table}"));
    let close = |v: &Value, want: f64| (v.as_f64().unwrap() - want).abs() < 1e-12;
    assert!(close(&find("BEq+")["pearson"], 1.0), "{table}");
    assert!(close(&find("BEq+")["kendall"], 1.0), "{table}");
    assert!(close(&find("Type-Check")["pearson"], -1.0), "{table}");
    assert!(close(&find("Type-Check")["kendall"], -1.0), "{table}");
    // constant column
    assert!(find("BEq_L")["pearson"].is_null());
    assert!(find("BEq_L")["kendall"].is_null());
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "correlate");
    assert_eq!(manifest["exit_code"], 0);
    assert_eq!(manifest["datasets"][0]["role"], "points");
    assert_eq!(manifest["datasets"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn schema_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("points.jsonl");
    fs::write(&pts, "{\"label\": \"a\", \"human_accuracy\": 1.0}\n").unwrap();
    let o = beqh().arg("--out-dir").arg(dir.path()).args(["correlate", "--points"]).arg(&pts).output().unwrap();
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));

    write_lines(&pts, &[point("only", 1.0, 1.0, 1.0, 1.0)]);
    let o = beqh().arg("--out-dir").arg(dir.path()).args(["correlate", "--points"]).arg(&pts).output().unwrap();
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert_eq!(read_json(&dir.path().join("manifest.json"))["exit_code"], 2);
}

#[test]
fn backend_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = beqh()
        .arg("--out-dir")
        .arg(dir.path())
        .args(["beq", "--pairs"])
        .arg(data("sorg_pair.jsonl"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("--project"), "{}", stderr(&o));

    let o = beqh()
        .arg("--project")
        .arg(dir.path().join("missing"))
        .arg("--out-dir")
        .arg(dir.path())
        .args(["beq", "--pairs"])
        .arg(data("sorg_pair.jsonl"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn error_verdicts_exit_4_with_outputs_kept() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("t.jsonl");
    fs::write(&transcript, "{\"request\": \"import Mathlib\", \"response\": {\"env\": 0}}\n").unwrap();
    let out = dir.path().join("out");
    let o = beqh()
        .args(["--backend", "scripted", "--transcript"])
        .arg(&transcript)
        .arg("--out-dir")
        .arg(&out)
        .args(["beq", "--pairs"])
        .arg(data("sorg_pair.jsonl"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let log = fs::read_to_string(out.join("verdicts.jsonl")).unwrap();
    assert!(log.contains("\"verdict\":\"error\""), "{log}");
}

#[test]
fn guard_flag_changes_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let run = |extra: &[&str]| {
        let o = beqh()
            .args(["--backend", "scripted", "--no-timing", "--transcript"])
            .arg(data("sorg_legacy.jsonl"))
            .arg("--out-dir")
            .arg(dir.path())
            .args(["beq", "--pairs"])
            .arg(data("sorg_pair.jsonl"))
            .args(extra)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let log = fs::read_to_string(dir.path().join("verdicts.jsonl")).unwrap();
        serde_json::from_str::<Value>(log.lines().next().unwrap()).unwrap()["verdict"].clone()
    };
    assert_eq!(run(&[]), "triviality_flagged");
    assert_eq!(run(&["--no-guard"]), "equivalent");
}

#[test]
fn config_file_defaults_and_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("beqh.toml");
    fs::write(
        &cfg,
        format!(
            "backend = \"scripted\"\ntranscript = {:?}\njobs = 3\nno-timing = true\n[beq]\nno-guard = true\n",
            data("sorg_legacy.jsonl").display().to_string()
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = beqh()
        .arg("--config")
        .arg(&cfg)
        .arg("--jobs")
        .arg("2")
        .arg("--out-dir")
        .arg(&out)
        .args(["beq", "--pairs"])
        .arg(data("sorg_pair.jsonl"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["jobs"], 2);
    assert_eq!(m["beq"]["triviality_guard"], false);
    assert_eq!(m["beq"]["record_timing"], false);
    assert_eq!(m["backend"]["kind"], "scripted");
    let args: Vec<&str> = m["args"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    assert!(args.contains(&"--no-guard"), "{args:?}");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "jobz = 1\n").unwrap();
    let o = beqh().arg("--config").arg(&bad).args(["beq", "--pairs"]).arg(data("sorg_pair.jsonl")).output().unwrap();
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn eval_verif_with_planted_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    // Two identical pairs (the transcript proves both directions with
    // exact?), one negative with an unparseable prediction.
    let dataset = dir.path().join("verif.jsonl");
    let row = |id: &str, pred: &str, label: bool| {
        json!({"id": id, "nl_statement": "x", "src_header": "import Mathlib",
               "reference": "theorem r (n : ℕ) : n = n", "prediction": pred, "label": label})
    };
    write_lines(
        &dataset,
        &[
            row("a", "theorem p (n : ℕ) : n = n", true),
            row("b", "theorem p (n : ℕ) : n = n", true),
            row("c", "not lean at all", false),
        ],
    );
    let transcript = dir.path().join("t.jsonl");
    let exact = "theorem tgt_thm (n : ℕ) : n = n := by\n  exact?";
    let probe = "theorem tgt_thm (n : ℕ) : n = n := by\n  all_goals iterate 3 (first | tauto | simp_all_arith! | noncomm_ring | exact?)";
    let entry = |req: &str, resp: Value| json!({"request": req, "response": resp});
    write_lines(
        &transcript,
        &[
            entry("import Mathlib", json!({"env": 0})),
            entry(
                "theorem src_thm (n : ℕ) : n = n := sorry",
                json!({"env": 1, "sorries": [{"goal": "n : ℕ\n⊢ n = n"}]}),
            ),
            entry(
                exact,
                json!({"env": 2, "messages": [{"severity": "info", "data": "Try this: exact src_thm n"}]}),
            ),
            entry(probe, json!({"env": 3, "messages": [{"severity": "error", "data": "unsolved goals"}]})),
        ],
    );
    let out = dir.path().join("out");
    let o = beqh()
        .args(["--backend", "scripted", "--no-timing", "--transcript"])
        .arg(&transcript)
        .arg("--out-dir")
        .arg(&out)
        .args(["eval-verif", "--dataset"])
        .arg(&dataset)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("1 with unparseable prediction"), "{stdout}");
    let report = read_json(&out.join("verif_report.json"));
    let overall = &report["overall"];
    assert_eq!(overall["precision"], 100.0, "{report}");
    assert_eq!(overall["recall"], 100.0);
    assert_eq!(overall["f1"], 100.0);
}

#[test]
fn generate_refuses_offline_and_reports_partial_pools() {
    let dir = tempfile::tempdir().unwrap();
    let problems = dir.path().join("problems.jsonl");
    write_lines(&problems, &[json!({"problem_id": "p1", "informal": "Show 1 = 1."})]);
    let template = dir.path().join("prompt.txt");
    fs::write(&template, "Formalize: {informal}\n").unwrap();
    let o = beqh()
        .arg("--out-dir")
        .arg(dir.path())
        .args(["generate", "--model", "m", "--problems"])
        .arg(&problems)
        .arg("--prompt-template")
        .arg(&template)
        .output()
        .unwrap();
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("--endpoint"), "{}", stderr(&o));

    // an endpoint that refuses every request
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        use std::io::{Read, Write};
        for stream in listener.incoming() {
            let mut s = stream.unwrap();
            let mut buf = [0u8; 65536];
            let _ = s.read(&mut buf);
            let body = "{\"error\":\"bad request\"}";
            let _ = write!(
                s,
                "HTTP/1.1 400 Bad Request\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    let o = beqh()
        .arg("--out-dir")
        .arg(dir.path())
        .args(["generate", "--model", "m", "--endpoint"])
        .arg(format!("http://{addr}/v1/completions"))
        .arg("--problems")
        .arg(&problems)
        .arg("--prompt-template")
        .arg(&template)
        .output()
        .unwrap();
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(dir.path().join("pools.jsonl").exists());
}
