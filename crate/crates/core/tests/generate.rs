use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use beqh_core::harness::{EndpointConfig, GenerateError, Generator, ProblemRecord};
use beqh_core::statement::{ContextMode, DecodeMode};
use serde_json::Value;

/// Serves the given (status, body) pairs in order, one per connection, and
/// records each request body.
/// (authorization header, request body) of every request served.
type Seen = Arc<Mutex<Vec<(String, Value)>>>;

fn fake_server(replies: Vec<(u16, String)>) -> (String, Seen) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                let lower = l.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = l["authorization:".len()..].trim().to_string();
                }
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push((auth, serde_json::from_slice(&buf).unwrap()));
            let mut out = stream;
            write!(
                out,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            out.flush().unwrap();
        }
    });
    (format!("http://{addr}/v1/completions"), seen)
}

fn problem(id: &str) -> ProblemRecord {
    ProblemRecord {
        problem_id: id.into(),
        informal: "Every natural number is nonnegative.".into(),
        context: None,
        context_mode: ContextMode::None,
    }
}

fn quick(url: String, n: usize) -> EndpointConfig {
    let mut cfg = EndpointConfig::new(url, "test-model", 0.7, n);
    cfg.initial_backoff = Duration::from_millis(5);
    cfg.retries = 2;
    cfg.request_timeout = Duration::from_secs(10);
    cfg
}

#[test]
fn collects_choices_into_a_pool() {
    let body = r#"{"choices":[{"text":"theorem a (n : ℕ) : 0 ≤ n := by simp"},{"text":"theorem b : True := trivial"}]}"#;
    let (url, seen) = fake_server(vec![(200, body.into())]);
    let gen = Generator::new(quick(url, 2)).unwrap();
    let run = gen.generate(&[problem("p1")], "Q: {informal}\nA:").unwrap();
    assert!(run.failures.is_empty());
    assert_eq!(run.pools.len(), 1);
    let pool = &run.pools[0];
    assert_eq!(pool.candidates.len(), 2);
    assert_eq!(pool.gen_config.num_samples, 2);
    assert_eq!(pool.gen_config.decode_mode, DecodeMode::TemperatureSampling);
    let req = &seen.lock().unwrap()[0].1;
    assert_eq!(req["model"], "test-model");
    assert_eq!(req["n"], 2);
    assert_eq!(req["prompt"], "Q: Every natural number is nonnegative.\nA:");
}

#[test]
fn retries_transient_errors_then_succeeds() {
    let ok = r#"{"choices":[{"text":"theorem a : True := trivial"}]}"#;
    let (url, seen) = fake_server(vec![(503, "busy".into()), (429, "slow down".into()), (200, ok.into())]);
    let gen = Generator::new(quick(url, 1)).unwrap();
    let texts = gen.complete("x").unwrap();
    assert_eq!(texts, vec!["theorem a : True := trivial".to_string()]);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried_and_yield_partial_results() {
    let ok = r#"{"choices":[{"text":"theorem a : True := trivial"}]}"#;
    let (url, seen) = fake_server(vec![(200, ok.into()), (400, "bad".into())]);
    let gen = Generator::new(quick(url, 1)).unwrap();
    let run = gen.generate(&[problem("p1"), problem("p2")], "{informal}").unwrap();
    assert_eq!(run.pools.len(), 1);
    assert_eq!(run.failures.len(), 1);
    assert_eq!(run.failures[0].0, "p2");
    assert!(matches!(run.failures[0].1, GenerateError::Request { attempts: 1, .. }));
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn token_is_sent_as_bearer_header() {
    let ok = r#"{"choices":[{"text":"t"}]}"#;
    let (url, seen) = fake_server(vec![(200, ok.into())]);
    std::env::set_var("BEQH_TEST_GEN_TOKEN", "s3cret");
    let mut cfg = quick(url, 1);
    cfg.token_env = Some("BEQH_TEST_GEN_TOKEN".into());
    Generator::new(cfg).unwrap().complete("x").unwrap();
    assert_eq!(seen.lock().unwrap()[0].0, "Bearer s3cret");
}

#[test]
fn configuration_errors() {
    assert_eq!(Generator::new(quick(String::new(), 1)).err(), Some(GenerateError::Offline));
    let mut cfg = quick("http://127.0.0.1:9/".into(), 1);
    cfg.token_env = Some("BEQH_TEST_UNSET_TOKEN_VAR".into());
    assert!(matches!(Generator::new(cfg), Err(GenerateError::MissingToken(_))));
    let gen = Generator::new(quick("http://127.0.0.1:9/".into(), 1)).unwrap();
    assert_eq!(gen.generate(&[problem("p")], "no placeholder").err(), Some(GenerateError::BadTemplate));
}
