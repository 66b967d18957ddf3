use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_vbsurv");

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().unwrap()
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = run(args, dir);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// simulate -> train (linear, short) -> evaluate, all inside `dir`.
fn pipeline(dir: &Path) -> PathBuf {
    ok(&["simulate", "--n", "600", "--out", "d.csv", "--schema-out", "s.txt", "--seed", "42"], dir);
    ok(
        &[
            "train", "--data", "d.csv", "--schema", "s.txt", "--out-model", "m.json", "--max-iter", "4000", "--hidden", "",
            "--lr", "0.03", "--seed", "1",
        ],
        dir,
    );
    ok(
        &[
            "evaluate", "--model", "m.json", "--data", "d.csv", "--horizon", "150", "--out-report", "r.json", "--histogram-out",
            "h.csv", "--seed", "3",
        ],
        dir,
    );
    dir.join("r.json")
}

#[test]
fn help_exits_zero_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    for sub in [None, Some("simulate"), Some("train"), Some("lr-find"), Some("predict"), Some("evaluate"), Some("serve")] {
        let mut args: Vec<&str> = sub.into_iter().collect();
        args.push("--help");
        let out = run(&args, dir.path());
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
}

#[test]
fn exit_codes_follow_the_taxonomy() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(&["train", "--schema", "s.txt", "--out-model", "m.json"], d).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"], d).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--n", "lots", "--out", "x.csv"], d).status.code(), Some(1));

    ok(&["simulate", "--n", "50", "--out", "d.csv", "--schema-out", "s.txt"], d);
    let missing = run(&["train", "--data", "nope.csv", "--schema", "s.txt", "--out-model", "m.json"], d);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    std::fs::write(d.join("bad.txt"), "x = categorical(0)\n").unwrap();
    assert_eq!(run(&["train", "--data", "d.csv", "--schema", "bad.txt", "--out-model", "m.json"], d).status.code(), Some(2));

    let bad_lr = run(&["train", "--data", "d.csv", "--schema", "s.txt", "--out-model", "m.json", "--lr", "-1"], d);
    assert_eq!(bad_lr.status.code(), Some(1));
    assert_eq!(run(&["lr-find", "--data", "d.csv", "--schema", "s.txt", "--grid", "1e-3", "--out", "l.json"], d).status.code(), Some(1));
    assert_eq!(run(&["evaluate", "--model", "nope.json", "--data", "d.csv", "--out-report", "r.json"], d).status.code(), Some(2));
}

#[test]
fn simulate_writes_schema_truth_and_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--n", "300", "--out", "d.csv", "--schema-out", "s.txt", "--truth-out", "t.json"], d);
    let csv = std::fs::read_to_string(d.join("d.csv")).unwrap();
    assert_eq!(csv.lines().count(), 301);
    assert!(csv.starts_with("x1,x2,x3,x4,region,sector,duration,censored"));
    let schema = std::fs::read_to_string(d.join("s.txt")).unwrap();
    assert!(schema.contains("sector = categorical(12)"));
    let truth: Value = serde_json::from_slice(&std::fs::read(d.join("t.json")).unwrap()).unwrap();
    assert!(truth.is_object());
}

#[test]
fn end_to_end_beats_majority_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = pipeline(a.path());
    let rb = pipeline(b.path());

    for f in ["d.csv", "m.json", "r.json", "h.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }

    let report: Value = serde_json::from_slice(&std::fs::read(&ra).unwrap()).unwrap();
    let acc = report["classification"]["accuracy"].as_f64().unwrap();
    let base = report["classification"]["majority_baseline"].as_f64().unwrap();
    assert!(acc > base + 0.1, "accuracy {acc} vs majority {base}");
    assert!(report["auc"].as_f64().unwrap() > 0.7);
    assert!(rb.exists());
}

#[test]
fn predict_writes_monotone_curves() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d);
    let input = "x1,x2,x3,x4,region,sector\n0,0,0,0,region_1,sector_1\n1.5,-1,0.5,0,region_5,unheard_of\n";
    std::fs::write(d.join("in.csv"), input).unwrap();
    let out = ok(
        &["predict", "--model", "m.json", "--input", "in.csv", "--out-curves", "c.csv", "--n-mcmc", "100", "--realisations", "20"],
        d,
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("sector"));
    let text = std::fs::read_to_string(d.join("c.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("row,t,S_hat,lo,hi"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 2 * 365);
    for curve in rows.chunks(365) {
        assert!(curve.windows(2).all(|w| w[1][2] <= w[0][2]));
        assert!(curve.iter().all(|r| r[3] <= r[2] && r[2] <= r[4]));
    }
}

#[test]
fn lr_find_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--n", "200", "--out", "d.csv", "--schema-out", "s.txt"], d);
    ok(
        &["lr-find", "--data", "d.csv", "--schema", "s.txt", "--grid", "1e-3:1e-1:3", "--iters", "100", "--hidden", "", "--out", "l.json"],
        d,
    );
    let report: Value = serde_json::from_slice(&std::fs::read(d.join("l.json")).unwrap()).unwrap();
    assert_eq!(report["entries"].as_array().unwrap().len(), 3);
    let best = report["best"].as_f64().unwrap();
    assert!((report["recommended"].as_f64().unwrap() - best / 10.0).abs() < 1e-12);
}

struct Server {
    child: Child,
    addr: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn start_server(dir: &Path, extra: &[&str]) -> Server {
    let mut child = Command::new(BIN)
        .args(["serve", "--port", "0"])
        .args(extra)
        .current_dir(dir)
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap_or_else(|| panic!("{line}")).to_string();
    Server { child, addr }
}

fn request(addr: &str, method: &str, path: &str, body: Option<&Value>) -> (u16, String, Value) {
    let mut stream = TcpStream::connect(addr).unwrap();
    let payload = body.map(|b| b.to_string()).unwrap_or_default();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nOrigin: http://example.test\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )
    .unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).unwrap();
    let (head, body) = raw.split_once("\r\n\r\n").unwrap();
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = if head.to_ascii_lowercase().contains("transfer-encoding: chunked") {
        dechunk(body)
    } else {
        body.to_string()
    };
    let value = serde_json::from_str(&body).unwrap_or(Value::Null);
    (status, head.to_string(), value)
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    loop {
        let (size, rest) = s.split_once("\r\n").unwrap();
        let n = usize::from_str_radix(size.trim(), 16).unwrap();
        if n == 0 {
            return out;
        }
        out.push_str(&rest[..n]);
        s = &rest[n + 2..];
    }
}

#[test]
fn serve_answers_every_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d);
    let srv = start_server(d, &["--model", "m.json"]);

    let (status, head, health) = request(&srv.addr, "GET", "/health", None);
    assert_eq!(status, 200);
    assert!(head.to_ascii_lowercase().contains("access-control-allow-origin"));
    assert!(health["k"].as_u64().unwrap() > 0);

    let (status, _, schema) = request(&srv.addr, "GET", "/schema", None);
    assert_eq!(status, 200);
    assert_eq!(schema["covariates"].as_array().unwrap().len(), 6);

    let scenario = |x1: f64| {
        json!({
            "covariates": {"x1": x1, "x2": 0.0, "x3": 0.0, "x4": 0.0, "region": "region_2", "sector": "sector_3"},
            "n_mcmc": 100, "realisations": 20,
        })
    };
    let (status, _, curve) = request(&srv.addr, "POST", "/predict", Some(&scenario(0.0)));
    assert_eq!(status, 200, "{curve}");
    assert_eq!(curve["S_hat"].as_array().unwrap().len(), 365);

    // one covariate edited: the curve moves
    let (_, _, edited) = request(&srv.addr, "POST", "/predict", Some(&scenario(2.0)));
    assert_ne!(curve["s_at_horizon"], edited["s_at_horizon"]);

    let batch = json!([scenario(0.5), scenario(0.5), scenario(-1.0)]);
    let (status, _, curves) = request(&srv.addr, "POST", "/predict-batch", Some(&batch));
    assert_eq!(status, 200);
    let delta = curves[0]["s_at_horizon"].as_f64().unwrap() - curves[1]["s_at_horizon"].as_f64().unwrap();
    assert_eq!(delta, 0.0);

    let (status, _, err) = request(&srv.addr, "POST", "/predict", Some(&json!({"covariates": {}})));
    assert_eq!(status, 400);
    assert!(err["fields"].is_array());
    assert_eq!(request(&srv.addr, "GET", "/elsewhere", None).0, 404);
}

#[test]
fn serve_without_model_is_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start_server(dir.path(), &[]);
    assert_eq!(request(&srv.addr, "GET", "/health", None).0, 200);
    assert_eq!(request(&srv.addr, "GET", "/schema", None).0, 503);
}
