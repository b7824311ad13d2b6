use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

const SUB: &str = "Your membership renews automatically every month at $19.99 until you cancel it in your account settings.";
const PLAIN: &str = "We are a family business founded in a small town and we love our customers dearly.";
const HOME: &str = "Welcome to our store, where we sell running shoes, socks and accessories online with free shipping.";

fn serve_site() -> (String, thread::JoinHandle<()>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", server.server_addr().to_ip().unwrap());
    let mut pages = HashMap::new();
    pages.insert("/".to_string(), format!(r#"<html><body><p>{HOME}</p><a href="/terms">Terms of Service</a></body></html>"#));
    pages.insert("/terms".to_string(), format!("<html><body><p>{SUB}</p><p>{PLAIN}</p></body></html>"));
    let handle = thread::spawn(move || {
        // the server lives for the whole test binary; stop after a quiet period
        while let Ok(Some(req)) = server.recv_timeout(Duration::from_secs(20)) {
            let resp = match pages.get(req.url()) {
                Some(body) => tiny_http::Response::from_string(body.clone())
                    .with_header("Content-Type: text/html; charset=utf-8".parse::<tiny_http::Header>().unwrap()),
                None => tiny_http::Response::from_string("not found").with_status_code(404),
            };
            let _ = req.respond(resp);
        }
    });
    (addr, handle)
}

fn mock_table(dir: &Path) -> PathBuf {
    let table = json!({
        "defaults": {
            "website_cls": "shopping",
            "financial_template": "n",
            "unfavorable_taxonomy": "b",
            "topic_assignment": "NEW: Silent Renewal — memberships that renew without a reminder",
        },
        "replies": {
            "financial_template": { SUB: "Subscription/Product Terms" },
            "unfavorable_taxonomy": { SUB: "Immediate Automatic Subscription" },
        }
    });
    let path = dir.join("mock.json");
    std::fs::write(&path, table.to_string()).unwrap();
    path
}

struct Run {
    corpus: PathBuf,
    mock: PathBuf,
}

impl Run {
    fn new(dir: &Path) -> Self {
        Run { corpus: dir.join("corpus"), mock: mock_table(dir) }
    }

    fn cmd(&self, args: &[&str]) -> Command {
        let mut c = Command::new(env!("CARGO_BIN_EXE_termscope"));
        c.args(args)
            .arg("--corpus")
            .arg(&self.corpus)
            .env_remove("TERMSCOPE_CONFIG")
            .env("TERMSCOPE_MODEL_ENDPOINT", format!("mock:{}", self.mock.display()))
            .env("TERMSCOPE_MIN_DELAY_MS", "0")
            .env("TERMSCOPE_FETCH_TIMEOUT_SECS", "5")
            .env("TERMSCOPE_LOG", "warn");
        c
    }

    fn run(&self, args: &[&str]) -> Output {
        self.cmd(args).output().unwrap()
    }
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).map(|s| s.lines().count()).unwrap_or(0)
}

#[test]
fn empty_site_list_succeeds_with_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let r = Run::new(dir.path());
    let list = dir.path().join("sites.csv");
    std::fs::write(&list, "rank,domain\n").unwrap();
    let v = stdout_json(&r.run(&["run", "--input", list.to_str().unwrap()]));
    assert_eq!(v["total"]["queried"], 0);
    assert_eq!(v["total"]["term_count"], 0);
}

#[test]
fn end_to_end_run_resume_and_topics() {
    let dir = tempfile::tempdir().unwrap();
    let r = Run::new(dir.path());
    let (site, _server) = serve_site();
    // a port nobody listens on
    let dead = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}", l.local_addr().unwrap())
    };
    let list = dir.path().join("sites.csv");
    std::fs::write(&list, format!("1,{site}\n2,{dead}\n")).unwrap();

    let v = stdout_json(&r.run(&["run", "--input", list.to_str().unwrap()]));
    let total = &v["total"];
    assert_eq!(total["queried"], 2, "{v}");
    assert_eq!(total["shopping"], 1, "{v}");
    assert_eq!(total["english"], 1, "{v}");
    assert_eq!(total["with_tc"], 1, "{v}");
    assert_eq!(total["term_count"], 2, "{v}");
    assert_eq!(v["unfavorable_percent"], 100.0);
    assert!(r.corpus.join("stats.json").exists());

    let cache = r.corpus.join("llm_cache.jsonl");
    let cached = line_count(&cache);
    assert!(cached > 0);
    let again = stdout_json(&r.run(&["run", "--input", list.to_str().unwrap()]));
    assert_eq!(line_count(&cache), cached, "rerun must not query the model");
    for stage in again["stages"].as_array().unwrap() {
        // the unreachable site is retried by harvest; nothing else is redone
        if stage["stage"] != "harvest" {
            assert_eq!(stage["processed"], 0, "{stage}");
        }
    }

    // individual stages are no-ops on a finished corpus
    assert_eq!(stdout_json(&r.run(&["extract"]))["processed"], 0);
    let cls = stdout_json(&r.run(&["classify", "--stage", "financial"]));
    assert_eq!(cls["financial"]["queried"], 0);

    let m = stdout_json(&r.run(&["measure", "--out", dir.path().join("s.json").to_str().unwrap(), "--plots", dir.path().join("plots").to_str().unwrap()]));
    assert_eq!(m["websites_with_unfavorable"], 1);
    assert!(dir.path().join("plots/cdf_terms_per_site.csv").exists());

    let c = stdout_json(&r.run(&["cluster", "--min-pts", "1"]));
    assert_eq!(c["terms"], 1);
    assert_eq!(c["clusters"], 1);

    let out = dir.path().join("topics.json");
    let t = stdout_json(&r.run(&["topics", "--auto-accept", "--min-pts", "1", "--out", out.to_str().unwrap()]));
    assert!(t["topics"].as_array().unwrap().iter().any(|n| n == "Silent Renewal"), "{t}");
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(saved["changelog"].as_array().unwrap().iter().any(|e| e["actor"] == "auto-accept"));
}

#[test]
fn scripted_topic_review_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let r = Run::new(dir.path());
    let (site, _server) = serve_site();
    let list = dir.path().join("sites.csv");
    std::fs::write(&list, format!("{site}\n")).unwrap();
    stdout_json(&r.run(&["run", "--input", list.to_str().unwrap()]));
    let script = dir.path().join("answers.txt");
    std::fs::write(&script, "r\n").unwrap();
    let t = stdout_json(&r.run(&["topics", "--script", script.to_str().unwrap(), "--min-pts", "1"]));
    assert!(!t["topics"].as_array().unwrap().iter().any(|n| n == "Silent Renewal"), "{t}");
}

#[test]
fn topics_without_labels_is_a_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let r = Run::new(dir.path());
    let (site, _server) = serve_site();
    let list = dir.path().join("sites.csv");
    std::fs::write(&list, format!("{site}\n")).unwrap();
    for stage in [&["harvest", "--input", list.to_str().unwrap()][..], &["discover-tc"], &["extract"]] {
        stdout_json(&r.run(stage));
    }
    let out = r.run(&["topics", "--auto-accept"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("classify"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let r = Run::new(dir.path());
    let list = dir.path().join("sites.csv");
    std::fs::write(&list, "").unwrap();

    let out = r.cmd(&["run", "--input", list.to_str().unwrap()]).env_remove("TERMSCOPE_MODEL_ENDPOINT").output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "eps = \"wide\"\n").unwrap();
    let out = r.run(&["measure", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = r.cmd(&["cluster"]).env("TERMSCOPE_MIN_PTS", "zero").output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = r.run(&["run", "--input", dir.path().join("missing.csv").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = r.run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_sets_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("from-config");
    let cfg = dir.path().join("termscope.toml");
    std::fs::write(&cfg, format!("corpus = {:?}\n", corpus.to_str().unwrap())).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_termscope"))
        .args(["measure", "--out", dir.path().join("s.json").to_str().unwrap(), "--config", cfg.to_str().unwrap()])
        .env_remove("TERMSCOPE_CORPUS")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(corpus.join("pages").is_dir());
}

#[test]
fn corrupt_corpus_is_a_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let r = Run::new(dir.path());
    std::fs::create_dir_all(&r.corpus).unwrap();
    std::fs::write(r.corpus.join("websites.jsonl"), "{not json\n").unwrap();
    let out = r.run(&["measure", "--out", dir.path().join("s.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_split_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let r = Run::new(dir.path());
    let pred = dir.path().join("pred.jsonl");
    let gold = dir.path().join("gold.jsonl");
    std::fs::write(&pred, "{\"term_id\":\"a\",\"label\":\"m\"}\n{\"term_id\":\"b\",\"label\":\"b\"}\n{\"term_id\":\"c\",\"label\":\"m\"}\n").unwrap();
    std::fs::write(&gold, "{\"term_id\":\"a\",\"label\":\"m\"}\n{\"term_id\":\"b\",\"label\":\"b\"}\n{\"term_id\":\"c\",\"label\":\"b\"}\n").unwrap();
    let m = stdout_json(&r.run(&["eval", "--pred", pred.to_str().unwrap(), "--gold", gold.to_str().unwrap()]));
    assert_eq!((m["tp"].as_u64(), m["fp"].as_u64(), m["tn"].as_u64(), m["fn"].as_u64()), (Some(1), Some(1), Some(1), Some(0)));
    assert_eq!(m["precision"], 0.5);

    let labeled = dir.path().join("labeled.jsonl");
    let mut f = std::fs::File::create(&labeled).unwrap();
    for i in 0..10 {
        let label = if i % 2 == 0 { "benign" } else { "Restocking Fee" };
        writeln!(f, "{}", json!({"term_id": format!("t{i}"), "text": format!("term number {i}"), "label": label})).unwrap();
    }
    drop(f);
    let split = dir.path().join("split.json");
    let s = stdout_json(&r.run(&["split", "--input", labeled.to_str().unwrap(), "--out", split.to_str().unwrap(), "--seed", "7"]));
    let ft: u64 = s["fine_tuning"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(ft, 5);

    let train = dir.path().join("train.jsonl");
    let e = stdout_json(&r.run(&["export-finetune", "--split", split.to_str().unwrap(), "--out", train.to_str().unwrap()]));
    assert_eq!(e["records"], 5);
    for line in std::fs::read_to_string(&train).unwrap().lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        assert!(rec["expected"] == "b" || rec["expected"] == "Restocking Fee");
    }

    // same seed, same split
    let split2 = dir.path().join("split2.json");
    stdout_json(&r.run(&["split", "--input", labeled.to_str().unwrap(), "--out", split2.to_str().unwrap(), "--seed", "7"]));
    assert_eq!(std::fs::read(&split).unwrap(), std::fs::read(&split2).unwrap());
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut buf = String::new();
    s.read_to_string(&mut buf).ok()?;
    Some(buf)
}

#[test]
fn serve_answers_health_and_taxonomy() {
    let dir = tempfile::tempdir().unwrap();
    let r = Run::new(dir.path());
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = r
        .cmd(&["serve", "--port", &port.to_string()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let health = loop {
        if let Some(resp) = http_get(port, "/v1/health") {
            break resp;
        }
        assert!(Instant::now() < deadline, "server did not start");
        thread::sleep(Duration::from_millis(100));
    };
    let taxonomy = http_get(port, "/v1/taxonomy").unwrap_or_default();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.contains(r#"{"status":"ok"}"#));
    assert!(taxonomy.contains("Restocking Fee"));
}
