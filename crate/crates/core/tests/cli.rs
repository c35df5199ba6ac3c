//! The `workpod` binary: exit codes, serve lifecycle and metrics errors.

use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

const TOKEN: &str = "cli-token";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_workpod"));
    c.env_remove("WORKPOD_LLM_KEY").env_remove("WORKPOD_TOKEN").env_remove("WORKPOD_ADDR").env("RUST_LOG", "warn");
    c
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("scenarios/{name}.jsonl")).display().to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn free_addr() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

struct Serving {
    child: Child,
    addr: String,
}

impl Serving {
    fn start(data: &Path) -> Serving {
        let addr = free_addr();
        let child = bin()
            .args(["serve", "--addr", &addr, "--data-dir"])
            .arg(data)
            .env("WORKPOD_TOKEN", TOKEN)
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let s = Serving { child, addr };
        let deadline = Instant::now() + Duration::from_secs(10);
        while std::net::TcpStream::connect(&s.addr).is_err() {
            assert!(Instant::now() < deadline, "service did not start");
            std::thread::sleep(Duration::from_millis(50));
        }
        s
    }

    fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    fn terminate(mut self) -> std::process::ExitStatus {
        let pid = self.child.id().to_string();
        assert!(Command::new("kill").args(["-TERM", &pid]).status().unwrap().success());
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            if let Some(status) = self.child.try_wait().unwrap() {
                return status;
            }
            assert!(Instant::now() < deadline, "service ignored SIGTERM");
            std::thread::sleep(Duration::from_millis(50));
        }
    }
}

impl Drop for Serving {
    fn drop(&mut self) {
        let _ = self.child.kill();
    }
}

#[tokio::test]
async fn serve_health_then_sigterm_seals_open_session() {
    let data = tempfile::tempdir().unwrap();
    let s = Serving::start(data.path());
    let http = reqwest::Client::new();
    let health: serde_json::Value = http.get(s.url("/health")).send().await.unwrap().json().await.unwrap();
    assert_eq!(health["status"], "ok");

    let res = http
        .post(s.url("/sessions"))
        .bearer_auth(TOKEN)
        .json(&serde_json::json!({ "participant": "p05", "session_index": 2 }))
        .send()
        .await
        .unwrap();
    assert_eq!(res.status(), 201);
    let res = http
        .post(s.url("/sessions/p05-s2/events"))
        .bearer_auth(TOKEN)
        .json(&serde_json::json!({ "channel": "utterance", "text": "This task is stressing me out." }))
        .send()
        .await
        .unwrap();
    assert_eq!(res.status(), 200);

    let status = s.terminate();
    assert!(status.success(), "{status:?}");
    let log = std::fs::read_to_string(data.path().join("p05-s2.log.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["body"]["kind"], "footer");
    assert_eq!(last["body"]["records"], log.lines().count());
    assert!(data.path().join("p05.memory.jsonl").exists());
}

#[test]
fn serve_startup_errors() {
    let out = bin().args(["serve", "--backend", "llm", "--addr", &free_addr()]).env("WORKPOD_TOKEN", TOKEN).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("WORKPOD_LLM_KEY"), "{}", stderr(&out));

    let out = bin().args(["serve", "--addr", &free_addr()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "token is required");

    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let data = tempfile::tempdir().unwrap();
    let out = bin().args(["serve", "--addr", &addr, "--data-dir"]).arg(data.path()).env("WORKPOD_TOKEN", TOKEN).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cannot bind"), "{}", stderr(&out));
}

#[test]
fn replay_exit_code_follows_thresholds() {
    let out = run(&["replay", "--scenario", &scenario("s2-focus"), "--actuator-delay-ms", "100"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS gaze_off_reduction_pct"));

    let out = run(&["replay", "--scenario", &scenario("s2-focus"), "--profile", "non_responsive"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL gaze_off_reduction_pct"));
}

#[test]
fn replay_input_errors() {
    let out = run(&["replay", "--scenario", "/no/such/file.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("PARSE_ERROR"));
    let out = run(&["replay", "--scenario", &scenario("s4-stress"), "--profile", "stoic"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("UNKNOWN_PROFILE"));
    let out = run(&["replay", "--scenario", &scenario("s4-stress"), "--sessions", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["replay", "--scenario", &scenario("s4-stress"), "--backend", "llm"]);
    assert_eq!(out.status.code(), Some(2), "llm without key or fixtures");
}

#[test]
fn replay_same_seed_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        let out = bin().args(["replay", "--scenario", &scenario("s4-stress"), "--seed", "77", "--out"]).arg(dir).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    for name in ["p01-s1.log.jsonl", "p01-s4.log.jsonl", "p01.memory.jsonl", "report.json"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn replay_with_llm_fixtures_stays_offline() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/llm");
    let out = bin()
        .args(["replay", "--scenario", &scenario("s3-distraction"), "--backend", "llm", "--format", "json", "--llm-fixtures"])
        .arg(&fixtures)
        .env("WORKPOD_LLM_KEY", "unused")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let backends: Vec<&str> = report["plans"].as_array().unwrap().iter().map(|p| p["backend"].as_str().unwrap()).collect();
    assert!(backends.contains(&"llm"), "{backends:?}");
    assert!(!backends.contains(&"oracle"), "no fallback when fixtures cover every request: {backends:?}");
}

#[test]
fn metrics_usage_and_input_errors() {
    let out = run(&["metrics"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));

    let dir = tempfile::tempdir().unwrap();
    for (p, scenario_name) in [("p01", "s4-stress"), ("p02", "s1-drowsiness")] {
        let out = bin()
            .args(["replay", "--scenario", &scenario(scenario_name), "--sessions", "1", "--participant", p, "--out"])
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(out.status.code().is_some_and(|c| c <= 1), "{}", stderr(&out));
    }
    let out = bin().arg("metrics").arg(dir.path().join("p01-s1.log.jsonl")).arg(dir.path().join("p02-s1.log.jsonl")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("PARTICIPANT_MISMATCH"), "{}", stderr(&out));

    let bad = dir.path().join("bad.log.jsonl");
    let good = std::fs::read_to_string(dir.path().join("p01-s1.log.jsonl")).unwrap();
    let mut lines: Vec<&str> = good.lines().collect();
    lines[2] = "{\"seq\":2,\"stream\":\"cue\",\"body\":";
    std::fs::write(&bad, lines.join("\n")).unwrap();
    let out = bin().arg("metrics").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("bad.log.jsonl") && err.contains("line 3"), "{err}");

    let unsealed = dir.path().join("open.log.jsonl");
    std::fs::write(&unsealed, good.lines().take(good.lines().count() - 1).collect::<Vec<_>>().join("\n") + "\n").unwrap();
    let out = bin().arg("metrics").arg(&unsealed).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("NOT_SEALED"));

    for format in ["table", "csv", "json"] {
        let out = bin().arg("metrics").arg(dir.path().join("p01-s1.log.jsonl")).args(["--format", format]).output().unwrap();
        assert!(out.status.success(), "{format}");
    }
}

#[test]
fn config_file_overrides_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("workpod.toml");
    std::fs::write(&cfg, "[detector]\ngaze_off_threshold_s = 10\n[mediation.presets.warm_calm]\nbrightness_pct = 30\ncolor_temp_k = 2500\nramp_s = 60\n").unwrap();
    let out = bin().args(["replay", "--scenario", &scenario("s4-stress"), "--sessions", "1", "--format", "json", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["plans"][0]["ramp_complete_ms"], 60_000);

    std::fs::write(&cfg, "[detector]\ngaze_treshold = 3\n").unwrap();
    let out = bin().args(["replay", "--scenario", &scenario("s4-stress"), "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("CONFIG_ERROR"));
}
