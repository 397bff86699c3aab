use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

fn svsp() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_svsp"));
    cmd.env_remove("SVSP_LOG").env("SVSP_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    svsp().args(args).output().unwrap()
}

fn kv(stdout: &[u8]) -> BTreeMap<String, String> {
    String::from_utf8_lossy(stdout)
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

struct Served {
    child: Child,
    addr: String,
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(root: &Path, extra: &[&str]) -> Served {
    let mut child = svsp()
        .env("SVSP_LOG", "info")
        .args(["serve", "--bind", "127.0.0.1:0", "--root"])
        .arg(root)
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening=")
        .expect("listening line")
        .to_string();
    Served { child, addr }
}

fn publish(root: &Path, name: &str, len: usize) -> Vec<u8> {
    let bytes: Vec<u8> = (0..len).map(|i| (i * 7 % 256) as u8).collect();
    fs::write(root.join(name), &bytes).unwrap();
    bytes
}

#[test]
fn keygen_is_deterministic_and_consistent() {
    let a = run(&["keygen", "--bits", "16", "--seed", "1"]);
    let b = run(&["keygen", "--bits", "16", "--seed", "1"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    for bits in ["16", "40", "60"] {
        let out = run(&["keygen", "--bits", bits, "--seed", "9"]);
        let nums: Vec<u128> = String::from_utf8(out.stdout)
            .unwrap()
            .lines()
            .map(|l| l.parse().unwrap())
            .collect();
        let [p, q, n, e, d] = nums[..] else {
            panic!("expected five lines")
        };
        assert_eq!(p * q, n);
        assert_eq!(d * e % ((p - 1) * (q - 1)), 1);
    }
}

#[test]
fn keygen_below_minimum() {
    let out = run(&["keygen", "--bits", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("minimum"));
}

#[test]
fn serve_missing_root() {
    let out = run(&[
        "serve",
        "--root",
        "/nonexistent/svsp",
        "--bind",
        "127.0.0.1:0",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/svsp"));
}

#[cfg(unix)]
#[test]
fn serve_exits_cleanly_on_interrupt() {
    let dir = tempfile::tempdir().unwrap();
    let mut served = serve(dir.path(), &[]);
    let pid = served.child.id().to_string();
    assert!(Command::new("kill")
        .args(["-INT", &pid])
        .status()
        .unwrap()
        .success());
    let deadline = Instant::now() + Duration::from_secs(5);
    let status = loop {
        if let Some(status) = served.child.try_wait().unwrap() {
            break status;
        }
        assert!(Instant::now() < deadline, "server ignored SIGINT");
        std::thread::sleep(Duration::from_millis(20));
    };
    assert_eq!(status.code(), Some(0));
    let mut logs = String::new();
    std::io::Read::read_to_string(served.child.stderr.as_mut().unwrap(), &mut logs).unwrap();
    assert!(logs.contains("listening"), "{logs}");
}

#[test]
fn fetch_done_and_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let data = publish(dir.path(), "clip.bin", 200_000);
    let served = serve(dir.path(), &[]);
    let out_dir = tempfile::tempdir().unwrap();
    let dest = out_dir.path().join("copy.bin");
    let dest_s = dest.to_str().unwrap();

    let out = run(&[
        "fetch",
        "--server",
        &served.addr,
        "--name",
        "clip.bin",
        "--out",
        dest_s,
        "--seed",
        "3",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = kv(&out.stdout);
    assert_eq!(report["outcome"], "done");
    assert_eq!(report["tokens_sent"], "7");
    assert_eq!(fs::read(&dest).unwrap(), data);

    let out = run(&[
        "fetch",
        "--server",
        &served.addr,
        "--name",
        "missing",
        "--out",
        dest_s,
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(kv(&out.stdout)["outcome"], "aborted(not_found)");
    assert!(!dest.exists());
}

#[test]
fn attacks_are_contained() {
    let dir = tempfile::tempdir().unwrap();
    publish(dir.path(), "clip.bin", 300_000);
    let served = serve(dir.path(), &["--token-timeout-ms", "100"]);
    for (mode, reason) in [("no-token", "token_timeout"), ("replay", "token_invalid")] {
        let out = run(&[
            "attack",
            "--mode",
            mode,
            "--server",
            &served.addr,
            "--name",
            "clip.bin",
            "--seed",
            "5",
        ]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{mode}: {}",
            String::from_utf8_lossy(&out.stdout)
        );
        let report = kv(&out.stdout);
        assert_eq!(report["contained"], "true");
        assert_eq!(report["outcome"], format!("halted({reason})"));
        let leaked: u64 = report["bytes_received"].parse().unwrap();
        assert!(leaked <= 32 * 1024);
    }
}

#[test]
fn simulate_traces_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let traces: Vec<_> = (0..2)
        .map(|i| {
            let path = dir.path().join(format!("t{i}.jsonl"));
            let out = svsp()
                .args([
                    "simulate", "--seed", "42", "--loss", "0.1", "--delay", "1:20", "--size",
                    "100000", "--trace",
                ])
                .arg(&path)
                .output()
                .unwrap();
            assert_eq!(out.status.code(), Some(0));
            fs::read(path).unwrap()
        })
        .collect();
    assert_eq!(traces[0], traces[1]);
    let first = String::from_utf8_lossy(&traces[0]);
    let line = first.lines().next().unwrap();
    for field in [
        "virtual_time_ms",
        "datagram_id",
        "direction",
        "fate",
        "datagram",
    ] {
        assert!(line.contains(field), "{line}");
    }
}

#[test]
fn simulate_lossless_and_attacker() {
    let out = run(&["simulate", "--seed", "1", "--loss", "0", "--size", "70000"]);
    let report = kv(&out.stdout);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report["chunks_retransmitted"], "0");
    assert_eq!(report["sha256_match"], "true");

    let out = run(&[
        "simulate",
        "--seed",
        "1",
        "--attacker",
        "no-token",
        "--size",
        "1048576",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report = kv(&out.stdout);
    let leaked: u64 = report["leaked_bytes"].parse().unwrap();
    let window: u64 = report["window_bytes"].parse().unwrap();
    assert!(leaked <= window && window == 32 * 1024);
    assert_eq!(report["outcome"], "halted(token_timeout)");
}

#[test]
fn settings_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("svsp.conf");
    fs::write(&conf, "window_size = 4\nchunk_size = 100\n").unwrap();
    let conf_s = conf.to_str().unwrap();
    let window_bytes =
        |cmd: &mut Command| kv(&cmd.output().unwrap().stdout)["window_bytes"].clone();

    let base = ["--config", conf_s, "simulate", "--size", "1000"];
    assert_eq!(window_bytes(svsp().args(base)), "400");
    assert_eq!(
        window_bytes(svsp().args(base).env("SVSP_WINDOW_SIZE", "2")),
        "200"
    );
    assert_eq!(
        window_bytes(
            svsp()
                .args(base)
                .args(["--window", "3"])
                .env("SVSP_WINDOW_SIZE", "2")
        ),
        "300"
    );

    fs::write(&conf, "window_sise = 4\n").unwrap();
    let out = run(&base);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("window_sise"));

    let out = svsp()
        .args(["simulate", "--size", "10"])
        .env("SVSP_NOPE", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_conditions_rejected() {
    let out = run(&["simulate", "--loss", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["simulate", "--delay", "9:3"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["simulate", "--window", "0"]);
    assert_eq!(out.status.code(), Some(2));
}
