use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn quick_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/quick.toml")
}

fn psfedgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psfedgan"))
        .args(args)
        .env_remove("PSFG_SEED")
        .output()
        .unwrap()
}

fn run_quick(out: &Path, extra: &[&str]) -> Output {
    let cfg = quick_config();
    let mut args = vec!["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    psfedgan(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn missing_config_is_a_config_error() {
    let o = psfedgan(&["run", "/nonexistent/run.toml"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn parse_error_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "master_seed = 1\nrounds = \n").unwrap();
    let o = psfedgan(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    fs::write(&cfg, "master_seed = 1\nrounds = 2\nflavour = 3\n").unwrap();
    assert_eq!(code(&psfedgan(&["run", cfg.to_str().unwrap()])), 2);
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = run_quick(&out, &["--dry-run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("steps per round"));
    assert!(!out.exists());
}

#[test]
fn repeated_and_threaded_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(code(&run_quick(&a, &[])), 0);
    assert_eq!(code(&run_quick(&b, &[])), 0);
    assert_eq!(code(&run_quick(&c, &["--threads", "3"])), 0);
    for file in ["metrics.csv", "attacks.csv", "cost.csv", "replay.log"] {
        let first = fs::read(a.join(file)).unwrap();
        assert_eq!(first, fs::read(b.join(file)).unwrap(), "{file}");
        assert_eq!(first, fs::read(c.join(file)).unwrap(), "{file} with 3 threads");
    }
}

#[test]
fn seed_override_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config();
    let run = |out: &Path, seed: &str| {
        Command::new(env!("CARGO_BIN_EXE_psfedgan"))
            .args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .env("PSFG_SEED", seed)
            .output()
            .unwrap()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&run(&a, "0x2a")), 0);
    assert_eq!(code(&run(&b, "42")), 0);
    assert_eq!(fs::read(a.join("replay.log")).unwrap(), fs::read(b.join("replay.log")).unwrap());
    let resolved = fs::read_to_string(a.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("master_seed = 42"));
    assert_eq!(code(&run(&dir.path().join("c"), "forty-two")), 2);
}

/// Offsets of every record in a replay log: tag 0x01, then a little-endian
/// u32 length, then a message starting with "PSFG".
fn record_spans(log: &[u8]) -> Vec<(usize, usize)> {
    let mut first = None;
    for i in 8..log.len() - 9 {
        if log[i] == 0x01 && &log[i + 5..i + 9] == b"PSFG" {
            first = Some(i);
            break;
        }
    }
    let mut spans = Vec::new();
    let mut at = first.expect("log holds records");
    while log[at] == 0x01 {
        let len = u32::from_le_bytes(log[at + 1..at + 5].try_into().unwrap()) as usize;
        spans.push((at, at + 5 + len));
        at += 5 + len;
    }
    assert_eq!(log[at], 0xFF, "records end at the trailer");
    spans
}

fn reseal(body: &[u8]) -> Vec<u8> {
    let mut v = body.to_vec();
    v.extend_from_slice(&Sha256::digest(body));
    v
}

#[test]
fn replay_accepts_the_log_and_rejects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(code(&run_quick(&out, &[])), 0);
    let log_path = out.join("replay.log");
    let ok = psfedgan(&["replay", log_path.to_str().unwrap()]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("1500 records replayed"));

    let log = fs::read(&log_path).unwrap();
    let spans = record_spans(&log);
    assert_eq!(spans.len(), 1500);
    let bad = dir.path().join("bad.log");
    let check = |bytes: &[u8], what: &str| {
        fs::write(&bad, bytes).unwrap();
        assert_eq!(code(&psfedgan(&["replay", bad.to_str().unwrap()])), 4, "{what}");
    };

    for pos in [0, 40, spans[0].0 + 30, spans[700].1 - 1, log.len() - 40, log.len() - 1] {
        let mut b = log.clone();
        b[pos] ^= 0x80;
        check(&b, &format!("flip at {pos}"));
    }

    let (s, e) = spans[700];
    let dropped = [&log[..s], &log[e..]].concat();
    check(&dropped, "dropped record");
    // Even with a recomputed checksum the missing step is found.
    check(&reseal(&dropped[..dropped.len() - 32]), "dropped record, resealed");

    assert_eq!(code(&psfedgan(&["replay", "/nonexistent/replay.log"])), 2);
}
