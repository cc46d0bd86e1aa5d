//! The `dualhead` binary end to end on the smoke profile.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::thread;

use serde_json::{json, Value};

const SMOKE: &str = include_str!("../configs/smoke.toml");

fn dualhead(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualhead"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env("RUST_LOG", "info")
        .env_remove("DUALHEAD_API_TOKEN")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\n{}", o.status, stderr(&o));
    o
}

fn contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn find<'a>(files: &'a BTreeMap<String, Vec<u8>>, prefix: &str, ext: &str) -> &'a [u8] {
    let hits: Vec<_> = files
        .iter()
        .filter(|(k, _)| {
            k.strip_prefix(prefix)
                .and_then(|r| r.strip_suffix(ext))
                .is_some_and(|h| h.len() == 12 && h.bytes().all(|b| b.is_ascii_hexdigit()))
        })
        .collect();
    assert_eq!(hits.len(), 1, "{prefix}*{ext} in {:?}", files.keys().collect::<Vec<_>>());
    hits[0].1
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

#[test]
fn smoke_pipeline_is_reproducible_and_resumable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = ok(dualhead(a.path(), &["all"]));
    ok(dualhead(b.path(), &["all"]));
    let (fa, fb) = (contents(a.path()), contents(b.path()));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{name} differs between identical runs");
    }

    for (prefix, ext) in [
        ("train-", ".jsonl"),
        ("dev-", ".jsonl"),
        ("test-", ".jsonl"),
        ("corpus-", ".jsonl"),
        ("tokenizer-", ".json"),
        ("pretrain-", ".ckpt"),
        ("augmented-", ".jsonl"),
        ("datagen-report-", ".json"),
        ("epochs-", ".json"),
        ("train-log-", ".jsonl"),
        ("epoch001-", ".ckpt"),
        ("epoch003-", ".ckpt"),
        ("selection-", ".json"),
        ("predictions-test-", ".jsonl"),
        ("eval-report-", ".json"),
        ("judge-report-", ".json"),
        ("baseline-label-pred-", ".json"),
        ("baseline-verb-prob-", ".json"),
        ("baseline-self-consistency-", ".json"),
        ("report-", ".md"),
    ] {
        find(&fa, prefix, ext);
    }
    let report = String::from_utf8(find(&fa, "report-", ".md").to_vec()).unwrap();
    assert!(String::from_utf8_lossy(&first.stdout).contains(&report));
    for row in ["Dual-head (classification head)", "Self-consistency", "AUROC-Alignment", "R-L Kappa"] {
        assert!(report.contains(row), "{row} missing from\n{report}");
    }
    let sel = json_of(find(&fa, "selection-", ".json"));
    let epoch = sel["epoch"].as_u64().unwrap();
    assert!((1..=3).contains(&epoch));
    assert_eq!(sel["scores"].as_array().unwrap().len(), 3);

    // a rerun skips every stage
    let again = ok(dualhead(a.path(), &["all"]));
    let log = stderr(&again);
    assert!(!log.contains("running "), "{log}");
    for stage in ["synth-gen", "pretrain", "build-data", "train", "select", "eval", "judge", "report"] {
        assert!(log.contains(&format!("{stage} is up to date")), "{stage}: {log}");
    }
    assert_eq!(contents(a.path()), fa);

    // a damaged output reruns its stage only
    let eval_json = fa.keys().find(|k| k.starts_with("eval-report-") && k.ends_with(".json")).unwrap();
    fs::write(a.path().join(eval_json), "{}").unwrap();
    let log = stderr(&ok(dualhead(a.path(), &["eval"])));
    assert!(log.contains("running eval"), "{log}");
    assert_eq!(fs::read(a.path().join(eval_json)).unwrap(), fa[eval_json]);
    let log = stderr(&ok(dualhead(a.path(), &["select"])));
    assert!(log.contains("select is up to date"), "{log}");

    // --force reruns, another seed changes hashes
    let log = stderr(&ok(dualhead(a.path(), &["select", "--force"])));
    assert!(log.contains("running select"), "{log}");
    ok(dualhead(b.path(), &["synth-gen", "--seed", "1"]));
    assert!(contents(b.path()).len() > fb.len());
}

#[test]
fn missing_upstream_artifact_names_the_command_to_run() {
    let d = tempfile::tempdir().unwrap();
    for (cmd, needs) in [("pretrain", "synth-gen"), ("train", "pretrain"), ("eval", "select"), ("report", "eval")] {
        let o = dualhead(d.path(), &[cmd]);
        assert!(!o.status.success());
        let e = stderr(&o);
        assert!(e.contains(&format!("run `dualhead {needs}`")), "{cmd}: {e}");
    }
    ok(dualhead(d.path(), &["synth-gen"]));
    ok(dualhead(d.path(), &["pretrain"]));
    let e = stderr(&dualhead(d.path(), &["train"]));
    assert!(e.contains("run `dualhead build-data`"), "{e}");
}

#[test]
fn unknown_flag_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let o = dualhead(d.path(), &["eval", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--bogus"));
    let o = dualhead(d.path(), &["baseline", "--method", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn schema_violations_name_the_key() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.toml");
    fs::write(&cfg, SMOKE.replace("d_model = 32", "d_modle = 32")).unwrap();
    let o = dualhead(d.path(), &["--config", cfg.to_str().unwrap(), "synth-gen"]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(e.contains("schema violation") && e.contains("d_modle"), "{e}");

    let o = dualhead(d.path(), &["--config", "no-such-profile", "show"]);
    assert!(stderr(&o).contains("built-in profiles"));

    let o = dualhead(d.path(), &["--teacher", "remote", "build-data"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("[endpoint]"));
}

#[test]
fn single_epoch_run_selects_it() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("one.toml");
    let text = SMOKE.replacen("epochs = 3", "epochs = 1", 1);
    assert_ne!(text, SMOKE);
    fs::write(&cfg, text).unwrap();
    let c = cfg.to_str().unwrap();
    for cmd in ["synth-gen", "pretrain", "build-data", "train", "select"] {
        ok(dualhead(d.path(), &["--config", c, cmd]));
    }
    let sel = json_of(find(&contents(d.path()), "selection-", ".json"));
    assert_eq!(sel["epoch"], 1);
}

#[test]
fn cls_only_mode_with_default_threshold() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(dualhead(d.path(), &["--mode", "cls-only", "--threshold", "default", "--runs", "2", "all"]));
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.contains("(2 runs)"), "{report}");
    let eval = json_of(find(&contents(d.path()), "eval-report-", ".json"));
    assert!(eval["report"]["tuned"].is_null(), "{eval}");
    assert!(!eval["report"]["default"].is_null());
}

#[test]
fn show_and_template_export() {
    let d = tempfile::tempdir().unwrap();
    let o = ok(dualhead(d.path(), &["--config", "paper-shape", "show"]));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("prevalence = 0.04"), "{text}");
    assert!(text.contains("# eval "));
    let t = d.path().join("tpl");
    ok(dualhead(d.path(), &["templates", "--dir", t.to_str().unwrap()]));
    for f in ["synth/system.txt", "clinical/user.txt", "judge/label.txt", "judge-claim/readability.txt"] {
        assert!(t.join(f).is_file(), "{f}");
    }
}

/// Answers every chat request with `reply` and counts the requests.
fn chat_server(reply: String) -> (String, std::sync::Arc<std::sync::atomic::AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let count = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
    let c = count.clone();
    let body = json!({"choices": [{"message": {"role": "assistant", "content": reply}}]}).to_string();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut h = String::new();
                if reader.read_line(&mut h).unwrap_or(0) == 0 {
                    break;
                }
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                if let Some((k, v)) = h.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut buf = vec![0u8; len];
            let _ = reader.read_exact(&mut buf);
            c.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            let _ = stream.write_all(
                format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .as_bytes(),
            );
        }
    });
    (base, count)
}

#[test]
fn remote_teacher_over_http() {
    let d = tempfile::tempdir().unwrap();
    ok(dualhead(d.path(), &["synth-gen"]));
    ok(dualhead(d.path(), &["build-data"]));
    let files = contents(d.path());
    let aug = String::from_utf8(find(&files, "augmented-", ".jsonl").to_vec()).unwrap();
    let positive: Value = aug
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .find(|v| v["label"] == 1)
        .expect("a retained positive");
    let (base, count) = chat_server(positive["teacher_output"].as_str().unwrap().to_string());

    let cfg = d.path().join("remote.toml");
    fs::write(
        &cfg,
        format!("{SMOKE}\n[endpoint]\nbase_url = \"{base}\"\nmodel = \"mock\"\ntimeout_secs = 5\nmax_retries = 0\n"),
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    ok(dualhead(d.path(), &["--config", c, "synth-gen"]));
    ok(dualhead(d.path(), &["--config", c, "--teacher", "remote", "build-data"]));
    let files = contents(d.path());
    let reports: Vec<Value> = files
        .iter()
        .filter(|(k, _)| k.starts_with("datagen-report-") && k.ends_with(".json"))
        .map(|(_, v)| json_of(v))
        .collect();
    assert_eq!(reports.len(), 2, "oracle and remote runs hash apart");
    let remote = reports
        .iter()
        .find(|r| r["report"]["teacher"].as_str().unwrap().contains("model=mock"))
        .expect("remote report names the endpoint");
    // a constant positive answer is accepted on the first trial for every
    // positive and never for a negative
    let train: Vec<Value> = String::from_utf8(find(&files, "train-", ".jsonl").to_vec())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let pos = train.iter().filter(|v| v["label"] == 1).count();
    let neg = train.len() - pos;
    let k = 5;
    assert_eq!(count.load(std::sync::atomic::Ordering::SeqCst), pos + k * neg);
    let r = &remote["report"];
    assert_eq!(r["positive"]["retained"], pos);
    assert_eq!(r["negative"]["retained"], 0);
    assert_eq!(r["negative"]["failed"], neg);
    assert_eq!(r["teacher_calls"], pos + k * neg);
}
