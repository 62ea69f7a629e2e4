use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bsarec"));
    c.env_remove("BSAREC_OUTPUT_ROOT").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 150 users walking a 120-item ring from different starting points.
fn ring_dataset(dir: &Path) -> PathBuf {
    let mut text = String::new();
    for u in 0..150usize {
        let start = (u * 37) % 120;
        let len = 6 + u % 9;
        let items: Vec<String> = (0..len).map(|j| format!("i{}", (start + j) % 120)).collect();
        text.push_str(&format!("u{u} {}\n", items.join(" ")));
    }
    let path = dir.join("ring.txt");
    fs::write(&path, text).unwrap();
    path
}

fn small_config(dir: &Path, data: &Path) -> PathBuf {
    let path = dir.join("run.cfg");
    fs::write(
        &path,
        format!(
            "data = {}\nmax_len = 12\nhidden = 8\nheads = 2\nmax_epochs = 2\nbatch_size = 32\nlog_seconds = false\n",
            data.display()
        ),
    )
    .unwrap();
    path
}

fn train_into(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", s(cfg), "--output-dir", s(out)];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "train failed: {}", stderr(&o));
    o
}

fn same_files(a: &Path, b: &Path, names: &[&str]) {
    for n in names {
        let x = fs::read(a.join(n)).unwrap();
        let y = fs::read(b.join(n)).unwrap();
        assert!(x == y, "{n} differs between {} and {}", a.display(), b.display());
    }
}

const RUN_FILES: [&str; 5] = ["train_log.csv", "model.ckpt", "metrics.json", "metrics.txt", "config.cfg"];

#[test]
fn preprocess_reindexes_and_reports_stats() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw.txt");
    fs::write(&raw, "alice x y z\nbob y w\n").unwrap();
    let out = dir.path().join("clean.txt");
    let o = run(&["preprocess", s(&raw), "-k", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&out).unwrap(), "1 1 2 3\n2 2 4\n");
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("clean.stats.json")).unwrap()).unwrap();
    assert_eq!(stats["users"], 2);
    assert_eq!(stats["items"], 4);
    assert_eq!(stats["interactions"], 5);

    // already-indexed input comes back unchanged
    let again = dir.path().join("again.txt");
    let o = run(&["preprocess", s(&out), "-k", "1", "--out", s(&again)]);
    assert!(o.status.success());
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn preprocess_missing_file_names_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nowhere.txt");
    let o = run(&["preprocess", s(&missing), "--out", s(&dir.path().join("o.txt"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("nowhere.txt"), "{}", stderr(&o));
}

#[test]
fn preprocess_filtering_to_nothing_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw.txt");
    fs::write(&raw, "a 1\nb 1\nc 1\nd 1\ne 1\n").unwrap();
    let o = run(&["preprocess", s(&raw), "-k", "5", "--out", s(&dir.path().join("o.txt"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn train_is_byte_identical_and_echo_round_trips() {
    let dir = TempDir::new().unwrap();
    let data = ring_dataset(dir.path());
    let cfg = small_config(dir.path(), &data);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    train_into(&cfg, &a, &["--seed", "7"]);
    train_into(&cfg, &b, &["--seed", "7"]);
    same_files(&a, &b, &["train_log.csv", "model.ckpt", "metrics.json", "metrics.txt"]);

    // the echo carries the output dir, so re-running it writes the same files
    let echo = a.join("config.cfg");
    let text = fs::read_to_string(&echo).unwrap();
    assert!(text.contains("seed = 7"), "{text}");
    let c = dir.path().join("c");
    let moved = dir.path().join("echo.cfg");
    fs::write(&moved, text.replace(s(&a), s(&c))).unwrap();
    let o = run(&["train", s(&moved)]);
    assert!(o.status.success(), "{}", stderr(&o));
    same_files(&a, &c, &["train_log.csv", "model.ckpt", "metrics.json"]);

    let log = fs::read_to_string(a.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,loss,val_ndcg20,val_hr20,seconds\n"));
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let data = ring_dataset(dir.path());
    let cfg = small_config(dir.path(), &data);
    let one = dir.path().join("one");
    let four = dir.path().join("four");
    train_into(&cfg, &one, &[]);
    train_into(&cfg, &four, &["--threads", "4"]);
    same_files(&one, &four, &RUN_FILES[..4]);
}

#[test]
fn ablation_overrides() {
    let dir = TempDir::new().unwrap();
    let data = ring_dataset(dir.path());
    let cfg = small_config(dir.path(), &data);
    for (alpha, name) in [("0", "only_a"), ("1", "only_aib")] {
        let out = dir.path().join(name);
        train_into(&cfg, &out, &["--alpha", alpha, "--set", "beta_mode=scalar"]);
        let echo = fs::read_to_string(out.join("config.cfg")).unwrap();
        assert!(echo.contains(&format!("alpha = {alpha}.0")), "{echo}");
        assert!(echo.contains("beta_mode = scalar"));
    }
}

#[test]
fn config_errors_are_listed_together() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "alpha = 1.5\nheads = 3\nlr = -1\nwibble = 2\n").unwrap();
    let o = run(&["train", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("wibble"), "{msg}");

    fs::write(&cfg, "alpha = 1.5\nheads = 3\nlr = -1\n").unwrap();
    let o = run(&["train", s(&cfg), "--set", "cutoff=99", "--set", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    for needle in ["alpha", "heads", "lr", "cutoff", "nope", "data"] {
        assert!(msg.contains(needle), "`{needle}` not reported: {msg}");
    }
}

#[test]
fn presets_parse() {
    let presets = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
    let dir = TempDir::new().unwrap();
    let mut count = 0;
    for entry in fs::read_dir(presets).unwrap() {
        let path = entry.unwrap().path();
        // a missing dataset is a data error, reached only after the config validated
        let o = run(&[
            "train",
            s(&path),
            "--data",
            s(&dir.path().join("absent.txt")),
            "--output-dir",
            s(dir.path()),
        ]);
        assert_eq!(o.status.code(), Some(3), "{}: {}", path.display(), stderr(&o));
        count += 1;
    }
    assert_eq!(count, 6);
    let lastfm = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("presets/lastfm.cfg")).unwrap();
    for line in ["alpha = 0.9", "cutoff = 3", "heads = 1", "lr = 0.001"] {
        assert!(lastfm.contains(line));
    }
}

#[test]
fn evaluate_protocols_and_mismatch() {
    let dir = TempDir::new().unwrap();
    let data = ring_dataset(dir.path());
    let cfg = small_config(dir.path(), &data);
    let run_dir = dir.path().join("run");
    train_into(&cfg, &run_dir, &[]);
    let ckpt = run_dir.join("model.ckpt");

    let o = run(&["evaluate", s(&ckpt), "--data", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    for row in ["HR@5", "HR@10", "HR@20", "NDCG@5", "NDCG@10", "NDCG@20"] {
        assert!(table.contains(row), "{table}");
    }

    let mut outputs = Vec::new();
    for out in ["s1", "s2"] {
        let out = dir.path().join(out);
        let o = run(&["evaluate", s(&ckpt), "--data", s(&data), "--protocol", "sampled-99", "--seed", "5", "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(fs::read(out.join("eval_sampled99_seed5.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let other = dir.path().join("other.txt");
    fs::write(&other, "u1 a b c\nu2 c b a d\n").unwrap();
    let o = run(&["evaluate", s(&ckpt), "--data", s(&other)]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("[121, 8]") && msg.contains("[5, 8]"), "{msg}");

    let wide = dir.path().join("wide.cfg");
    fs::write(&wide, format!("data = {}\nmax_len = 12\nhidden = 16\nheads = 2\n", data.display())).unwrap();
    let o = run(&["evaluate", s(&ckpt), "--config", s(&wide)]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("hidden: config 16, checkpoint 8"), "{msg}");
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = TempDir::new().unwrap();
    let data = ring_dataset(dir.path());
    let ckpt = dir.path().join("junk.ckpt");
    fs::write(&ckpt, b"not a checkpoint").unwrap();
    let o = run(&["evaluate", s(&ckpt), "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn diagnose_synthetic_suite() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("diag");
    let o = run(&["diagnose", "--synthetic", "--n", "16", "--tmax", "64", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let decay = fs::read_to_string(out.join("decay.csv")).unwrap();
    assert!(decay.starts_with("instance,t,ratio\n"));
    assert_eq!(decay.lines().count(), 1 + 20 * 64);
    let response = fs::read_to_string(out.join("spectral_response.csv")).unwrap();
    assert!(response.starts_with("bin,response\n0,1\n"), "{response}");
    assert_eq!(response.lines().count(), 1 + 9);

    let again = dir.path().join("again");
    run(&["diagnose", "--synthetic", "--n", "16", "--tmax", "64", "--out", s(&again)]);
    same_files(&out, &again, &["decay.csv", "spectral_response.csv", "oversmoothing_cosine.csv", "singular_values.csv", "summary.json"]);
}

#[test]
fn diagnose_checkpoint_and_layer_profile() {
    let dir = TempDir::new().unwrap();
    let data = ring_dataset(dir.path());
    let cfg = small_config(dir.path(), &data);
    let run_dir = dir.path().join("run");
    train_into(&cfg, &run_dir, &[]);

    let out = dir.path().join("diag");
    let o = run(&["diagnose", "--checkpoint", s(&run_dir.join("model.ckpt")), "--data", s(&data), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let beta = fs::read_to_string(out.join("beta.csv")).unwrap();
    let rows: Vec<&str> = beta.lines().collect();
    assert_eq!(rows[0], "layer,mode,mean,min,max");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("1,vector,") && rows[2].starts_with("2,vector,"));

    let prof = dir.path().join("prof");
    let o = run(&["diagnose", "--layers", "1..8", "--pure-attention", "--n", "16", "--out", s(&prof)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cos = fs::read_to_string(prof.join("layer_cosine.csv")).unwrap();
    let layers: Vec<&str> = cos.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(layers, ["0", "1", "2", "3", "4", "5", "6", "7", "8"]);

    let o = run(&["diagnose", "--checkpoint", s(&run_dir.join("model.ckpt")), "--layers", "1..5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_root_override() {
    let dir = TempDir::new().unwrap();
    let o = bin()
        .args(["diagnose", "--synthetic", "--tmax", "4", "--instances", "2", "--out", "rel"])
        .env("BSAREC_OUTPUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("rel/decay.csv").exists());
}
