use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn gvcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gvcl"))
        .args(args)
        .env_remove("GVCL_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gvcl(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small shared dataset, generated once per test binary.
fn data() -> &'static Path {
    static DIR: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    &DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        ok(&["generate", "--n", "60", "--seed", "3", "--out", s(&data)]);
        (dir, data)
    })
    .1
}

fn assert_error_line(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let err = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with("error kind="), "{err}");
    assert!(lines[0].contains(&format!("code={code}")), "{err}");
}

#[test]
fn generate_is_reproducible_and_counts_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&[
        "generate",
        "--n",
        "20",
        "--seed",
        "1",
        "--out",
        s(&a),
        "--format",
        "jsonl",
    ]);
    ok(&[
        "generate",
        "--n",
        "20",
        "--seed",
        "1",
        "--out",
        s(&b),
        "--format",
        "jsonl",
    ]);
    let ma = std::fs::read(a.join("manifest.json")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("manifest.json")).unwrap());
    assert_eq!(
        std::fs::read(a.join("train.jsonl")).unwrap(),
        std::fs::read(b.join("train.jsonl")).unwrap()
    );
    let manifest: serde_json::Value = serde_json::from_slice(&ma).unwrap();
    assert_eq!(manifest["n_scenes"], 20);
    assert!(manifest["format_version"].is_u64());
}

#[test]
fn generate_rejects_an_empty_split() {
    let dir = tempfile::tempdir().unwrap();
    let out = gvcl(&[
        "generate",
        "--n",
        "2",
        "--split",
        "0.8",
        "0.1",
        "0.1",
        "--out",
        s(&dir.path().join("d")),
    ]);
    assert_error_line(&out, 2);
}

#[test]
fn trajset_sizes_hashes_and_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let k2 = dir.path().join("k2.json");
    let k8 = dir.path().join("k8.json");
    let again = dir.path().join("k8b.json");
    for (eps, path) in [("2", &k2), ("8", &k8), ("8", &again)] {
        ok(&["trajset", "--data", s(data()), "--epsilon", eps, "--out", s(path)]);
    }
    let read = |p: &Path| serde_json::from_slice::<serde_json::Value>(&std::fs::read(p).unwrap()).unwrap();
    let (a, b) = (read(&k2), read(&k8));
    assert!(b["elements"].as_array().unwrap().len() < a["elements"].as_array().unwrap().len());
    assert_eq!(std::fs::read(&k8).unwrap(), std::fs::read(&again).unwrap());
    let manifest = read(&data().join("manifest.json"));
    assert_eq!(b["source_hash"], manifest["train_corpus_digest"]);
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn train_resume_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "variant = \"gvcl-det\"\nepsilon = 8.0\nfraction = 0.5\nseeds = [4]\nepochs = 2\nprior_epochs = 2\ndataset_path = {:?}\n",
            s(data())
        ),
    );
    let straight = dir.path().join("straight");
    let resumed = dir.path().join("resumed");
    ok(&["train", "--config", s(&cfg), "--out", s(&straight)]);
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&resumed),
        "--stop-after-epochs",
        "1",
    ]);
    let cell = "gvcl-det-eps8-frac0.5-seed4";
    assert!(resumed.join(cell).join("snapshot.json").exists());
    assert!(!resumed.join(cell).join("model.json").exists());
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&resumed),
        "--stop-after-epochs",
        "2",
    ]);
    ok(&["train", "--config", s(&cfg), "--out", s(&resumed)]);
    let model = straight.join(cell).join("model.json");
    assert_eq!(
        std::fs::read(&model).unwrap(),
        std::fs::read(resumed.join(cell).join("model.json")).unwrap()
    );
    assert!(!resumed.join(cell).join("snapshot.json").exists());
    assert!(straight.join(cell).join("train_log.json").exists());

    let report = dir.path().join("eval.json");
    let trajset = straight.join("trajset.json");
    ok(&[
        "eval",
        "--model",
        s(&model),
        "--data",
        s(data()),
        "--trajset",
        s(&trajset),
        "--out",
        s(&report),
    ]);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["rows"].as_array().unwrap().len(), 1);
    assert_eq!(r["rows"][0]["variant"], "gvcl-det");
    assert_eq!(r["rows"][0]["metrics"].as_object().unwrap().len(), 11);
    assert!(r["config"].is_object());

    let csv = gvcl(&["report", "--input", s(&report), "--format", "csv"]);
    assert_eq!(String::from_utf8_lossy(&csv.stdout).lines().count(), 2);

    let other = dir.path().join("k2.json");
    ok(&["trajset", "--data", s(data()), "--epsilon", "2", "--out", s(&other)]);
    let mismatch = gvcl(&[
        "eval",
        "--model",
        s(&model),
        "--data",
        s(data()),
        "--trajset",
        s(&other),
        "--out",
        s(&report),
    ]);
    assert_error_line(&mismatch, 2);
}

#[test]
fn matrix_rows_aggregates_and_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "variants = [\"base\", \"gvcl\"]\nepsilons = [8.0]\nfractions = [0.1]\nseeds = [1, 2, 3]\ndataset_path = {:?}\n[hyper]\nepochs = 1\nprior_epochs = 1\n",
            s(data())
        ),
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = ok(&["matrix", "--config", s(&cfg), "--out", s(&a), "--jobs", "2"]);
    ok(&["matrix", "--config", s(&cfg), "--out", s(&b)]);
    let table = String::from_utf8_lossy(&out.stdout);
    // header, six seed rows, two aggregate rows
    assert_eq!(table.lines().count(), 1 + 6 + 2, "{table}");
    assert_eq!(table.lines().filter(|l| l.contains("mean")).count(), 2);
    for f in ["report.json", "report.csv", "report.txt"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["rows"].as_array().unwrap().len(), 6);
    assert_eq!(r["aggregates"].as_array().unwrap().len(), 2);
    assert!(r["format_version"].is_u64());
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let missing = gvcl(&[
        "trajset",
        "--data",
        s(&dir.path().join("nope")),
        "--epsilon",
        "2",
        "--out",
        "x.json",
    ]);
    assert_error_line(&missing, 4);

    let bad_cfg = write_config(
        dir.path(),
        "variant = \"base\"\nepsilon = -1.0\nfraction = 0.5\nseeds = [1]\n",
    );
    assert_error_line(&gvcl(&["train", "--config", s(&bad_cfg), "--out", s(dir.path())]), 2);

    let diverging = write_config(
        dir.path(),
        &format!(
            "variant = \"base\"\nepsilon = 8.0\nfraction = 1.0\nseeds = [1]\nepochs = 3\nlr = 1e300\ndataset_path = {:?}\n",
            s(data())
        ),
    );
    assert_error_line(
        &gvcl(&["train", "--config", s(&diverging), "--out", s(&dir.path().join("div"))]),
        3,
    );

    let unknown = gvcl(&["generate", "--bogus"]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn output_root_prefixes_relative_paths() {
    let root = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gvcl"))
        .args([
            "trajset",
            "--data",
            s(data()),
            "--epsilon",
            "8",
            "--out",
            "sets/k8.json",
        ])
        .env("GVCL_OUTPUT_ROOT", root.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.path().join("sets/k8.json").exists());
}
