use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 12] = [
    "phantom",
    "split",
    "pretrain",
    "train",
    "generate",
    "eval-roi",
    "eval-embed",
    "eval-clf",
    "report",
    "rerun",
    "check-config",
    "version",
];

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny.json")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fmrigan"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(csv_files(&p));
        } else if p.extension().is_some_and(|e| e == "csv") {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn help_on_every_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    for sub in SUBCOMMANDS {
        let out = run(tmp.path(), &[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub} --help");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("Usage"), "{sub}: {text}");
    }
    let text = String::from_utf8(run(tmp.path(), &["eval-clf", "--help"]).stdout).unwrap();
    for flag in ["--config", "--set", "--out", "--data", "--split", "--arms", "--generator"] {
        assert!(text.contains(flag), "eval-clf help lacks {flag}");
    }
}

#[test]
fn usage_and_config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&run(d, &["phantom", "--bogus", "--out", "x"])), 2);
    assert_eq!(code(&run(d, &["frobnicate"])), 2);

    fs::write(d.join("empty.json"), "").unwrap();
    let out = run(d, &["phantom", "--config", "empty.json", "--out", "x"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let out = run(d, &["split", "--data", "nowhere", "--out", "x"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nowhere"), "{}", stderr(&out));

    let out = run(d, &["split", "--out", "x"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--data"));

    let out = run(d, &["check-config", "--set", "train.lr_d=-1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("train.lr_d"));

    let out = run(d, &["check-config", "--set", "arch.input_dims=[24,16,16,32]"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("phantom.dims") && stderr(&out).contains("arch.input_dims"));
}

#[test]
fn version_and_paper_profile() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["version"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
    fs::write(tmp.path().join("paper.json"), r#"{"profile": "paper"}"#).unwrap();
    let out = ok(tmp.path(), &["check-config", "--config", "paper.json"]);
    let cfg: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg["arch"]["z_dim"], 864);
    assert_eq!(cfg["train"]["gan_epochs"], 100);
    assert_eq!(cfg["train"]["batch_size"], 1);
    let kernels: Vec<u64> = cfg["arch"]["encoder_conv"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l["kernel"].as_u64().unwrap())
        .collect();
    assert_eq!(kernels, [16, 8, 4, 2]);
}

#[test]
fn locked_output_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("p");
    fs::create_dir_all(&out_dir).unwrap();
    fs::write(out_dir.join(".fmrigan.lock"), "").unwrap();
    let cfg = fixture();
    let out = run(tmp.path(), &["phantom", "--config", cfg.to_str().unwrap(), "--out", "p"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("locked"));
}

#[test]
fn pipeline_resume_and_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = fixture();
    let c = cfg.to_str().unwrap();

    ok(d, &["phantom", "--config", c, "--out", "p"]);
    let n_subjects = fs::read_dir(d.join("p/data")).unwrap().count() / 2;
    assert_eq!(n_subjects, 12);
    for f in ["schedule.txt", "parcellation.json", "parcellation.i32", "manifest.json", "subjects.csv"] {
        assert!(d.join("p").join(f).exists(), "{f}");
    }

    ok(d, &["split", "--config", c, "--data", "p/data", "--out", "s"]);
    ok(d, &["pretrain", "--config", c, "--data", "p/data", "--split", "s/split.json", "--out", "pre"]);
    ok(d, &["train", "--config", c, "--data", "p/data", "--split", "s/split.json", "--init", "pre/model", "--out", "t"]);

    // resuming from a mid-run checkpoint reproduces the uninterrupted history
    ok(d, &["train", "--config", c, "--data", "p/data", "--split", "s/split.json", "--resume", "t/ckpt_4", "--out", "t2"]);
    let full = fs::read_to_string(d.join("t/history.csv")).unwrap();
    let resumed = fs::read_to_string(d.join("t2/history.csv")).unwrap();
    assert_eq!(full, resumed);
    let steps: Vec<usize> = resumed.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, (1..=steps.len()).collect::<Vec<_>>());

    ok(d, &["generate", "--config", c, "--checkpoint", "t/model", "--n-per-class", "3", "--out", "g"]);
    assert_eq!(fs::read_dir(d.join("g/data")).unwrap().count(), 12);
    ok(d, &["eval-roi", "--config", c, "--data", "p/data", "--schedule", "p/schedule.txt", "--parcellation", "p/parcellation", "--out", "r"]);
    ok(d, &["eval-embed", "--config", c, "--data", "p/data", "--synthetic", "g/data", "--out", "e"]);
    assert!(d.join("e/projection.svg").exists());
    ok(d, &[
        "eval-clf", "--config", c, "--data", "p/data", "--split", "s/split.json", "--arms", "none,gaussian,conv1d",
        "--generator", "conv1d=t/model", "--out", "c",
    ]);
    let table = fs::read_to_string(d.join("c/classification.csv")).unwrap();
    let methods: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["none", "gaussian", "conv1d"]);
    ok(d, &["report", "p", "s", "t", "r", "c", "--out", "rep"]);
    assert!(fs::read_to_string(d.join("rep/report.md")).unwrap().contains("classification.csv"));

    for run_dir in ["p", "s", "pre", "t", "t2", "g", "r", "e", "c", "rep"] {
        let again = format!("re_{run_dir}");
        ok(d, &["rerun", "--manifest", run_dir, "--out", &again]);
        let originals = csv_files(&d.join(run_dir));
        assert!(!originals.is_empty(), "{run_dir} has no CSV");
        for f in originals {
            let rel = f.strip_prefix(d.join(run_dir)).unwrap();
            assert_eq!(fs::read(&f).unwrap(), fs::read(d.join(&again).join(rel)).unwrap(), "{run_dir}/{}", rel.display());
        }
    }
}
