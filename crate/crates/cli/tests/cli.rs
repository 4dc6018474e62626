use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMOKE: &str = r#"
[dataset]
num_classes = 4
samples_per_class = 20
ambient_dim = 8
embed_dim = 3
noise_sigma = 0.1
seed = 3

[training]
epochs = 6
batch_size = 16
lr_drop_epochs = [4]
seed = 5

[eval]
fars = [0.1, 0.01]
"#;

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svsoftmax"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--output")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn config(dir: &Path, losses: &str) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(&path, format!("{SMOKE}\n{losses}")).unwrap();
    path
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn gradcheck_all_variants_pass() {
    let dir = tempfile::tempdir().unwrap();
    let losses: String = [
        "softmax",
        "focal-softmax",
        "hm-softmax",
        "margin-softmax",
        "naive-focal",
        "naive-hm",
        "sv-softmax",
        "sv-x-softmax",
    ]
    .iter()
    .enumerate()
    .map(|(i, v)| format!("[loss.{}]\nvariant = \"{v}\"\n", i + 1))
    .collect();
    let cfg = config(dir.path(), &losses);
    let out = dir.path().join("out");
    let o = run(&["gradcheck"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read(out.join("gradcheck.txt"));
    assert_eq!(report.matches("result: PASS").count(), 8);
    assert!(!report.contains("FAIL"));
}

#[test]
fn corrupted_gradient_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[loss.1]\nvariant = \"sv-am-softmax\"\n");
    let out = dir.path().join("out");
    let o = run(&["gradcheck", "--corrupt-gradient"], &cfg, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(read(out.join("gradcheck.txt")).contains("result: FAIL"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let no_losses = config(dir.path(), "");
    assert_eq!(run(&["gradcheck"], &no_losses, &out).status.code(), Some(2));

    let unknown = config(dir.path(), "[loss.1]\nvariant = \"softmax\"\ntemperature = 2\n");
    let o = run(&["train"], &unknown, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key `temperature`"));

    let bad = config(dir.path(), "[loss.1]\nvariant = \"margin-softmax\"\nm2 = 1.5\n");
    assert_eq!(run(&["train"], &bad, &out).status.code(), Some(2));

    let missing = dir.path().join("absent.toml");
    assert_eq!(run(&["train"], &missing, &out).status.code(), Some(2));
}

#[test]
fn train_writes_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[loss.1]\nvariant = \"softmax\"\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["train"], &cfg, out);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["loss-1/history.csv", "loss-1/report.json", "loss-1/roc.csv", "loss-1/model.svm1", "loss_table.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let history = read(a.join("loss-1/history.csv"));
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("epoch,mean_loss,train_accuracy,sv_rate,learning_rate"));
    assert_eq!(lines.count(), 6);

    let manifest: serde_json::Value = serde_json::from_str(&read(a.join("manifest.json"))).unwrap();
    assert_eq!(manifest["losses"].as_array().unwrap().len(), 1);
    assert_eq!(manifest["losses"][0]["status"]["state"], "completed");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    let report: serde_json::Value = serde_json::from_str(&read(a.join("loss-1/report.json"))).unwrap();
    let keys: Vec<_> = report.as_object().unwrap().keys().cloned().collect();
    assert_eq!(keys, ["mean_intra_angle", "min_inter_center_angle", "rank1", "tpr_at_far"]);
    assert_eq!(report["tpr_at_far"].as_array().unwrap().len(), 2);
}

#[test]
fn sv_softmax_with_unit_t_matches_softmax() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "[loss.1]\nvariant = \"softmax\"\n[loss.2]\nvariant = \"sv-softmax\"\nt = 1.0\n",
    );
    let out = dir.path().join("out");
    assert_eq!(run(&["train"], &cfg, &out).status.code(), Some(0));
    assert_eq!(read(out.join("loss-1/history.csv")), read(out.join("loss-2/history.csv")));
    assert_eq!(read(out.join("loss-1/report.json")), read(out.join("loss-2/report.json")));
}

#[test]
fn table_layout_and_append_stability() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let one = config(dir.path(), "[loss.1]\nvariant = \"softmax\"\n");
    assert_eq!(run(&["train"], &one, &out).status.code(), Some(0));
    let first = read(out.join("loss_table.csv"));
    let mut lines = first.lines();
    assert_eq!(lines.next(), Some("loss,rank1,tpr_far_1e-1,tpr_far_1e-2,intra_angle,inter_angle"));
    assert!(lines.next().unwrap().starts_with("Softmax,"));

    let two = config(dir.path(), "[loss.1]\nvariant = \"softmax\"\n[loss.2]\nvariant = \"am-softmax\"\n");
    assert_eq!(run(&["train"], &two, &out).status.code(), Some(0));
    let second = read(out.join("loss_table.csv"));
    assert!(second.starts_with(&first));
    assert_eq!(second.lines().count(), 3);
    assert!(second.lines().nth(2).unwrap().starts_with("AM-Softmax,"));

    let o = run(&["table"], &two, &out);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), second);
}

#[test]
fn table_without_reports_is_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[loss.1]\nvariant = \"softmax\"\n");
    let out = dir.path().join("empty");
    fs::create_dir_all(&out).unwrap();
    let o = run(&["table"], &cfg, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing artifacts"));
    assert_eq!(run(&["eval"], &cfg, &out).status.code(), Some(1));
}

#[test]
fn eval_reproduces_training_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[loss.1]\nvariant = \"sv-x-softmax\"\n");
    let out = dir.path().join("out");
    assert_eq!(run(&["train"], &cfg, &out).status.code(), Some(0));
    let report = read(out.join("loss-1/report.json"));
    fs::remove_file(out.join("loss-1/report.json")).unwrap();
    assert_eq!(run(&["eval"], &cfg, &out).status.code(), Some(0));
    assert_eq!(read(out.join("loss-1/report.json")), report);
}

#[test]
fn seed_override_changes_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[loss.1]\nvariant = \"softmax\"\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["train"], &cfg, &a).status.code(), Some(0));
    assert_eq!(run(&["train", "--seed", "99"], &cfg, &b).status.code(), Some(0));
    assert_ne!(read(a.join("loss-1/history.csv")), read(b.join("loss-1/history.csv")));
    assert!(read(b.join("config.toml")).contains("seed = 99"));
}

#[test]
fn large_t_never_writes_nan() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[loss.1]\nvariant = \"sv-softmax\"\nt = 1.6\n");
    let out = dir.path().join("out");
    let o = run(&["train"], &cfg, &out);
    let code = o.status.code();
    assert!(code == Some(0) || code == Some(3), "{code:?}");
    for f in ["loss-1/history.csv", "loss-1/report.json", "loss-1/roc.csv", "manifest.json"] {
        if let Ok(text) = fs::read_to_string(out.join(f)) {
            let lower = text.to_lowercase();
            assert!(!lower.contains("nan") && !lower.contains("inf,"), "{f}");
        }
    }
}
