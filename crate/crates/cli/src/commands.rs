//! The `gradcheck`, `train`, `eval` and `table` verbs.
//!
//! Output directory layout:
//!
//! ```text
//! config.toml          canonical form of the configuration
//! gradcheck.txt        per-loss finite-difference report
//! loss-N/history.csv   epoch, mean_loss, train_accuracy, sv_rate, learning_rate
//! loss-N/model.svm1    trained network and classifier
//! loss-N/report.json   held-out evaluation
//! loss-N/roc.csv       threshold, far, tpr
//! loss_table.csv       one row per evaluated loss
//! manifest.json        hashes, seeds, paths, durations, FAR clamps
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use svsoftmax_core::eval::{evaluate_embeddings, roc_curve, FarClamp};
use svsoftmax_core::{
    evaluate_model, finite_difference_check_with, full_backward, make_synthetic,
    nearest_center_accuracy, random_problem, train, EmbeddingNet, Error, GradCheckReport,
    SyntheticData,
};

use crate::config::{ExperimentConfig, LossEntry};
use crate::error::CliError;
use crate::format::{history_csv, loss_table_csv, roc_csv, ReportFile};
use crate::model;

pub const GRADCHECK_INSTANCES: u64 = 20;
pub const GRADCHECK_SHAPE: (usize, usize, usize) = (4, 5, 8);
pub const GRADCHECK_STEP: f64 = 1e-6;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

pub const CONFIG_FILE: &str = "config.toml";
pub const GRADCHECK_FILE: &str = "gradcheck.txt";
pub const TABLE_FILE: &str = "loss_table.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const MODEL_FILE: &str = "model.svm1";
pub const REPORT_FILE: &str = "report.json";
pub const ROC_FILE: &str = "roc.csv";

/// Directory of one configured loss, relative to the output directory.
pub fn loss_dir(entry: &LossEntry) -> PathBuf {
    PathBuf::from(format!("loss-{}", entry.index))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    fs::write(path, contents).map_err(CliError::io(path))
}

fn remove_if_present(path: &Path) -> Result<(), CliError> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(CliError::io(path)(e)),
        _ => Ok(()),
    }
}

/// Analytic gradients are scaled by this factor when the corruption hook is on.
pub const CORRUPTION_FACTOR: f64 = 1.01;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOutcome {
    pub loss: String,
    pub reports: Vec<GradCheckReport>,
}

impl GradcheckOutcome {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed)
    }
}

/// Finite-difference check of every configured loss on seeded random problems.
///
/// With `corrupt` set the analytic gradient is deliberately scaled, which
/// must make every check fail.
pub fn gradcheck(cfg: &ExperimentConfig, out: &Path, corrupt: bool) -> Result<Vec<GradcheckOutcome>, CliError> {
    let (n, k, d) = GRADCHECK_SHAPE;
    let mut outcomes = Vec::with_capacity(cfg.losses.len());
    let mut text = String::new();
    for entry in &cfg.losses {
        let name = entry.spec.name();
        let _ = writeln!(text, "[loss.{}] {name}", entry.index);
        let mut reports = Vec::new();
        for i in 0..GRADCHECK_INSTANCES {
            let (x, w) = random_problem(cfg.training.seed.wrapping_add(i), n, k, d)?;
            let report = finite_difference_check_with(
                &x,
                &w,
                &entry.spec,
                GRADCHECK_STEP,
                GRADCHECK_TOLERANCE,
                |x, w, spec| {
                    let (_, mut back) = full_backward(x, w, spec)?;
                    if corrupt {
                        back.d_features.as_mut_slice().iter_mut().for_each(|g| *g *= CORRUPTION_FACTOR);
                        back.d_weights.as_mut_slice().iter_mut().for_each(|g| *g *= CORRUPTION_FACTOR);
                    }
                    Ok(back)
                },
            )?;
            let _ = writeln!(
                text,
                "instance {i:>2}  max_relative_error {:.3e}  worst {}  checked {}  excluded {}  {}",
                report.max_relative_error,
                report.worst_entry.map_or_else(|| "-".to_owned(), |e| format!("{e:?}")),
                report.checked,
                report.excluded,
                if report.passed { "PASS" } else { "FAIL" },
            );
            for b in &report.warnings {
                let _ = writeln!(
                    text,
                    "  warning: boundary proximity ({:?}) at sample {} class {}, slack {:.3e}",
                    b.kind, b.sample, b.class, b.slack
                );
            }
            reports.push(report);
        }
        let outcome = GradcheckOutcome { loss: name, reports };
        let worst = outcome.reports.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
        let _ = writeln!(
            text,
            "result: {}  max_relative_error {worst:.3e}  tolerance {GRADCHECK_TOLERANCE:e}  step {GRADCHECK_STEP:e}\n",
            if outcome.passed() { "PASS" } else { "FAIL" },
        );
        outcomes.push(outcome);
    }
    write(&out.join(GRADCHECK_FILE), text)?;
    if let Some(failed) = outcomes.iter().find(|o| !o.passed()) {
        return Err(CliError::Verification(failed.loss.clone()));
    }
    Ok(outcomes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub artifact_version: String,
    pub config_hash: String,
    pub dataset_seed: u64,
    pub training_seed: u64,
    /// Test accuracy of the nearest true class center, the data's own ceiling.
    pub nearest_center_accuracy: f64,
    pub losses: Vec<LossRun>,
    pub table: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossRun {
    pub index: u32,
    pub name: String,
    pub status: RunStatus,
    pub history: Option<String>,
    pub model: Option<String>,
    pub report: Option<String>,
    pub roc: Option<String>,
    pub far_clamps: Vec<ClampRecord>,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClampRecord {
    pub requested: f64,
    pub used: f64,
}

impl From<FarClamp> for ClampRecord {
    fn from(c: FarClamp) -> Self {
        Self {
            requested: c.requested,
            used: c.used,
        }
    }
}

fn rel(dir: &Path, file: &str) -> String {
    dir.join(file).to_string_lossy().into_owned()
}

fn dataset(cfg: &ExperimentConfig) -> Result<SyntheticData, CliError> {
    Ok(make_synthetic(&cfg.dataset)?)
}

fn initial_model(cfg: &ExperimentConfig) -> Result<EmbeddingNet, CliError> {
    let widths = cfg.training.widths(&cfg.dataset);
    let mut net = EmbeddingNet::new(&widths, cfg.dataset.num_classes, cfg.training.seed)?;
    net.activation = cfg.training.activation;
    Ok(net)
}

struct Evaluation {
    report: ReportFile,
    roc: String,
    clamps: Vec<FarClamp>,
}

fn evaluate(cfg: &ExperimentConfig, data: &SyntheticData, net: &EmbeddingNet) -> Result<Evaluation, Error> {
    let emb = evaluate_model(net, &data.test)?;
    let (report, pairs, clamps) = evaluate_embeddings(
        &emb,
        &net.classifier,
        &cfg.eval.fars,
        cfg.eval.max_pairs_per_kind,
        cfg.training.seed,
    )?;
    Ok(Evaluation {
        report: ReportFile::from(&report),
        roc: roc_csv(&roc_curve(&pairs)),
        clamps,
    })
}

fn write_evaluation(out: &Path, dir: &Path, ev: &Evaluation, run: &mut LossRun) -> Result<(), CliError> {
    write(&out.join(dir).join(REPORT_FILE), ev.report.to_json())?;
    write(&out.join(dir).join(ROC_FILE), &ev.roc)?;
    run.report = Some(rel(dir, REPORT_FILE));
    run.roc = Some(rel(dir, ROC_FILE));
    run.far_clamps = ev.clamps.iter().copied().map(ClampRecord::from).collect();
    for c in &ev.clamps {
        log::info!(
            "[loss.{}] FAR target {:e} raised to {:e} (1 / impostor pairs)",
            run.index,
            c.requested,
            c.used
        );
    }
    Ok(())
}

fn clear_loss_outputs(out: &Path, dir: &Path) -> Result<(), CliError> {
    for f in [HISTORY_FILE, MODEL_FILE, REPORT_FILE, ROC_FILE] {
        remove_if_present(&out.join(dir).join(f))?;
    }
    Ok(())
}

/// Trains every configured loss on the shared dataset, evaluates it on the
/// held-out split and writes the comparison table.
///
/// A loss that diverges is recorded in the manifest and leaves no data files;
/// the remaining losses still run. Returns [`CliError::Diverged`] afterwards
/// if any loss diverged.
pub fn train_eval(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest, CliError> {
    write(&out.join(CONFIG_FILE), cfg.to_canonical_toml())?;
    let data = dataset(cfg)?;
    let mut manifest = new_manifest(cfg, &data);
    let mut diverged = Vec::new();
    for entry in &cfg.losses {
        let dir = loss_dir(entry);
        clear_loss_outputs(out, &dir)?;
        let mut run = new_run(entry);
        let started = Instant::now();
        let trained = train(&cfg.training.train_config(entry.spec), initial_model(cfg)?, &data.train);
        run.train_seconds = started.elapsed().as_secs_f64();
        let history = match trained {
            Ok(h) => h,
            Err(Error::Diverged { epoch }) => {
                log::warn!("[loss.{}] {} diverged at epoch {epoch}", entry.index, run.name);
                run.status = RunStatus::Diverged { epoch };
                diverged.push(run.name.clone());
                manifest.losses.push(run);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let started = Instant::now();
        let ev = match evaluate(cfg, &data, &history.model) {
            Ok(ev) => ev,
            Err(Error::DegenerateVector { .. }) => {
                log::warn!("[loss.{}] {} collapsed to a zero embedding", entry.index, run.name);
                run.status = RunStatus::Diverged { epoch: cfg.training.epochs };
                diverged.push(run.name.clone());
                manifest.losses.push(run);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        run.eval_seconds = started.elapsed().as_secs_f64();
        write(&out.join(&dir).join(HISTORY_FILE), history_csv(&history.records))?;
        write(&out.join(&dir).join(MODEL_FILE), model::encode(&history.model))?;
        run.history = Some(rel(&dir, HISTORY_FILE));
        run.model = Some(rel(&dir, MODEL_FILE));
        write_evaluation(out, &dir, &ev, &mut run)?;
        manifest.losses.push(run);
    }
    finish(cfg, out, &mut manifest)?;
    match diverged.is_empty() {
        true => Ok(manifest),
        false => Err(CliError::Diverged(diverged.join(", "))),
    }
}

/// Re-evaluates the saved models of every configured loss.
pub fn eval(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest, CliError> {
    let data = dataset(cfg)?;
    let mut manifest = new_manifest(cfg, &data);
    for entry in &cfg.losses {
        let dir = loss_dir(entry);
        let mut run = new_run(entry);
        let path = out.join(&dir).join(MODEL_FILE);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                log::warn!("[loss.{}] no model at {}", entry.index, path.display());
                continue;
            }
            Err(e) => return Err(CliError::io(&path)(e)),
        };
        let net = model::decode(&bytes).map_err(|e| CliError::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        run.model = Some(rel(&dir, MODEL_FILE));
        let started = Instant::now();
        let ev = evaluate(cfg, &data, &net)?;
        run.eval_seconds = started.elapsed().as_secs_f64();
        write_evaluation(out, &dir, &ev, &mut run)?;
        manifest.losses.push(run);
    }
    if manifest.losses.is_empty() {
        return Err(CliError::MissingArtifacts(format!("no {MODEL_FILE} under {}", out.display())));
    }
    finish(cfg, out, &mut manifest)?;
    Ok(manifest)
}

/// Assembles `loss_table.csv` from the evaluation reports on disk.
pub fn table(cfg: &ExperimentConfig, out: &Path) -> Result<String, CliError> {
    let mut rows = Vec::new();
    for entry in &cfg.losses {
        let path = out.join(loss_dir(entry)).join(REPORT_FILE);
        if !path.exists() {
            log::warn!("[loss.{}] no report at {}", entry.index, path.display());
            continue;
        }
        rows.push((entry.spec.name(), ReportFile::read(&path)?));
    }
    if rows.is_empty() {
        return Err(CliError::MissingArtifacts(format!("no {REPORT_FILE} under {}", out.display())));
    }
    let csv = loss_table_csv(&cfg.eval.fars, &rows).map_err(|message| CliError::Format {
        path: out.to_owned(),
        message,
    })?;
    write(&out.join(TABLE_FILE), &csv)?;
    Ok(csv)
}

fn new_manifest(cfg: &ExperimentConfig, data: &SyntheticData) -> Manifest {
    Manifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_owned(),
        config_hash: cfg.hash(),
        dataset_seed: cfg.dataset.seed,
        training_seed: cfg.training.seed,
        nearest_center_accuracy: nearest_center_accuracy(&data.test, &data.centers),
        losses: Vec::new(),
        table: None,
    }
}

fn new_run(entry: &LossEntry) -> LossRun {
    LossRun {
        index: entry.index,
        name: entry.spec.name(),
        status: RunStatus::Completed,
        history: None,
        model: None,
        report: None,
        roc: None,
        far_clamps: Vec::new(),
        train_seconds: 0.0,
        eval_seconds: 0.0,
    }
}

fn finish(cfg: &ExperimentConfig, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    if manifest.losses.iter().any(|r| r.report.is_some()) {
        table(cfg, out)?;
        manifest.table = Some(TABLE_FILE.to_owned());
    }
    let mut json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    json.push('\n');
    write(&out.join(MANIFEST_FILE), json)
}

