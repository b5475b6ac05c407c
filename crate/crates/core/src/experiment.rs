//! Experiment stages over a run directory.
//!
//! Every stage works against a directory keyed by the config hash, so two
//! configs can never clobber each other's artifacts and re-running a stage
//! with the same config overwrites its own outputs only. A `.lock` file
//! serializes stages within one run; `run.json` accumulates a phase log
//! (what ran, when, what it wrote).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, ExplainTarget};
use crate::data::synthetic::pixels_to_gray_image;
use crate::data::{
    balance_classes, generate, stratified_split, ClassTaxonomy, DatasetManifest, Loader,
};
use crate::embed::embed_and_cluster;
use crate::nn::{
    load_checkpoint, load_named_tensors, named_tensors, save_checkpoint, CheckpointMeta,
    ConvEncoder,
};
use crate::plot;
use crate::rng::{derive_seed, rng_from_seed};
use crate::saliency::{
    capture_from_classifier, eigen_cam, grad_cam, grad_cam_pp, overlay, ActivationCapture,
    CamMethod, Heatmap,
};
use crate::train::{
    evaluate_classifier, extract_features, fine_tune, linear_probe, pretrain_ssl,
    write_curve_csv, ClassifierModel, MetricsReport, PretrainConfig, SslModel, TrainOutcome,
};
use crate::{Error, Result};

const SSL_CHECKPOINT_KIND: &str = "ssl-model";
const CLASSIFIER_CHECKPOINT_KIND: &str = "classifier";

/// Which trained classifier an evaluate/explain stage reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierStage {
    Probe,
    /// Probe trained on a randomly initialized encoder (the control run).
    ProbeRandom,
    Finetune,
}

impl ClassifierStage {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierStage::Probe => "probe",
            ClassifierStage::ProbeRandom => "probe-random",
            ClassifierStage::Finetune => "finetune",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "probe" => Ok(ClassifierStage::Probe),
            "probe-random" | "random" => Ok(ClassifierStage::ProbeRandom),
            "finetune" | "fine-tune" => Ok(ClassifierStage::Finetune),
            other => Err(Error::InvalidConfig(format!("unknown classifier stage `{other}`"))),
        }
    }
}

/// How the probe's encoder is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeInit {
    Pretrained,
    Random,
}

impl ProbeInit {
    fn stage(self) -> ClassifierStage {
        match self {
            ProbeInit::Pretrained => ClassifierStage::Probe,
            ProbeInit::Random => ClassifierStage::ProbeRandom,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            ProbeInit::Pretrained => "pretrained",
            ProbeInit::Random => "random",
        }
    }
}

/// Paths inside one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let hash = cfg.hash();
        RunPaths { root: cfg.out_dir.join(&hash[..12]) }
    }

    pub fn config_file(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn run_record(&self) -> PathBuf {
        self.root.join("run.json")
    }

    pub fn taxonomy_file(&self) -> PathBuf {
        self.root.join("manifests/taxonomy.txt")
    }

    pub fn manifest(&self, split: &str) -> PathBuf {
        self.root.join(format!("manifests/{split}.tsv"))
    }

    pub fn checkpoint(&self, stem: &str) -> PathBuf {
        self.root.join(format!("checkpoints/{stem}.ckpt"))
    }

    pub fn curve_csv(&self, stem: &str) -> PathBuf {
        self.root.join(format!("curves/{stem}.csv"))
    }

    pub fn curve_png(&self, stem: &str) -> PathBuf {
        self.root.join(format!("curves/{stem}.png"))
    }

    pub fn report(&self, stem: &str) -> PathBuf {
        self.root.join(format!("reports/{stem}.json"))
    }

    pub fn report_png(&self, stem: &str) -> PathBuf {
        self.root.join(format!("reports/{stem}.png"))
    }

    pub fn embed_dir(&self) -> PathBuf {
        self.root.join("embed")
    }

    pub fn explain_dir(&self) -> PathBuf {
        self.root.join("explain")
    }
}

/// One completed stage in `run.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub phases: Vec<PhaseRecord>,
}

/// Exclusive-stage guard: created at stage entry, removed on drop. A second
/// process entering the same run directory fails with [`Error::Locked`].
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", now_unix());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn record_phase(
    paths: &RunPaths,
    hash: &str,
    phase: &str,
    started: u64,
    artifacts: &[PathBuf],
) -> Result<()> {
    let mut record = match fs::read_to_string(paths.run_record()) {
        Ok(text) => serde_json::from_str::<RunRecord>(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            RunRecord { config_hash: hash.to_string(), phases: Vec::new() }
        }
        Err(e) => return Err(e.into()),
    };
    let rel: Vec<String> = artifacts
        .iter()
        .map(|p| {
            p.strip_prefix(&paths.root)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    record.phases.push(PhaseRecord {
        phase: phase.to_string(),
        started_unix: started,
        finished_unix: now_unix(),
        artifacts: rel,
    });
    write_json(&paths.run_record(), &record)
}

/// Common stage scaffolding: validate, create/lock the run directory, pin
/// the config dump, run the body, log the phase.
fn stage<T>(
    cfg: &ExperimentConfig,
    phase: &str,
    body: impl FnOnce(&RunPaths) -> Result<(T, Vec<PathBuf>)>,
) -> Result<T> {
    cfg.validate()?;
    let paths = RunPaths::new(cfg);
    fs::create_dir_all(&paths.root)?;
    let _lock = RunLock::acquire(&paths.root)?;
    if !paths.config_file().exists() {
        fs::write(paths.config_file(), cfg.dump())?;
    }
    let started = now_unix();
    let (value, artifacts) = body(&paths)?;
    record_phase(&paths, &cfg.hash(), phase, started, &artifacts)?;
    Ok(value)
}

fn require(path: PathBuf, produced_by: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact { stage: produced_by.to_string(), path })
    }
}

fn builtin_or_file_taxonomy(cfg: &ExperimentConfig) -> Result<ClassTaxonomy> {
    match cfg.taxonomy.as_str() {
        "brain-mri" => Ok(ClassTaxonomy::brain_mri()),
        "synthetic" => ClassTaxonomy::synthetic(cfg.synthetic_classes),
        path => ClassTaxonomy::from_file(Path::new(path)),
    }
}

fn read_split_manifests(
    paths: &RunPaths,
) -> Result<(ClassTaxonomy, DatasetManifest, DatasetManifest, DatasetManifest)> {
    let taxonomy = ClassTaxonomy::from_file(&require(paths.taxonomy_file(), "prepare")?)?;
    let train = DatasetManifest::read_tsv(&require(paths.manifest("train"), "prepare")?, &taxonomy)?;
    let val = DatasetManifest::read_tsv(&require(paths.manifest("val"), "prepare")?, &taxonomy)?;
    let test = DatasetManifest::read_tsv(&require(paths.manifest("test"), "prepare")?, &taxonomy)?;
    Ok((taxonomy, train, val, test))
}

fn loader<'a>(cfg: &ExperimentConfig, manifest: &'a DatasetManifest) -> Result<Loader<'a>> {
    Loader::new(
        manifest,
        cfg.augment.clone(),
        cfg.normalize_spec(),
        cfg.resolution(),
        cfg.workers,
    )
}

// ---- prepare ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrepareReport {
    pub classes: Vec<String>,
    pub counts_before: Vec<usize>,
    pub counts_after: Vec<usize>,
    pub train_total: usize,
    pub val_total: usize,
    pub test_total: usize,
    pub train_counts: Vec<usize>,
    pub val_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
}

/// Build the dataset manifests: scan (or generate) the image tree, balance
/// every class to the target count with replayable augmentations, split
/// stratified, and write the four TSVs plus a summary report.
pub fn cmd_prepare(cfg: &ExperimentConfig) -> Result<PrepareReport> {
    stage(cfg, "prepare", |paths| {
        let taxonomy = builtin_or_file_taxonomy(cfg)?;
        if cfg.source == DataSource::Synthetic {
            let generated = generate(&cfg.root, &cfg.synthetic_spec())?;
            if generated.hash() != taxonomy.hash() {
                return Err(Error::TaxonomyMismatch(
                    "generated classes do not match the configured taxonomy".into(),
                ));
            }
        }
        let manifest = DatasetManifest::scan(&cfg.root, &taxonomy)?;
        let counts_before = manifest.counts();
        let balanced = balance_classes(&manifest, cfg.balance_target, cfg.seed)?;
        let counts_after = balanced.counts();
        let (train, val, test) = stratified_split(&balanced, &cfg.split_spec())?;

        fs::create_dir_all(paths.root.join("manifests"))?;
        let taxonomy_path = paths.taxonomy_file();
        fs::write(&taxonomy_path, taxonomy.classes().join("\n") + "\n")?;
        let full_path = paths.manifest("full");
        balanced.write_tsv(&full_path)?;
        let train_path = paths.manifest("train");
        train.write_tsv(&train_path)?;
        let val_path = paths.manifest("val");
        val.write_tsv(&val_path)?;
        let test_path = paths.manifest("test");
        test.write_tsv(&test_path)?;

        let report = PrepareReport {
            classes: taxonomy.classes().to_vec(),
            counts_before,
            counts_after,
            train_total: train.len(),
            val_total: val.len(),
            test_total: test.len(),
            train_counts: train.counts(),
            val_counts: val.counts(),
            test_counts: test.counts(),
        };
        let report_path = paths.report("prepare");
        write_json(&report_path, &report)?;
        Ok((
            report,
            vec![taxonomy_path, full_path, train_path, val_path, test_path, report_path],
        ))
    })
}

// ---- pretrain ----

/// Self-supervised pretraining on the train split; saves the best-validation
/// online branch (encoder + heads) and the loss curve.
pub fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    stage(cfg, "pretrain", |paths| {
        let (_taxonomy, train_m, val_m, _test_m) = read_split_manifests(paths)?;
        let train_loader = loader(cfg, &train_m)?;
        let val_loader = loader(cfg, &val_m)?;

        let mut model = SslModel::new(cfg.encoder_spec(), cfg.method, cfg.seed)?;
        let pretrain_cfg = PretrainConfig {
            hyper: cfg.ssl_hyper(),
            view_cfg: cfg.view_augmentation(),
            seed: cfg.seed,
        };
        let outcome = pretrain_ssl(&mut model, &train_loader, &val_loader, &pretrain_cfg)?;

        let (best_epoch, best_val) = outcome.best.unwrap_or((0, f64::NAN));
        let meta = CheckpointMeta::new(SSL_CHECKPOINT_KIND)
            .with("method", cfg.method.as_str())
            .with("encoder", cfg.encoder_kind.as_str())
            .with("feature_dim", model.feature_dim())
            .with("resolution", cfg.resolution())
            .with("epochs_run", outcome.curve.len())
            .with("best_epoch", best_epoch)
            .with("best_val", best_val)
            .with("seed", cfg.seed)
            .with("config", cfg.hash());
        let ckpt_path = paths.checkpoint("pretrain");
        fs::create_dir_all(paths.root.join("checkpoints"))?;
        save_checkpoint(&ckpt_path, &meta, &named_tensors(&model))?;

        fs::create_dir_all(paths.root.join("curves"))?;
        let csv_path = paths.curve_csv("pretrain");
        write_curve_csv(&csv_path, &outcome.curve)?;
        let png_path = paths.curve_png("pretrain");
        plot::curve_png(&png_path, &outcome.curve)?;
        let report_path = paths.report("pretrain");
        write_json(&report_path, &outcome)?;

        Ok((outcome, vec![ckpt_path, csv_path, png_path, report_path]))
    })
}

fn load_ssl_encoder(paths: &RunPaths, cfg: &ExperimentConfig) -> Result<ConvEncoder> {
    let path = require(paths.checkpoint("pretrain"), "pretrain")?;
    let (meta, tensors) = load_checkpoint(&path)?;
    if meta.kind != SSL_CHECKPOINT_KIND {
        return Err(Error::Checkpoint(format!(
            "{} holds a `{}` checkpoint, expected `{SSL_CHECKPOINT_KIND}`",
            path.display(),
            meta.kind
        )));
    }
    let stored_encoder = meta.fields.get("encoder").map(String::as_str).unwrap_or("?");
    if stored_encoder != cfg.encoder_kind.as_str() {
        return Err(Error::Checkpoint(format!(
            "checkpoint encoder `{stored_encoder}` does not match configured `{}`",
            cfg.encoder_kind.as_str()
        )));
    }
    let method = meta
        .fields
        .get("method")
        .ok_or_else(|| Error::Checkpoint("checkpoint is missing its `method` field".into()))
        .and_then(|m| crate::train::SslMethod::parse(m))?;
    let mut model = SslModel::new(cfg.encoder_spec(), method, cfg.seed)?;
    load_named_tensors(&mut model, &tensors)?;
    Ok(model.encoder)
}

fn load_classifier(
    paths: &RunPaths,
    cfg: &ExperimentConfig,
    stage: ClassifierStage,
) -> Result<ClassifierModel> {
    let path = require(paths.checkpoint(stage.as_str()), stage.as_str())?;
    let (meta, tensors) = load_checkpoint(&path)?;
    if meta.kind != CLASSIFIER_CHECKPOINT_KIND {
        return Err(Error::Checkpoint(format!(
            "{} holds a `{}` checkpoint, expected `{CLASSIFIER_CHECKPOINT_KIND}`",
            path.display(),
            meta.kind
        )));
    }
    let classes: usize = meta
        .fields
        .get("classes")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Checkpoint("checkpoint is missing its `classes` field".into()))?;
    let mut model = ClassifierModel::new(cfg.encoder_spec(), classes, cfg.seed)?;
    load_named_tensors(&mut model, &tensors)?;
    Ok(model)
}

fn save_classifier(
    paths: &RunPaths,
    cfg: &ExperimentConfig,
    model: &ClassifierModel,
    stage: ClassifierStage,
    init: &str,
) -> Result<PathBuf> {
    let meta = CheckpointMeta::new(CLASSIFIER_CHECKPOINT_KIND)
        .with("stage", stage.as_str())
        .with("init", init)
        .with("method", cfg.method.as_str())
        .with("encoder", cfg.encoder_kind.as_str())
        .with("classes", model.head.num_classes())
        .with("seed", cfg.seed)
        .with("config", cfg.hash());
    let path = paths.checkpoint(stage.as_str());
    fs::create_dir_all(paths.root.join("checkpoints"))?;
    save_checkpoint(&path, &meta, &named_tensors(model))?;
    Ok(path)
}

// ---- probe / finetune ----

/// Training outcome plus validation metrics of the resulting classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub outcome: TrainOutcome,
    pub val: MetricsReport,
}

/// Linear probe: train a softmax head on frozen encoder features. With
/// [`ProbeInit::Random`] the encoder is freshly initialized instead of
/// loaded, which is the control for how much pretraining bought.
pub fn cmd_probe(cfg: &ExperimentConfig, init: ProbeInit) -> Result<FitReport> {
    let stage_kind = init.stage();
    stage(cfg, stage_kind.as_str(), |paths| {
        let (_taxonomy, train_m, val_m, _test_m) = read_split_manifests(paths)?;
        let train_loader = loader(cfg, &train_m)?;
        let val_loader = loader(cfg, &val_m)?;

        let encoder = match init {
            ProbeInit::Pretrained => load_ssl_encoder(paths, cfg)?,
            ProbeInit::Random => {
                // same constructor path as SslModel::new, so this is exactly
                // the encoder pretraining started from
                let mut enc_rng = rng_from_seed(derive_seed(cfg.seed, "encoder", 0));
                ConvEncoder::new(cfg.encoder_spec(), &mut enc_rng)?
            }
        };
        let (head, outcome) = linear_probe(&encoder, &train_loader, &val_loader, &cfg.probe_fit())?;
        let model = ClassifierModel { encoder, head };
        let val = evaluate_classifier(&model, &val_loader, cfg.batch_size)?;

        let ckpt_path = save_classifier(paths, cfg, &model, stage_kind, init.as_str())?;
        fs::create_dir_all(paths.root.join("curves"))?;
        let csv_path = paths.curve_csv(stage_kind.as_str());
        write_curve_csv(&csv_path, &outcome.curve)?;
        let png_path = paths.curve_png(stage_kind.as_str());
        plot::curve_png(&png_path, &outcome.curve)?;

        let report = FitReport { outcome, val };
        let report_path = paths.report(stage_kind.as_str());
        write_json(&report_path, &report)?;
        Ok((report, vec![ckpt_path, csv_path, png_path, report_path]))
    })
}

/// Fine-tune: load the pretrained encoder, put a fresh head on it, and train
/// everything jointly with early stopping on validation loss.
pub fn cmd_finetune(cfg: &ExperimentConfig) -> Result<FitReport> {
    stage(cfg, "finetune", |paths| {
        let (taxonomy, train_m, val_m, _test_m) = read_split_manifests(paths)?;
        let train_loader = loader(cfg, &train_m)?;
        let val_loader = loader(cfg, &val_m)?;

        let encoder = load_ssl_encoder(paths, cfg)?;
        let mut model = ClassifierModel::from_pretrained(encoder, taxonomy.len(), cfg.seed);
        let outcome = fine_tune(&mut model, &train_loader, &val_loader, &cfg.finetune_fit())?;
        let val = evaluate_classifier(&model, &val_loader, cfg.batch_size)?;

        let ckpt_path =
            save_classifier(paths, cfg, &model, ClassifierStage::Finetune, "pretrained")?;
        fs::create_dir_all(paths.root.join("curves"))?;
        let csv_path = paths.curve_csv("finetune");
        write_curve_csv(&csv_path, &outcome.curve)?;
        let png_path = paths.curve_png("finetune");
        plot::curve_png(&png_path, &outcome.curve)?;

        let report = FitReport { outcome, val };
        let report_path = paths.report("finetune");
        write_json(&report_path, &report)?;
        Ok((report, vec![ckpt_path, csv_path, png_path, report_path]))
    })
}

// ---- evaluate ----

/// Test-split metrics for a trained classifier, plus a confusion heatmap.
pub fn cmd_evaluate(cfg: &ExperimentConfig, stage_kind: ClassifierStage) -> Result<MetricsReport> {
    stage(cfg, &format!("evaluate-{}", stage_kind.as_str()), |paths| {
        let (_taxonomy, _train_m, _val_m, test_m) = read_split_manifests(paths)?;
        let test_loader = loader(cfg, &test_m)?;
        let model = load_classifier(paths, cfg, stage_kind)?;
        let report = evaluate_classifier(&model, &test_loader, cfg.batch_size)?;

        let stem = format!("evaluate-{}", stage_kind.as_str());
        let report_path = paths.report(&stem);
        write_json(&report_path, &report)?;
        let png_path = paths.report_png(&stem);
        plot::confusion_png(&png_path, &report)?;
        Ok((report, vec![report_path, png_path]))
    })
}

// ---- embed ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedReport {
    /// Points projected (after any subsampling).
    pub points: usize,
    pub clusters: usize,
    /// Agreement between k-means clusters in the 2-D projection and the true
    /// labels: 1 = identical partitions, ~0 = chance.
    pub adjusted_rand_index: f64,
}

/// Project test-split encoder features to 2-D, cluster the projection, and
/// score cluster/label agreement.
pub fn cmd_embed(cfg: &ExperimentConfig) -> Result<EmbedReport> {
    stage(cfg, "embed", |paths| {
        let (taxonomy, _train_m, _val_m, test_m) = read_split_manifests(paths)?;
        let test_loader = loader(cfg, &test_m)?;
        let encoder = load_ssl_encoder(paths, cfg)?;
        let (features, labels) = extract_features(&encoder, &test_loader, cfg.batch_size)?;

        let n = features.nrows();
        let (features, labels) = if n > cfg.embed_max_points {
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = rng_from_seed(derive_seed(cfg.seed, "embed-subsample", 0));
            order.shuffle(&mut rng);
            order.truncate(cfg.embed_max_points);
            order.sort_unstable();
            let picked_labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
            (features.select(Axis(0), &order), picked_labels)
        } else {
            (features, labels)
        };

        let k = if cfg.embed_clusters == 0 { taxonomy.len() } else { cfg.embed_clusters };
        let outcome = embed_and_cluster(&features, &labels, k, &cfg.tsne_config())?;

        fs::create_dir_all(paths.embed_dir())?;
        let coords_path = paths.embed_dir().join("coords.csv");
        let mut csv = String::from("x,y,label,cluster\n");
        for (row, (&label, &cluster)) in
            outcome.coords.rows().into_iter().zip(labels.iter().zip(&outcome.clusters))
        {
            csv.push_str(&format!("{},{},{},{}\n", row[0], row[1], label, cluster));
        }
        fs::write(&coords_path, csv)?;

        let labels_png = paths.embed_dir().join("scatter-labels.png");
        plot::scatter_png(&labels_png, &outcome.coords, &labels)?;
        let clusters_png = paths.embed_dir().join("scatter-clusters.png");
        plot::scatter_png(&clusters_png, &outcome.coords, &outcome.clusters)?;

        let report = EmbedReport {
            points: outcome.coords.nrows(),
            clusters: k,
            adjusted_rand_index: outcome.ari,
        };
        let report_path = paths.embed_dir().join("report.json");
        write_json(&report_path, &report)?;
        Ok((report, vec![coords_path, labels_png, clusters_png, report_path]))
    })
}

// ---- explain ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapStats {
    pub file: String,
    /// Raw (pre-normalization) heatmap range.
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainEntry {
    /// Index into the test manifest.
    pub index: usize,
    pub image: String,
    pub true_class: String,
    pub predicted_class: String,
    /// The class the maps explain (predicted or true, per config).
    pub target_class: String,
    pub input_file: String,
    pub maps: BTreeMap<String, MapStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainReport {
    pub stage: String,
    pub entries: Vec<ExplainEntry>,
}

fn apply_cam(method: CamMethod, capture: &ActivationCapture) -> Result<Heatmap> {
    match method {
        CamMethod::GradCam => grad_cam(capture),
        CamMethod::GradCamPp => grad_cam_pp(capture),
        CamMethod::EigenCam => eigen_cam(capture),
    }
}

/// Class-activation maps for a seeded sample of test images: one overlay PNG
/// per (image, method) plus the denormalized input and a stats sidecar.
pub fn cmd_explain(cfg: &ExperimentConfig, stage_kind: ClassifierStage) -> Result<ExplainReport> {
    stage(cfg, &format!("explain-{}", stage_kind.as_str()), |paths| {
        let (taxonomy, _train_m, _val_m, test_m) = read_split_manifests(paths)?;
        let test_loader = loader(cfg, &test_m)?;
        let model = load_classifier(paths, cfg, stage_kind)?;

        let n = test_m.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = rng_from_seed(derive_seed(cfg.seed, "explain-sample", 0));
        order.shuffle(&mut rng);
        order.truncate(cfg.explain_count.min(n));
        order.sort_unstable();

        let batch = test_loader.labeled_batch(&order)?;
        let h = model.encoder.forward_inference(&batch.x)?;
        let probs = model.head.classify(&h)?;
        let predicted: Vec<usize> = probs
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(j, _)| j)
                    .unwrap_or(0)
            })
            .collect();
        let targets: Vec<usize> = match cfg.explain_target {
            ExplainTarget::Predicted => predicted.clone(),
            ExplainTarget::True => batch.y.clone(),
        };
        let captures = capture_from_classifier(&model, &batch.x, &targets)?;

        fs::create_dir_all(paths.explain_dir())?;
        let mut artifacts = Vec::new();
        let mut entries = Vec::new();
        for (i, capture) in captures.iter().enumerate() {
            let manifest_index = order[i];
            let gray: Array2<f64> = batch
                .x
                .index_axis(Axis(0), i)
                .index_axis(Axis(0), 0)
                .mapv(|v| (v * cfg.normalize_std + cfg.normalize_mean).clamp(0.0, 1.0));

            let input_name = format!("{manifest_index:04}-input.png");
            let input_path = paths.explain_dir().join(&input_name);
            pixels_to_gray_image(&gray)
                .save(&input_path)
                .map_err(image::ImageError::from)?;
            artifacts.push(input_path);

            let mut maps = BTreeMap::new();
            for &method in &cfg.explain_methods {
                let heat = apply_cam(method, capture)?;
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for &v in &heat.values {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                let file_name = format!("{manifest_index:04}-{}.png", method.as_str());
                let file_path = paths.explain_dir().join(&file_name);
                overlay(&heat.minmax(), &gray)?
                    .save(&file_path)
                    .map_err(image::ImageError::from)?;
                artifacts.push(file_path);
                maps.insert(
                    method.as_str().to_string(),
                    MapStats { file: file_name, min: lo, max: hi },
                );
            }

            entries.push(ExplainEntry {
                index: manifest_index,
                image: test_m.records()[manifest_index].path.clone(),
                true_class: taxonomy.name(batch.y[i]).to_string(),
                predicted_class: taxonomy.name(predicted[i]).to_string(),
                target_class: taxonomy.name(targets[i]).to_string(),
                input_file: input_name,
                maps,
            });
        }

        let report = ExplainReport { stage: stage_kind.as_str().to_string(), entries };
        let report_path = paths.explain_dir().join("report.json");
        write_json(&report_path, &report)?;
        artifacts.push(report_path);
        Ok((report, artifacts))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;
    use tempfile::TempDir;

    /// Desk-scale config against a temp directory: 2 classes x 12 images at
    /// 32x32, balanced to 16, two epochs everywhere.
    fn tiny_cfg(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::defaults(Profile::Tiny);
        cfg.root = dir.join("data");
        cfg.out_dir = dir.join("runs");
        cfg.synthetic_kind = crate::data::SyntheticKind::BrightQuadrant;
        cfg.synthetic_classes = 4;
        cfg.synthetic_per_class = 12;
        cfg.balance_target = 16;
        cfg.batch_size = 8;
        cfg.ssl_epochs = 2;
        cfg.probe_epochs = 2;
        cfg.finetune_epochs = 2;
        cfg.embed_max_points = 12;
        cfg.embed_perplexity = 2.0;
        cfg.embed_iters = 60;
        cfg.explain_count = 2;
        cfg.workers = 1;
        cfg
    }

    #[test]
    fn full_pipeline_produces_every_artifact() {
        let dir = TempDir::new().unwrap();
        let cfg = tiny_cfg(dir.path());
        let paths = RunPaths::new(&cfg);

        let prep = cmd_prepare(&cfg).unwrap();
        assert_eq!(prep.counts_after, vec![16; 4]);
        assert_eq!(prep.train_total + prep.val_total + prep.test_total, 64);
        assert!(paths.manifest("train").exists());

        let pre = cmd_pretrain(&cfg).unwrap();
        assert_eq!(pre.curve.len(), 2);
        assert!(paths.checkpoint("pretrain").exists());
        assert!(paths.curve_csv("pretrain").exists());

        let probe = cmd_probe(&cfg, ProbeInit::Pretrained).unwrap();
        assert!(probe.val.total > 0);
        let control = cmd_probe(&cfg, ProbeInit::Random).unwrap();
        assert!(paths.checkpoint("probe").exists());
        assert!(paths.checkpoint("probe-random").exists());
        assert!(control.val.accuracy >= 0.0);

        let ft = cmd_finetune(&cfg).unwrap();
        assert_eq!(ft.outcome.curve.len(), 2);

        let eval = cmd_evaluate(&cfg, ClassifierStage::Finetune).unwrap();
        assert_eq!(eval.total, prep.test_total);
        assert!(paths.report("evaluate-finetune").exists());

        let emb = cmd_embed(&cfg).unwrap();
        assert_eq!(emb.points, 12.min(prep.test_total));
        assert!(paths.embed_dir().join("coords.csv").exists());

        let exp = cmd_explain(&cfg, ClassifierStage::Finetune).unwrap();
        assert_eq!(exp.entries.len(), 2);
        for entry in &exp.entries {
            assert_eq!(entry.maps.len(), 3);
            for stats in entry.maps.values() {
                assert!(paths.explain_dir().join(&stats.file).exists());
                assert!(stats.max >= stats.min);
            }
        }

        // the phase log saw everything
        let record: RunRecord =
            serde_json::from_str(&fs::read_to_string(paths.run_record()).unwrap()).unwrap();
        assert_eq!(record.config_hash, cfg.hash());
        let phases: Vec<&str> = record.phases.iter().map(|p| p.phase.as_str()).collect();
        assert_eq!(
            phases,
            [
                "prepare",
                "pretrain",
                "probe",
                "probe-random",
                "finetune",
                "evaluate-finetune",
                "embed",
                "explain-finetune"
            ]
        );
        // lock released after each stage
        assert!(!paths.root.join(".lock").exists());
    }

    #[test]
    fn stages_refuse_to_run_without_their_inputs() {
        let dir = TempDir::new().unwrap();
        let cfg = tiny_cfg(dir.path());
        let err = cmd_pretrain(&cfg).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { .. }), "{err}");
        let err = cmd_embed(&cfg).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { .. }), "{err}");

        cmd_prepare(&cfg).unwrap();
        // prepared but not pretrained: probe over a pretrained encoder is
        // still missing its checkpoint
        let err = cmd_probe(&cfg, ProbeInit::Pretrained).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { ref stage, .. } if stage == "pretrain"));
    }

    #[test]
    fn concurrent_stage_is_locked_out() {
        let dir = TempDir::new().unwrap();
        let cfg = tiny_cfg(dir.path());
        let paths = RunPaths::new(&cfg);
        fs::create_dir_all(&paths.root).unwrap();
        let _held = RunLock::acquire(&paths.root).unwrap();
        let err = cmd_prepare(&cfg).unwrap_err();
        assert!(matches!(err, Error::Locked(_)), "{err}");
    }

    #[test]
    fn rerunning_prepare_is_byte_identical() {
        let dir = TempDir::new().unwrap();
        let cfg = tiny_cfg(dir.path());
        cmd_prepare(&cfg).unwrap();
        let first = fs::read(RunPaths::new(&cfg).manifest("train")).unwrap();
        cmd_prepare(&cfg).unwrap();
        let second = fs::read(RunPaths::new(&cfg).manifest("train")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn run_dirs_are_keyed_by_config() {
        let dir = TempDir::new().unwrap();
        let a = tiny_cfg(dir.path());
        let mut b = a.clone();
        b.seed = 99;
        assert_ne!(RunPaths::new(&a).root, RunPaths::new(&b).root);
    }
}
