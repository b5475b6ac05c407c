//! Flat key-value experiment configuration.
//!
//! One file drives every stage. The format is deliberately dumb: one
//! `key = value` pair per line, full-line `#` comments, no nesting, no
//! quoting. Unknown keys and duplicate keys are hard errors so a typo in a
//! hyperparameter name cannot silently fall back to a default. The canonical
//! dump (`ExperimentConfig::dump`) is stable line-for-line and is what
//! `--print-config` emits; its SHA-256 (`ExperimentConfig::hash`) is stamped
//! into every artifact a run produces.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::{
    AugmentationConfig, FillMode, NormalizeSpec, SplitSpec, SyntheticKind, SyntheticSpec,
    DEFAULT_BALANCE_TARGET,
};
use crate::embed::TsneConfig;
use crate::nn::{EncoderKind, EncoderSpec};
use crate::saliency::CamMethod;
use crate::train::{
    FitConfig, SslHyper, SslMethod, DEFAULT_BATCH_SIZE, DEFAULT_CENTER_MOMENTUM,
    DEFAULT_EMA_MOMENTUM, DEFAULT_EVAL_EPOCHS, DEFAULT_MIN_DELTA, DEFAULT_PATIENCE,
    DEFAULT_SSL_EPOCHS, DEFAULT_STUDENT_TEMP, DEFAULT_TEACHER_TEMP,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Published-scale settings: 224x224 encoder, directory dataset, full
    /// epoch budgets.
    Paper,
    /// Desk-scale settings: 32x32 encoder, synthetic data, short budgets;
    /// exercises the identical code path in minutes.
    Tiny,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Tiny => "tiny",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "paper" => Ok(Profile::Paper),
            "tiny" => Ok(Profile::Tiny),
            other => Err(Error::InvalidConfig(format!("unknown profile `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Directory,
    Synthetic,
}

impl DataSource {
    fn as_str(self) -> &'static str {
        match self {
            DataSource::Directory => "directory",
            DataSource::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplainTarget {
    /// Explain the class the model predicts (the default; matches how the
    /// maps are usually read).
    Predicted,
    /// Explain the labeled class regardless of the prediction.
    True,
}

impl ExplainTarget {
    fn as_str(self) -> &'static str {
        match self {
            ExplainTarget::Predicted => "predicted",
            ExplainTarget::True => "true",
        }
    }
}

/// The four per-method learning-rate/decay columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodHyper {
    pub pretrain_lr: f64,
    pub probe_lr: f64,
    pub finetune_lr: f64,
    pub weight_decay: f64,
}

impl MethodHyper {
    fn for_method(m: SslMethod) -> Self {
        MethodHyper {
            pretrain_lr: m.pretrain_lr(),
            probe_lr: m.probe_lr(),
            finetune_lr: m.finetune_lr(),
            weight_decay: m.weight_decay(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    pub source: DataSource,
    pub root: PathBuf,
    /// `brain-mri`, `synthetic`, or a path to a one-class-per-line file.
    pub taxonomy: String,
    pub balance_target: usize,
    pub workers: usize,
    pub normalize_mean: f64,
    pub normalize_std: f64,

    pub synthetic_kind: SyntheticKind,
    pub synthetic_classes: usize,
    pub synthetic_per_class: usize,
    pub synthetic_noise_std: f64,

    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,

    pub augment: AugmentationConfig,
    pub crop_scale: (f64, f64),
    pub blur_sigma: (f64, f64),

    pub encoder_kind: EncoderKind,

    pub method: SslMethod,
    pub batch_size: usize,
    pub ssl_epochs: usize,
    pub probe_epochs: usize,
    pub finetune_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub ema_momentum: f64,
    pub center_momentum: f64,

    pub simclr: MethodHyper,
    pub byol: MethodHyper,
    pub dino: MethodHyper,
    pub moco: MethodHyper,
    pub simclr_temperature: f64,
    pub moco_temperature: f64,
    pub dino_student_temperature: f64,
    pub dino_teacher_temperature: f64,

    pub embed_perplexity: f64,
    pub embed_iters: usize,
    pub embed_max_points: usize,
    /// 0 = one cluster per class.
    pub embed_clusters: usize,

    pub explain_methods: Vec<CamMethod>,
    pub explain_count: usize,
    pub explain_target: ExplainTarget,
}

impl ExperimentConfig {
    pub fn defaults(profile: Profile) -> Self {
        let mut cfg = ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            source: DataSource::Directory,
            root: PathBuf::from("data"),
            taxonomy: "brain-mri".into(),
            balance_target: DEFAULT_BALANCE_TARGET,
            workers: 4,
            normalize_mean: 0.5,
            normalize_std: 0.5,
            synthetic_kind: SyntheticKind::Rings,
            synthetic_classes: 4,
            synthetic_per_class: 50,
            synthetic_noise_std: 0.06,
            train_frac: 0.8,
            val_frac: 0.1,
            test_frac: 0.1,
            augment: AugmentationConfig::default(),
            crop_scale: (0.5, 1.0),
            blur_sigma: (0.1, 2.0),
            encoder_kind: EncoderKind::Resnet50,
            method: SslMethod::SimClr,
            batch_size: DEFAULT_BATCH_SIZE,
            ssl_epochs: DEFAULT_SSL_EPOCHS,
            probe_epochs: DEFAULT_EVAL_EPOCHS,
            finetune_epochs: DEFAULT_EVAL_EPOCHS,
            patience: DEFAULT_PATIENCE,
            min_delta: DEFAULT_MIN_DELTA,
            ema_momentum: DEFAULT_EMA_MOMENTUM,
            center_momentum: DEFAULT_CENTER_MOMENTUM,
            simclr: MethodHyper::for_method(SslMethod::SimClr),
            byol: MethodHyper::for_method(SslMethod::Byol),
            dino: MethodHyper::for_method(SslMethod::Dino),
            moco: MethodHyper::for_method(SslMethod::MocoV3),
            simclr_temperature: SslMethod::SimClr.temperature(),
            moco_temperature: SslMethod::MocoV3.temperature(),
            dino_student_temperature: DEFAULT_STUDENT_TEMP,
            dino_teacher_temperature: DEFAULT_TEACHER_TEMP,
            embed_perplexity: 30.0,
            embed_iters: 1000,
            embed_max_points: 2000,
            embed_clusters: 0,
            explain_methods: CamMethod::ALL.to_vec(),
            explain_count: 8,
            explain_target: ExplainTarget::Predicted,
        };
        if profile == Profile::Tiny {
            cfg.source = DataSource::Synthetic;
            cfg.taxonomy = "synthetic".into();
            cfg.balance_target = 50;
            cfg.encoder_kind = EncoderKind::Tiny;
            cfg.ssl_epochs = 10;
            cfg.probe_epochs = 10;
            cfg.finetune_epochs = 10;
            cfg.embed_max_points = 400;
            cfg.explain_count = 4;
        }
        cfg
    }

    /// Defaults for `profile`, overridden by the file's key-value pairs.
    pub fn from_file(path: &Path, profile: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::defaults(profile);
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Apply `key = value` lines on top of the current values. Unknown keys,
    /// duplicate keys, and malformed lines are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if value.is_empty() {
                return Err(Error::InvalidConfig(format!("key `{key}` has an empty value")));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::InvalidConfig(format!("duplicate config key `{key}`")));
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Set one key. The key set is closed; anything else is an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment.seed" => self.seed = u64_of(key, value)?,
            "experiment.out_dir" => self.out_dir = PathBuf::from(value),

            "data.source" => {
                self.source = match value {
                    "directory" => DataSource::Directory,
                    "synthetic" => DataSource::Synthetic,
                    _ => return Err(bad_value(key, value, "directory|synthetic")),
                }
            }
            "data.root" => self.root = PathBuf::from(value),
            "data.taxonomy" => self.taxonomy = value.to_string(),
            "data.balance_target" => self.balance_target = usize_of(key, value)?,
            "data.workers" => self.workers = usize_of(key, value)?,
            "data.normalize_mean" => self.normalize_mean = f64_of(key, value)?,
            "data.normalize_std" => self.normalize_std = f64_of(key, value)?,

            "synthetic.kind" => {
                self.synthetic_kind = match value {
                    "rings" => SyntheticKind::Rings,
                    "bright-quadrant" => SyntheticKind::BrightQuadrant,
                    _ => return Err(bad_value(key, value, "rings|bright-quadrant")),
                }
            }
            "synthetic.classes" => self.synthetic_classes = usize_of(key, value)?,
            "synthetic.per_class" => self.synthetic_per_class = usize_of(key, value)?,
            "synthetic.noise_std" => self.synthetic_noise_std = f64_of(key, value)?,

            "split.train_frac" => self.train_frac = f64_of(key, value)?,
            "split.val_frac" => self.val_frac = f64_of(key, value)?,
            "split.test_frac" => self.test_frac = f64_of(key, value)?,

            "augment.rotation_deg" => self.augment.rotation_deg = f64_of(key, value)?,
            "augment.width_shift_frac" => self.augment.width_shift_frac = f64_of(key, value)?,
            "augment.height_shift_frac" => self.augment.height_shift_frac = f64_of(key, value)?,
            "augment.zoom_frac" => self.augment.zoom_frac = f64_of(key, value)?,
            "augment.horizontal_flip" => self.augment.horizontal_flip = bool_of(key, value)?,
            "augment.brightness_lo" => self.augment.brightness_range.0 = f64_of(key, value)?,
            "augment.brightness_hi" => self.augment.brightness_range.1 = f64_of(key, value)?,
            "augment.fill_mode" => {
                self.augment.fill_mode = match value {
                    "nearest" => FillMode::Nearest,
                    _ => return Err(bad_value(key, value, "nearest")),
                }
            }

            "view.crop_scale_lo" => self.crop_scale.0 = f64_of(key, value)?,
            "view.crop_scale_hi" => self.crop_scale.1 = f64_of(key, value)?,
            "view.blur_sigma_lo" => self.blur_sigma.0 = f64_of(key, value)?,
            "view.blur_sigma_hi" => self.blur_sigma.1 = f64_of(key, value)?,

            "encoder.kind" => {
                self.encoder_kind = match value {
                    "resnet50" | "resnet-50" => EncoderKind::Resnet50,
                    "tiny" => EncoderKind::Tiny,
                    _ => return Err(bad_value(key, value, "resnet50|tiny")),
                }
            }

            "method.name" => self.method = SslMethod::parse(value)?,
            "train.batch_size" => self.batch_size = usize_of(key, value)?,
            "train.ssl_epochs" => self.ssl_epochs = usize_of(key, value)?,
            "train.probe_epochs" => self.probe_epochs = usize_of(key, value)?,
            "train.finetune_epochs" => self.finetune_epochs = usize_of(key, value)?,
            "train.optimizer" => {
                if value != "adamw" {
                    return Err(bad_value(key, value, "adamw"));
                }
            }
            "train.loss" => {
                if value != "cross-entropy" {
                    return Err(bad_value(key, value, "cross-entropy"));
                }
            }
            "train.patience" => self.patience = usize_of(key, value)?,
            "train.min_delta" => self.min_delta = f64_of(key, value)?,
            "train.ema_momentum" => self.ema_momentum = f64_of(key, value)?,

            "simclr.pretrain_lr" => self.simclr.pretrain_lr = f64_of(key, value)?,
            "simclr.probe_lr" => self.simclr.probe_lr = f64_of(key, value)?,
            "simclr.finetune_lr" => self.simclr.finetune_lr = f64_of(key, value)?,
            "simclr.weight_decay" => self.simclr.weight_decay = f64_of(key, value)?,
            "simclr.temperature" => self.simclr_temperature = f64_of(key, value)?,

            "byol.pretrain_lr" => self.byol.pretrain_lr = f64_of(key, value)?,
            "byol.probe_lr" => self.byol.probe_lr = f64_of(key, value)?,
            "byol.finetune_lr" => self.byol.finetune_lr = f64_of(key, value)?,
            "byol.weight_decay" => self.byol.weight_decay = f64_of(key, value)?,

            "dino.pretrain_lr" => self.dino.pretrain_lr = f64_of(key, value)?,
            "dino.probe_lr" => self.dino.probe_lr = f64_of(key, value)?,
            "dino.finetune_lr" => self.dino.finetune_lr = f64_of(key, value)?,
            "dino.weight_decay" => self.dino.weight_decay = f64_of(key, value)?,
            "dino.student_temperature" => self.dino_student_temperature = f64_of(key, value)?,
            "dino.teacher_temperature" => self.dino_teacher_temperature = f64_of(key, value)?,
            "dino.center_momentum" => self.center_momentum = f64_of(key, value)?,

            "moco-v3.pretrain_lr" => self.moco.pretrain_lr = f64_of(key, value)?,
            "moco-v3.probe_lr" => self.moco.probe_lr = f64_of(key, value)?,
            "moco-v3.finetune_lr" => self.moco.finetune_lr = f64_of(key, value)?,
            "moco-v3.weight_decay" => self.moco.weight_decay = f64_of(key, value)?,
            "moco-v3.temperature" => self.moco_temperature = f64_of(key, value)?,

            "embed.perplexity" => self.embed_perplexity = f64_of(key, value)?,
            "embed.iters" => self.embed_iters = usize_of(key, value)?,
            "embed.max_points" => self.embed_max_points = usize_of(key, value)?,
            "embed.clusters" => self.embed_clusters = usize_of(key, value)?,

            "explain.methods" => {
                let methods: Result<Vec<CamMethod>> =
                    value.split(',').map(|m| CamMethod::parse(m.trim())).collect();
                let methods = methods?;
                if methods.is_empty() {
                    return Err(bad_value(key, value, "comma-separated CAM methods"));
                }
                self.explain_methods = methods;
            }
            "explain.count" => self.explain_count = usize_of(key, value)?,
            "explain.target" => {
                self.explain_target = match value {
                    "predicted" => ExplainTarget::Predicted,
                    "true" => ExplainTarget::True,
                    _ => return Err(bad_value(key, value, "predicted|true")),
                }
            }

            _ => return Err(Error::InvalidConfig(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Canonical dump: every key, grouped, in a fixed order. Parsing the
    /// dump back reproduces the config exactly.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "# run identity");
        let _ = writeln!(w, "experiment.seed = {}", self.seed);
        let _ = writeln!(w, "experiment.out_dir = {}", self.out_dir.display());
        let _ = writeln!(w, "\n# data source");
        let _ = writeln!(w, "data.source = {}", self.source.as_str());
        let _ = writeln!(w, "data.root = {}", self.root.display());
        let _ = writeln!(w, "data.taxonomy = {}", self.taxonomy);
        let _ = writeln!(w, "data.balance_target = {}", self.balance_target);
        let _ = writeln!(w, "data.workers = {}", self.workers);
        let _ = writeln!(w, "data.normalize_mean = {}", self.normalize_mean);
        let _ = writeln!(w, "data.normalize_std = {}", self.normalize_std);
        let _ = writeln!(w, "\n# synthetic generator");
        let kind = match self.synthetic_kind {
            SyntheticKind::Rings => "rings",
            SyntheticKind::BrightQuadrant => "bright-quadrant",
        };
        let _ = writeln!(w, "synthetic.kind = {kind}");
        let _ = writeln!(w, "synthetic.classes = {}", self.synthetic_classes);
        let _ = writeln!(w, "synthetic.per_class = {}", self.synthetic_per_class);
        let _ = writeln!(w, "synthetic.noise_std = {}", self.synthetic_noise_std);
        let _ = writeln!(w, "\n# split");
        let _ = writeln!(w, "split.train_frac = {}", self.train_frac);
        let _ = writeln!(w, "split.val_frac = {}", self.val_frac);
        let _ = writeln!(w, "split.test_frac = {}", self.test_frac);
        let _ = writeln!(w, "\n# augmentation (balancing + supervised training)");
        let _ = writeln!(w, "augment.rotation_deg = {}", self.augment.rotation_deg);
        let _ = writeln!(w, "augment.width_shift_frac = {}", self.augment.width_shift_frac);
        let _ = writeln!(w, "augment.height_shift_frac = {}", self.augment.height_shift_frac);
        let _ = writeln!(w, "augment.zoom_frac = {}", self.augment.zoom_frac);
        let _ = writeln!(w, "augment.horizontal_flip = {}", self.augment.horizontal_flip);
        let _ = writeln!(w, "augment.brightness_lo = {}", self.augment.brightness_range.0);
        let _ = writeln!(w, "augment.brightness_hi = {}", self.augment.brightness_range.1);
        let _ = writeln!(w, "augment.fill_mode = nearest");
        let _ = writeln!(w, "\n# extra augmentation for SSL view pairs");
        let _ = writeln!(w, "view.crop_scale_lo = {}", self.crop_scale.0);
        let _ = writeln!(w, "view.crop_scale_hi = {}", self.crop_scale.1);
        let _ = writeln!(w, "view.blur_sigma_lo = {}", self.blur_sigma.0);
        let _ = writeln!(w, "view.blur_sigma_hi = {}", self.blur_sigma.1);
        let _ = writeln!(w, "\n# encoder");
        let _ = writeln!(w, "encoder.kind = {}", self.encoder_kind.as_str());
        let _ = writeln!(w, "\n# training schedule");
        let _ = writeln!(w, "method.name = {}", self.method.as_str());
        let _ = writeln!(w, "train.batch_size = {}", self.batch_size);
        let _ = writeln!(w, "train.ssl_epochs = {}", self.ssl_epochs);
        let _ = writeln!(w, "train.probe_epochs = {}", self.probe_epochs);
        let _ = writeln!(w, "train.finetune_epochs = {}", self.finetune_epochs);
        let _ = writeln!(w, "train.optimizer = adamw");
        let _ = writeln!(w, "train.loss = cross-entropy");
        let _ = writeln!(w, "train.patience = {}", self.patience);
        let _ = writeln!(w, "train.min_delta = {}", self.min_delta);
        let _ = writeln!(w, "train.ema_momentum = {}", self.ema_momentum);
        let _ = writeln!(w, "\n# per-method hyperparameters");
        let _ = writeln!(w, "simclr.pretrain_lr = {}", self.simclr.pretrain_lr);
        let _ = writeln!(w, "simclr.probe_lr = {}", self.simclr.probe_lr);
        let _ = writeln!(w, "simclr.finetune_lr = {}", self.simclr.finetune_lr);
        let _ = writeln!(w, "simclr.weight_decay = {}", self.simclr.weight_decay);
        let _ = writeln!(w, "simclr.temperature = {}", self.simclr_temperature);
        let _ = writeln!(w, "byol.pretrain_lr = {}", self.byol.pretrain_lr);
        let _ = writeln!(w, "byol.probe_lr = {}", self.byol.probe_lr);
        let _ = writeln!(w, "byol.finetune_lr = {}", self.byol.finetune_lr);
        let _ = writeln!(w, "byol.weight_decay = {}", self.byol.weight_decay);
        let _ = writeln!(w, "dino.pretrain_lr = {}", self.dino.pretrain_lr);
        let _ = writeln!(w, "dino.probe_lr = {}", self.dino.probe_lr);
        let _ = writeln!(w, "dino.finetune_lr = {}", self.dino.finetune_lr);
        let _ = writeln!(w, "dino.weight_decay = {}", self.dino.weight_decay);
        let _ = writeln!(w, "dino.student_temperature = {}", self.dino_student_temperature);
        let _ = writeln!(w, "dino.teacher_temperature = {}", self.dino_teacher_temperature);
        let _ = writeln!(w, "dino.center_momentum = {}", self.center_momentum);
        let _ = writeln!(w, "moco-v3.pretrain_lr = {}", self.moco.pretrain_lr);
        let _ = writeln!(w, "moco-v3.probe_lr = {}", self.moco.probe_lr);
        let _ = writeln!(w, "moco-v3.finetune_lr = {}", self.moco.finetune_lr);
        let _ = writeln!(w, "moco-v3.weight_decay = {}", self.moco.weight_decay);
        let _ = writeln!(w, "moco-v3.temperature = {}", self.moco_temperature);
        let _ = writeln!(w, "\n# projection diagnostics");
        let _ = writeln!(w, "embed.perplexity = {}", self.embed_perplexity);
        let _ = writeln!(w, "embed.iters = {}", self.embed_iters);
        let _ = writeln!(w, "embed.max_points = {}", self.embed_max_points);
        let _ = writeln!(w, "embed.clusters = {}", self.embed_clusters);
        let _ = writeln!(w, "\n# saliency");
        let methods: Vec<&str> = self.explain_methods.iter().map(|m| m.as_str()).collect();
        let _ = writeln!(w, "explain.methods = {}", methods.join(","));
        let _ = writeln!(w, "explain.count = {}", self.explain_count);
        let _ = writeln!(w, "explain.target = {}", self.explain_target.as_str());
        s
    }

    /// SHA-256 of the canonical dump, lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.dump().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut acc, b| {
            let _ = write!(acc, "{b:02x}");
            acc
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.view_augmentation().validate()?;
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("train.batch_size must be at least 2".into()));
        }
        if self.balance_target == 0 {
            return Err(Error::InvalidConfig("data.balance_target must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("data.workers must be at least 1".into()));
        }
        let frac_sum = self.train_frac + self.val_frac + self.test_frac;
        if (frac_sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions must sum to 1, got {frac_sum}"
            )));
        }
        if self.synthetic_kind == SyntheticKind::BrightQuadrant && self.synthetic_classes != 4 {
            return Err(Error::InvalidConfig(
                "synthetic.kind = bright-quadrant implies synthetic.classes = 4".into(),
            ));
        }
        if self.explain_count == 0 {
            return Err(Error::InvalidConfig("explain.count must be at least 1".into()));
        }
        self.ssl_hyper().validate()?;
        self.tsne_config().validate()?;
        Ok(())
    }

    // ---- derived views ----

    pub fn encoder_spec(&self) -> EncoderSpec {
        match self.encoder_kind {
            EncoderKind::Resnet50 => EncoderSpec::resnet50(),
            EncoderKind::Tiny => EncoderSpec::tiny(),
        }
    }

    pub fn resolution(&self) -> usize {
        self.encoder_spec().input_resolution
    }

    /// The two-view sampler config: base augmentation plus crop and blur.
    pub fn view_augmentation(&self) -> AugmentationConfig {
        AugmentationConfig {
            gaussian_blur: Some(self.blur_sigma),
            random_resized_crop: Some(self.crop_scale),
            ..self.augment.clone()
        }
    }

    pub fn normalize_spec(&self) -> NormalizeSpec {
        NormalizeSpec { mean: self.normalize_mean, std: self.normalize_std }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_frac: self.train_frac,
            val_frac: self.val_frac,
            test_frac: self.test_frac,
            seed: self.seed,
        }
    }

    pub fn method_hyper(&self, method: SslMethod) -> MethodHyper {
        match method {
            SslMethod::SimClr => self.simclr,
            SslMethod::Byol => self.byol,
            SslMethod::Dino => self.dino,
            SslMethod::MocoV3 => self.moco,
        }
    }

    pub fn ssl_hyper(&self) -> SslHyper {
        let mh = self.method_hyper(self.method);
        let temperature = match self.method {
            SslMethod::SimClr => self.simclr_temperature,
            SslMethod::MocoV3 => self.moco_temperature,
            other => other.temperature(),
        };
        SslHyper {
            method: self.method,
            lr: mh.pretrain_lr,
            weight_decay: mh.weight_decay,
            temperature,
            student_temp: self.dino_student_temperature,
            teacher_temp: self.dino_teacher_temperature,
            ema_momentum: self.ema_momentum,
            center_momentum: self.center_momentum,
            epochs: self.ssl_epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            min_delta: self.min_delta,
        }
    }

    pub fn probe_fit(&self) -> FitConfig {
        let mh = self.method_hyper(self.method);
        FitConfig {
            lr: mh.probe_lr,
            weight_decay: mh.weight_decay,
            epochs: self.probe_epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            min_delta: self.min_delta,
            seed: self.seed,
        }
    }

    pub fn finetune_fit(&self) -> FitConfig {
        let mh = self.method_hyper(self.method);
        FitConfig {
            lr: mh.finetune_lr,
            weight_decay: mh.weight_decay,
            epochs: self.finetune_epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            min_delta: self.min_delta,
            seed: self.seed,
        }
    }

    pub fn tsne_config(&self) -> TsneConfig {
        TsneConfig {
            perplexity: self.embed_perplexity,
            iters: self.embed_iters,
            seed: self.seed,
            ..TsneConfig::default()
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let res = self.resolution();
        let mut spec = match self.synthetic_kind {
            SyntheticKind::Rings => SyntheticSpec::rings(
                self.synthetic_classes,
                self.synthetic_per_class,
                res,
                self.seed,
            ),
            SyntheticKind::BrightQuadrant => {
                SyntheticSpec::bright_quadrant(self.synthetic_per_class, res, self.seed)
            }
        };
        spec.noise_std = self.synthetic_noise_std;
        spec
    }
}

fn bad_value(key: &str, value: &str, expected: &str) -> Error {
    Error::InvalidConfig(format!("key `{key}` expects {expected}, got `{value}`"))
}

fn f64_of(key: &str, value: &str) -> Result<f64> {
    value.parse().map_err(|_| bad_value(key, value, "a number"))
}

fn usize_of(key: &str, value: &str) -> Result<usize> {
    value.parse().map_err(|_| bad_value(key, value, "a non-negative integer"))
}

fn u64_of(key: &str, value: &str) -> Result<u64> {
    value.parse().map_err(|_| bad_value(key, value, "a non-negative integer"))
}

fn bool_of(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_value(key, value, "true|false")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_encode_the_published_table() {
        let cfg = ExperimentConfig::defaults(Profile::Paper);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.workers, 4);
        assert_eq!(cfg.ssl_epochs, 80);
        assert_eq!(cfg.probe_epochs, 50);
        assert_eq!(cfg.finetune_epochs, 50);
        assert_eq!(cfg.patience, 10);
        assert_eq!(cfg.simclr.pretrain_lr, 3e-4);
        assert_eq!(cfg.byol.pretrain_lr, 1e-4);
        assert_eq!(cfg.dino.pretrain_lr, 1e-4);
        assert_eq!(cfg.moco.pretrain_lr, 1e-3);
        assert_eq!(cfg.moco.probe_lr, 3e-3);
        assert_eq!(cfg.dino.probe_lr, 3e-3);
        assert_eq!(cfg.byol.probe_lr, 1e-3);
        assert_eq!(cfg.simclr.probe_lr, 1e-3);
        assert_eq!(cfg.moco.finetune_lr, 5e-4);
        assert_eq!(cfg.dino.finetune_lr, 1e-4);
        assert_eq!(cfg.byol.finetune_lr, 1e-4);
        assert_eq!(cfg.simclr.finetune_lr, 1e-3);
        assert_eq!(cfg.simclr.weight_decay, 1e-6);
        assert_eq!(cfg.dino.weight_decay, 1e-6);
        assert_eq!(cfg.byol.weight_decay, 1e-4);
        assert_eq!(cfg.moco.weight_decay, 1e-4);
        assert_eq!(cfg.simclr_temperature, 0.5);
        assert_eq!(cfg.moco_temperature, 0.2);
        assert_eq!(cfg.dino_student_temperature, 0.1);
        assert_eq!(cfg.dino_teacher_temperature, 0.04);
        assert_eq!(cfg.balance_target, 625);
        assert_eq!(cfg.augment.rotation_deg, 20.0);
        assert_eq!(cfg.augment.brightness_range, (0.8, 1.2));
        cfg.validate().unwrap();
    }

    #[test]
    fn tiny_profile_swaps_scale_not_hyperparameters() {
        let cfg = ExperimentConfig::defaults(Profile::Tiny);
        assert_eq!(cfg.encoder_kind, EncoderKind::Tiny);
        assert_eq!(cfg.source, DataSource::Synthetic);
        assert_eq!(cfg.ssl_epochs, 10);
        // method hyperparameters stay at published values
        assert_eq!(cfg.simclr.pretrain_lr, 3e-4);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.resolution(), 32);
        cfg.validate().unwrap();
    }

    #[test]
    fn dump_parses_back_to_the_same_config() {
        let cfg = ExperimentConfig::defaults(Profile::Paper);
        let mut reparsed = ExperimentConfig::defaults(Profile::Paper);
        reparsed.apply_text(&cfg.dump()).unwrap();
        assert_eq!(cfg, reparsed);
        // and the dump itself is stable
        assert_eq!(cfg.dump(), reparsed.dump());
    }

    #[test]
    fn overrides_land_on_the_right_field() {
        let mut cfg = ExperimentConfig::defaults(Profile::Paper);
        cfg.apply_text(
            "# comment\n\nmethod.name = dino\ntrain.batch_size = 16\nsimclr.finetune_lr = 0.0001\n",
        )
        .unwrap();
        assert_eq!(cfg.method, SslMethod::Dino);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.simclr.finetune_lr, 1e-4);
    }

    #[test]
    fn unknown_duplicate_and_malformed_keys_are_errors() {
        let mut cfg = ExperimentConfig::defaults(Profile::Paper);
        let err = cfg.apply_text("train.batchsize = 32\n").unwrap_err();
        assert!(err.to_string().contains("train.batchsize"), "{err}");
        let err = cfg.apply_text("train.patience = 5\ntrain.patience = 6\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        assert!(cfg.apply_text("just some words\n").is_err());
        assert!(cfg.apply_text("train.patience = soon\n").is_err());
        assert!(cfg.apply_text("train.optimizer = sgd\n").is_err());
        assert!(cfg.apply_text("explain.methods = grad-cam,shap\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::defaults(Profile::Paper);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.set("experiment.seed", "7").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn derived_hyper_blocks_follow_the_active_method() {
        let mut cfg = ExperimentConfig::defaults(Profile::Paper);
        for (name, lr, wd) in [
            ("simclr", 3e-4, 1e-6),
            ("byol", 1e-4, 1e-4),
            ("dino", 1e-4, 1e-6),
            ("moco-v3", 1e-3, 1e-4),
        ] {
            cfg.set("method.name", name).unwrap();
            let hyper = cfg.ssl_hyper();
            assert_eq!(hyper.lr, lr, "{name}");
            assert_eq!(hyper.weight_decay, wd, "{name}");
            assert_eq!(hyper.epochs, 80);
            hyper.validate().unwrap();
        }
        cfg.set("method.name", "simclr").unwrap();
        assert_eq!(cfg.probe_fit().lr, 1e-3);
        assert_eq!(cfg.finetune_fit().lr, 1e-3);
        assert_eq!(cfg.probe_fit().epochs, 50);
    }

    #[test]
    fn split_fraction_drift_is_caught() {
        let mut cfg = ExperimentConfig::defaults(Profile::Paper);
        cfg.set("split.train_frac", "0.9").unwrap();
        assert!(cfg.validate().is_err());
    }
}
