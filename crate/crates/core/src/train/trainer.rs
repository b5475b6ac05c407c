//! Phase drivers: self-supervised pretraining, linear probing on frozen
//! features, full fine-tuning, and held-out evaluation.
//!
//! Every phase shares the same skeleton — seeded epoch order, AdamW, a
//! validation pass in inference mode, early stopping, and restoration of the
//! best-validation weights (buffers included) before returning.

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, Array4, ArrayViewD, ArrayViewMutD, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{AugmentationConfig, Loader, TwoViewBatch};
use crate::nn::{
    join, load_named_tensors, named_tensors, softmax, tensor_checksum, ClassifierHead,
    ConvEncoder, EncoderSpec, MlpHead, Mode, Module, TensorKind,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::ssl::{
    byol_loss, dino_center_update, dino_loss, l2_normalize_backward, l2_normalize_rows,
    moco_v3_loss, nt_xent_loss, CenterState, EmbeddingBatch, ParamMap,
};
use crate::train::early_stop::{EarlyStopping, DEFAULT_MIN_DELTA, DEFAULT_PATIENCE};
use crate::train::loss::{cross_entropy, softmax_backward};
use crate::train::metrics::{compute_metrics, MetricsReport};
use crate::train::optim::AdamW;
use crate::{Error, Result};

pub const DEFAULT_SSL_EPOCHS: usize = 80;
pub const DEFAULT_EVAL_EPOCHS: usize = 50;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_EMA_MOMENTUM: f64 = 0.996;
pub const DEFAULT_CENTER_MOMENTUM: f64 = 0.9;
pub const DEFAULT_STUDENT_TEMP: f64 = 0.1;
pub const DEFAULT_TEACHER_TEMP: f64 = 0.04;

/// The four pretraining objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SslMethod {
    #[serde(rename = "simclr")]
    SimClr,
    #[serde(rename = "byol")]
    Byol,
    #[serde(rename = "dino")]
    Dino,
    #[serde(rename = "moco-v3")]
    MocoV3,
}

impl SslMethod {
    pub const ALL: [SslMethod; 4] =
        [SslMethod::SimClr, SslMethod::Byol, SslMethod::Dino, SslMethod::MocoV3];

    pub fn as_str(&self) -> &'static str {
        match self {
            SslMethod::SimClr => "simclr",
            SslMethod::Byol => "byol",
            SslMethod::Dino => "dino",
            SslMethod::MocoV3 => "moco-v3",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simclr" => Ok(SslMethod::SimClr),
            "byol" => Ok(SslMethod::Byol),
            "dino" => Ok(SslMethod::Dino),
            "moco-v3" | "moco_v3" | "mocov3" | "moco" => Ok(SslMethod::MocoV3),
            other => Err(Error::InvalidConfig(format!(
                "unknown method {other:?} (expected simclr, byol, dino, or moco-v3)"
            ))),
        }
    }

    /// Whether the method keeps an EMA branch (target network / teacher /
    /// momentum encoder).
    pub fn uses_momentum_branch(self) -> bool {
        !matches!(self, SslMethod::SimClr)
    }

    /// Whether the online branch carries a prediction head on top of the
    /// projection.
    pub fn uses_prediction_head(self) -> bool {
        matches!(self, SslMethod::Byol | SslMethod::MocoV3)
    }

    pub fn pretrain_lr(self) -> f64 {
        match self {
            SslMethod::SimClr => 3e-4,
            SslMethod::Byol => 1e-4,
            SslMethod::Dino => 1e-4,
            SslMethod::MocoV3 => 1e-3,
        }
    }

    pub fn probe_lr(self) -> f64 {
        match self {
            SslMethod::SimClr => 1e-3,
            SslMethod::Byol => 1e-3,
            SslMethod::Dino => 3e-3,
            SslMethod::MocoV3 => 3e-3,
        }
    }

    pub fn finetune_lr(self) -> f64 {
        match self {
            SslMethod::SimClr => 1e-3,
            SslMethod::Byol => 1e-4,
            SslMethod::Dino => 1e-4,
            SslMethod::MocoV3 => 5e-4,
        }
    }

    pub fn weight_decay(self) -> f64 {
        match self {
            SslMethod::SimClr => 1e-6,
            SslMethod::Byol => 1e-4,
            SslMethod::Dino => 1e-6,
            SslMethod::MocoV3 => 1e-4,
        }
    }

    /// Contrastive temperature; unused by BYOL and by the distillation
    /// objective (which has its own student/teacher pair).
    pub fn temperature(self) -> f64 {
        match self {
            SslMethod::SimClr => 0.5,
            SslMethod::MocoV3 => 0.2,
            SslMethod::Byol | SslMethod::Dino => 0.5,
        }
    }
}

impl std::fmt::Display for SslMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SslMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SslMethod::parse(s)
    }
}

/// Pretraining hyperparameters; `for_method` fills the published defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SslHyper {
    pub method: SslMethod,
    pub lr: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    pub student_temp: f64,
    pub teacher_temp: f64,
    pub ema_momentum: f64,
    pub center_momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub min_delta: f64,
}

impl SslHyper {
    pub fn for_method(method: SslMethod) -> Self {
        SslHyper {
            method,
            lr: method.pretrain_lr(),
            weight_decay: method.weight_decay(),
            temperature: method.temperature(),
            student_temp: DEFAULT_STUDENT_TEMP,
            teacher_temp: DEFAULT_TEACHER_TEMP,
            ema_momentum: DEFAULT_EMA_MOMENTUM,
            center_momentum: DEFAULT_CENTER_MOMENTUM,
            epochs: DEFAULT_SSL_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            patience: DEFAULT_PATIENCE,
            min_delta: DEFAULT_MIN_DELTA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        for (name, t) in [
            ("temperature", self.temperature),
            ("student_temp", self.student_temp),
            ("teacher_temp", self.teacher_temp),
        ] {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {t}")));
            }
        }
        for (name, m) in [
            ("ema_momentum", self.ema_momentum),
            ("center_momentum", self.center_momentum),
        ] {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {m}")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "pretraining batches need at least 2 samples for negatives, got {}",
                self.batch_size
            )));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be at least 1".into()));
        }
        if !(self.min_delta.is_finite() && self.min_delta >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "min_delta must be non-negative, got {}",
                self.min_delta
            )));
        }
        Ok(())
    }
}

/// Supervised-phase hyperparameters (linear probe, fine-tune).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl FitConfig {
    pub fn probe_defaults(method: SslMethod) -> Self {
        FitConfig {
            lr: method.probe_lr(),
            weight_decay: method.weight_decay(),
            epochs: DEFAULT_EVAL_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            patience: DEFAULT_PATIENCE,
            min_delta: DEFAULT_MIN_DELTA,
            seed: 0,
        }
    }

    pub fn finetune_defaults(method: SslMethod) -> Self {
        FitConfig {
            lr: method.finetune_lr(),
            ..Self::probe_defaults(method)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be at least 1".into()));
        }
        if !(self.min_delta.is_finite() && self.min_delta >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "min_delta must be non-negative, got {}",
                self.min_delta
            )));
        }
        Ok(())
    }
}

/// One row of a loss curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochPoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub improved: bool,
}

/// What a training phase did: the full curve, the restored optimum, and
/// whether patience ran out before the epoch budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub curve: Vec<EpochPoint>,
    /// `(epoch, val_loss)` of the weights the model was restored to; `None`
    /// when no epoch ran.
    pub best: Option<(usize, f64)>,
    pub stopped_early: bool,
}

pub fn write_curve_csv(path: &Path, curve: &[EpochPoint]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,improved\n");
    for p in curve {
        out.push_str(&format!("{},{},{},{}\n", p.epoch, p.train_loss, p.val_loss, p.improved));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Online branch: encoder, projection head, and (BYOL / momentum-contrast
/// only) a prediction head.
#[derive(Debug, Clone)]
pub struct SslModel {
    pub method: SslMethod,
    pub encoder: ConvEncoder,
    pub projection: MlpHead,
    pub prediction: Option<MlpHead>,
}

impl SslModel {
    pub fn new(spec: EncoderSpec, method: SslMethod, seed: u64) -> Result<Self> {
        let mut enc_rng = rng_from_seed(derive_seed(seed, "encoder", 0));
        let encoder = ConvEncoder::new(spec, &mut enc_rng)?;
        let mut proj_rng = rng_from_seed(derive_seed(seed, "projection", 0));
        let projection = MlpHead::projection(encoder.feature_dim(), &mut proj_rng);
        let prediction = method.uses_prediction_head().then(|| {
            let mut pred_rng = rng_from_seed(derive_seed(seed, "prediction", 0));
            MlpHead::prediction(&mut pred_rng)
        });
        Ok(SslModel { method, encoder, projection, prediction })
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.feature_dim()
    }
}

impl Module for SslModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, ArrayViewD<'_, f64>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.projection.visit(&join(prefix, "projection"), f);
        if let Some(pred) = &self.prediction {
            pred.visit(&join(prefix, "prediction"), f);
        }
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, TensorKind, ArrayViewMutD<'_, f64>),
    ) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.projection.visit_mut(&join(prefix, "projection"), f);
        if let Some(pred) = &mut self.prediction {
            pred.visit_mut(&join(prefix, "prediction"), f);
        }
    }

    fn visit_trainable(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>, ArrayViewD<'_, f64>),
    ) {
        self.encoder.visit_trainable(&join(prefix, "encoder"), f);
        self.projection.visit_trainable(&join(prefix, "projection"), f);
        if let Some(pred) = &mut self.prediction {
            pred.visit_trainable(&join(prefix, "prediction"), f);
        }
    }

    fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.projection.zero_grad();
        if let Some(pred) = &mut self.prediction {
            pred.zero_grad();
        }
    }
}

/// Encoder plus softmax head, trained jointly during fine-tuning.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub encoder: ConvEncoder,
    pub head: ClassifierHead,
}

impl ClassifierModel {
    /// Random encoder and head (the from-scratch baseline).
    pub fn new(spec: EncoderSpec, num_classes: usize, seed: u64) -> Result<Self> {
        let mut enc_rng = rng_from_seed(derive_seed(seed, "encoder", 0));
        let encoder = ConvEncoder::new(spec, &mut enc_rng)?;
        Ok(Self::from_pretrained(encoder, num_classes, seed))
    }

    /// Fresh head on top of an existing (typically pretrained) encoder.
    pub fn from_pretrained(encoder: ConvEncoder, num_classes: usize, seed: u64) -> Self {
        let mut head_rng = rng_from_seed(derive_seed(seed, "classifier-head", 0));
        let head = ClassifierHead::new(encoder.feature_dim(), num_classes, &mut head_rng);
        ClassifierModel { encoder, head }
    }
}

impl Module for ClassifierModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, ArrayViewD<'_, f64>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, TensorKind, ArrayViewMutD<'_, f64>),
    ) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }

    fn visit_trainable(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>, ArrayViewD<'_, f64>),
    ) {
        self.encoder.visit_trainable(&join(prefix, "encoder"), f);
        self.head.visit_trainable(&join(prefix, "head"), f);
    }

    fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.head.zero_grad();
    }
}

/// Blend every tensor of `target` — weights and buffers alike — toward the
/// same-named entry of `online`: `t' = m t + (1 - m) o`. The key sets must
/// match exactly.
pub fn ema_blend<M: Module + ?Sized>(target: &mut M, online: &ParamMap, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InvalidConfig(format!("ema momentum must lie in [0, 1], got {m}")));
    }
    let mut failure: Option<Error> = None;
    let mut seen = 0usize;
    target.visit_mut("", &mut |name, _kind, mut view| {
        if failure.is_some() {
            return;
        }
        match online.get(name) {
            Some(src) if src.shape() == view.shape() => {
                view.zip_mut_with(src, |t, &o| *t = m * *t + (1.0 - m) * o);
                seen += 1;
            }
            Some(src) => {
                failure = Some(Error::ShapeMismatch {
                    context: "ema_blend",
                    expected: format!("{name}: {:?}", view.shape()),
                    got: format!("{:?}", src.shape()),
                });
            }
            None => {
                failure = Some(Error::Checkpoint(format!("ema_blend: missing tensor {name:?}")));
            }
        }
    });
    if let Some(err) = failure {
        return Err(err);
    }
    if seen != online.len() {
        return Err(Error::Checkpoint(format!(
            "ema_blend: online map has {} tensors, target exposes {seen}",
            online.len()
        )));
    }
    Ok(())
}

/// EMA copy of the online encoder and projection. Always forwards in
/// inference mode and never receives gradients.
#[derive(Debug, Clone)]
struct TeacherBranch {
    encoder: ConvEncoder,
    projection: MlpHead,
}

impl TeacherBranch {
    fn from_online(model: &SslModel) -> Self {
        TeacherBranch {
            encoder: model.encoder.clone(),
            projection: model.projection.clone(),
        }
    }

    fn forward(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        self.projection.forward(&self.encoder.forward_inference(x)?)
    }

    fn ema_update(&mut self, online: &SslModel, m: f64) -> Result<()> {
        let mut online_map = ParamMap::new();
        online.encoder.visit("encoder", &mut |name, _, view| {
            online_map.insert(name.to_string(), view.to_owned());
        });
        online.projection.visit("projection", &mut |name, _, view| {
            online_map.insert(name.to_string(), view.to_owned());
        });
        ema_blend(self, &online_map, m)
    }
}

impl Module for TeacherBranch {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, ArrayViewD<'_, f64>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.projection.visit(&join(prefix, "projection"), f);
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, TensorKind, ArrayViewMutD<'_, f64>),
    ) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.projection.visit_mut(&join(prefix, "projection"), f);
    }

    fn visit_trainable(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>, ArrayViewD<'_, f64>),
    ) {
        self.encoder.visit_trainable(&join(prefix, "encoder"), f);
        self.projection.visit_trainable(&join(prefix, "projection"), f);
    }

    fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.projection.zero_grad();
    }
}

/// Method-dependent companion state for pretraining.
enum AuxState {
    /// In-batch contrast only.
    Plain,
    /// EMA target network (BYOL) / momentum encoder (momentum contrast).
    Momentum(TeacherBranch),
    /// EMA teacher plus the running center of its logits.
    Distill { teacher: TeacherBranch, center: CenterState },
}

struct StepOut {
    loss: f64,
    /// Mean of the raw teacher logits over both views (distillation only);
    /// feeds the center update after the optimizer step.
    teacher_mean: Option<Array1<f64>>,
}

/// `[v1; v2]` stacked along the batch axis, so one encoder pass covers both
/// views and batch-norm statistics see the full pair distribution.
fn stack_views(a: &Array4<f64>, b: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = a.dim();
    let mut out = Array4::zeros((2 * n, c, h, w));
    out.slice_mut(s![..n, .., .., ..]).assign(a);
    out.slice_mut(s![n.., .., .., ..]).assign(b);
    out
}

fn ssl_train_step(
    model: &mut SslModel,
    aux: &AuxState,
    batch: &TwoViewBatch,
    hyper: &SslHyper,
) -> Result<StepOut> {
    let n = batch.v1.dim().0;
    let x = stack_views(&batch.v1, &batch.v2);
    match (model.method, aux) {
        (SslMethod::SimClr, AuxState::Plain) => {
            let (h, enc_cache) = model.encoder.forward(&x, Mode::Train)?;
            let (z, proj_cache) = model.projection.forward_cached(&h)?;
            let (zn, norms) = l2_normalize_rows(&z)?;
            let emb = EmbeddingBatch::from_views(
                &zn.slice(s![..n, ..]).to_owned(),
                &zn.slice(s![n.., ..]).to_owned(),
            )?;
            let out = nt_xent_loss(&emb, hyper.temperature)?;
            // the loss saw interleaved rows; map its gradient back to the
            // stacked [view1; view2] layout
            let mut gzn = Array2::zeros(zn.raw_dim());
            for i in 0..n {
                gzn.row_mut(i).assign(&out.grad.row(2 * i));
                gzn.row_mut(n + i).assign(&out.grad.row(2 * i + 1));
            }
            let gz = l2_normalize_backward(&gzn, &zn, &norms);
            let gh = model.projection.backward(&proj_cache, &gz)?;
            model.encoder.backward(&enc_cache, &gh)?;
            Ok(StepOut { loss: out.loss, teacher_mean: None })
        }
        (SslMethod::Byol, AuxState::Momentum(teacher)) => {
            // targets are the teacher's view of the *other* augmentation
            let xt = stack_views(&batch.v2, &batch.v1);
            let (h, enc_cache) = model.encoder.forward(&x, Mode::Train)?;
            let (z, proj_cache) = model.projection.forward_cached(&h)?;
            let predictor = model.prediction.as_mut().expect("online branch has a predictor");
            let (p, pred_cache) = predictor.forward_cached(&z)?;
            let z_target = teacher.forward(&xt)?;
            let out = byol_loss(&p, &z_target)?;
            let gz = predictor.backward(&pred_cache, &out.grad)?;
            let gh = model.projection.backward(&proj_cache, &gz)?;
            model.encoder.backward(&enc_cache, &gh)?;
            Ok(StepOut { loss: out.loss, teacher_mean: None })
        }
        (SslMethod::MocoV3, AuxState::Momentum(teacher)) => {
            let xt = stack_views(&batch.v2, &batch.v1);
            let (h, enc_cache) = model.encoder.forward(&x, Mode::Train)?;
            let (z, proj_cache) = model.projection.forward_cached(&h)?;
            let predictor = model.prediction.as_mut().expect("online branch has a predictor");
            let (q_raw, pred_cache) = predictor.forward_cached(&z)?;
            let (qn, qnorms) = l2_normalize_rows(&q_raw)?;
            let (kn, _) = l2_normalize_rows(&teacher.forward(&xt)?)?;
            // stacked teacher rows: 0..n hold keys for view 1, n.. for view 2
            let q1 = qn.slice(s![..n, ..]).to_owned();
            let q2 = qn.slice(s![n.., ..]).to_owned();
            let k2 = kn.slice(s![..n, ..]).to_owned();
            let k1 = kn.slice(s![n.., ..]).to_owned();
            let out_a = moco_v3_loss(&q1, &k2, hyper.temperature)?;
            let out_b = moco_v3_loss(&q2, &k1, hyper.temperature)?;
            let mut gqn = Array2::zeros(qn.raw_dim());
            gqn.slice_mut(s![..n, ..]).assign(&out_a.grad.mapv(|v| 0.5 * v));
            gqn.slice_mut(s![n.., ..]).assign(&out_b.grad.mapv(|v| 0.5 * v));
            let gq = l2_normalize_backward(&gqn, &qn, &qnorms);
            let gz = predictor.backward(&pred_cache, &gq)?;
            let gh = model.projection.backward(&proj_cache, &gz)?;
            model.encoder.backward(&enc_cache, &gh)?;
            Ok(StepOut { loss: 0.5 * (out_a.loss + out_b.loss), teacher_mean: None })
        }
        (SslMethod::Dino, AuxState::Distill { teacher, center }) => {
            let xt = stack_views(&batch.v2, &batch.v1);
            let (h, enc_cache) = model.encoder.forward(&x, Mode::Train)?;
            let (student_logits, proj_cache) = model.projection.forward_cached(&h)?;
            let teacher_logits = teacher.forward(&xt)?;
            let out = dino_loss(
                &student_logits,
                &teacher_logits,
                center,
                hyper.student_temp,
                hyper.teacher_temp,
            )?;
            let gh = model.projection.backward(&proj_cache, &out.grad)?;
            model.encoder.backward(&enc_cache, &gh)?;
            let mean = teacher_logits.mean_axis(Axis(0)).expect("non-empty batch");
            Ok(StepOut { loss: out.loss, teacher_mean: Some(mean) })
        }
        _ => unreachable!("companion state is built from the same method"),
    }
}

/// Same objectives with the online branch in inference mode and nothing
/// updated — the validation objective.
fn ssl_eval_loss(
    model: &SslModel,
    aux: &AuxState,
    batch: &TwoViewBatch,
    hyper: &SslHyper,
) -> Result<f64> {
    let n = batch.v1.dim().0;
    let x = stack_views(&batch.v1, &batch.v2);
    match (model.method, aux) {
        (SslMethod::SimClr, AuxState::Plain) => {
            let z = model.projection.forward(&model.encoder.forward_inference(&x)?)?;
            let (zn, _) = l2_normalize_rows(&z)?;
            let emb = EmbeddingBatch::from_views(
                &zn.slice(s![..n, ..]).to_owned(),
                &zn.slice(s![n.., ..]).to_owned(),
            )?;
            Ok(nt_xent_loss(&emb, hyper.temperature)?.loss)
        }
        (SslMethod::Byol, AuxState::Momentum(teacher)) => {
            let xt = stack_views(&batch.v2, &batch.v1);
            let z = model.projection.forward(&model.encoder.forward_inference(&x)?)?;
            let predictor = model.prediction.as_ref().expect("online branch has a predictor");
            let p = predictor.forward(&z)?;
            Ok(byol_loss(&p, &teacher.forward(&xt)?)?.loss)
        }
        (SslMethod::MocoV3, AuxState::Momentum(teacher)) => {
            let xt = stack_views(&batch.v2, &batch.v1);
            let z = model.projection.forward(&model.encoder.forward_inference(&x)?)?;
            let predictor = model.prediction.as_ref().expect("online branch has a predictor");
            let (qn, _) = l2_normalize_rows(&predictor.forward(&z)?)?;
            let (kn, _) = l2_normalize_rows(&teacher.forward(&xt)?)?;
            let out_a =
                moco_v3_loss(&qn.slice(s![..n, ..]).to_owned(), &kn.slice(s![..n, ..]).to_owned(), hyper.temperature)?;
            let out_b =
                moco_v3_loss(&qn.slice(s![n.., ..]).to_owned(), &kn.slice(s![n.., ..]).to_owned(), hyper.temperature)?;
            Ok(0.5 * (out_a.loss + out_b.loss))
        }
        (SslMethod::Dino, AuxState::Distill { teacher, center }) => {
            let xt = stack_views(&batch.v2, &batch.v1);
            let student = model.projection.forward(&model.encoder.forward_inference(&x)?)?;
            let teacher_logits = teacher.forward(&xt)?;
            Ok(dino_loss(&student, &teacher_logits, center, hyper.student_temp, hyper.teacher_temp)?
                .loss)
        }
        _ => unreachable!("companion state is built from the same method"),
    }
}

/// Pretraining driver.
#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub hyper: SslHyper,
    /// View-pair augmentation sampled fresh per record per epoch.
    pub view_cfg: AugmentationConfig,
    /// Drives epoch shuffles and view sampling (not model init).
    pub seed: u64,
}

/// Run self-supervised pretraining. Validation view pairs reuse the epoch-0
/// seeds every epoch, so augmentation noise does not move the validation
/// objective between epochs.
///
/// SimCLR's loss is stationary, so the model is left at its best-validation
/// weights. The teacher-based methods score themselves against a branch that
/// drifts every step; their validation losses are not comparable across
/// epochs, so those models keep their final weights and `best` is reported
/// for the curve only.
pub fn pretrain_ssl(
    model: &mut SslModel,
    train: &Loader<'_>,
    val: &Loader<'_>,
    cfg: &PretrainConfig,
) -> Result<TrainOutcome> {
    cfg.hyper.validate()?;
    cfg.view_cfg.validate()?;
    if train.manifest().len() < 2 {
        return Err(Error::BatchTooSmall(train.manifest().len()));
    }
    if val.manifest().len() < 2 {
        return Err(Error::BatchTooSmall(val.manifest().len()));
    }

    let hyper = &cfg.hyper;
    let mut aux = match model.method {
        SslMethod::SimClr => AuxState::Plain,
        SslMethod::Byol | SslMethod::MocoV3 => {
            AuxState::Momentum(TeacherBranch::from_online(model))
        }
        SslMethod::Dino => AuxState::Distill {
            teacher: TeacherBranch::from_online(model),
            center: CenterState::new(model.projection.out_dim(), hyper.center_momentum)?,
        },
    };
    let mut optimizer = AdamW::new(hyper.lr, hyper.weight_decay)?;
    let mut stopper = EarlyStopping::new(hyper.patience, hyper.min_delta);
    let mut curve = Vec::new();
    let mut best_snapshot: Option<ParamMap> = None;
    let mut stopped_early = false;

    for epoch in 0..hyper.epochs {
        let mut loss_sum = 0.0;
        let mut rows = 0usize;
        for (step, indices) in
            train.epoch_order(hyper.batch_size, cfg.seed, epoch, true).iter().enumerate()
        {
            if indices.len() < 2 {
                // a trailing singleton has no negatives; skip it
                continue;
            }
            let batch = train.two_view_batch(indices, &cfg.view_cfg, cfg.seed, epoch)?;
            model.zero_grad();
            let out = ssl_train_step(model, &aux, &batch, hyper)?;
            if !out.loss.is_finite() {
                return Err(Error::Diverged { phase: "pretrain", epoch, step });
            }
            optimizer.step(model);
            match &mut aux {
                AuxState::Plain => {}
                AuxState::Momentum(teacher) => teacher.ema_update(model, hyper.ema_momentum)?,
                AuxState::Distill { teacher, center } => {
                    teacher.ema_update(model, hyper.ema_momentum)?;
                    let mean =
                        out.teacher_mean.as_ref().expect("distillation step reports teacher mean");
                    *center = dino_center_update(center, mean);
                }
            }
            loss_sum += out.loss * indices.len() as f64;
            rows += indices.len();
        }
        let train_loss = loss_sum / rows as f64;

        let mut val_sum = 0.0;
        let mut val_rows = 0usize;
        for (step, indices) in
            val.epoch_order(hyper.batch_size, cfg.seed, 0, false).iter().enumerate()
        {
            if indices.len() < 2 {
                continue;
            }
            let batch = val.two_view_batch(indices, &cfg.view_cfg, cfg.seed, 0)?;
            let loss = ssl_eval_loss(model, &aux, &batch, hyper)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { phase: "pretrain-val", epoch, step });
            }
            val_sum += loss * indices.len() as f64;
            val_rows += indices.len();
        }
        let val_loss = val_sum / val_rows as f64;

        let decision = stopper.observe(epoch, val_loss);
        if decision.improved && model.method == SslMethod::SimClr {
            best_snapshot = Some(named_tensors(model));
        }
        curve.push(EpochPoint { epoch, train_loss, val_loss, improved: decision.improved });
        if decision.stop {
            stopped_early = true;
            break;
        }
    }

    if let Some(snapshot) = &best_snapshot {
        load_named_tensors(model, snapshot)?;
    }
    Ok(TrainOutcome { curve, best: stopper.best(), stopped_early })
}

/// Pooled encoder features for every record, in manifest order, batched
/// through inference mode.
pub fn extract_features(
    encoder: &ConvEncoder,
    loader: &Loader<'_>,
    batch_size: usize,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let n = loader.manifest().len();
    if n == 0 {
        return Err(Error::BatchTooSmall(0));
    }
    let mut features = Array2::zeros((n, encoder.feature_dim()));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0usize;
    for indices in loader.epoch_order(batch_size.max(1), 0, 0, false) {
        let batch = loader.labeled_batch(&indices)?;
        let h = encoder.forward_inference(&batch.x)?;
        features.slice_mut(s![row..row + indices.len(), ..]).assign(&h);
        labels.extend(batch.y);
        row += indices.len();
    }
    Ok((features, labels))
}

fn fit_head_on_features(
    head: &mut ClassifierHead,
    train_x: &Array2<f64>,
    train_y: &[usize],
    val_x: &Array2<f64>,
    val_y: &[usize],
    cfg: &FitConfig,
    phase: &'static str,
) -> Result<TrainOutcome> {
    let n = train_x.nrows();
    let mut optimizer = AdamW::new(cfg.lr, cfg.weight_decay)?;
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut curve = Vec::new();
    let mut best_snapshot: Option<ParamMap> = None;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, "head-epoch", epoch as u64)));
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let x = train_x.select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let probs = head.classify(&x)?;
            let ce = cross_entropy(&probs, &y)?;
            if !ce.loss.is_finite() {
                return Err(Error::Diverged { phase, epoch, step });
            }
            let glogits = softmax_backward(&probs, &ce.grad);
            head.zero_grad();
            head.backward(&x, &glogits)?;
            optimizer.step(head);
            loss_sum += ce.loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / n as f64;

        let val_probs = head.classify(val_x)?;
        let val_loss = cross_entropy(&val_probs, val_y)?.loss;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { phase, epoch, step: usize::MAX });
        }

        let decision = stopper.observe(epoch, val_loss);
        if decision.improved {
            best_snapshot = Some(named_tensors(head));
        }
        curve.push(EpochPoint { epoch, train_loss, val_loss, improved: decision.improved });
        if decision.stop {
            stopped_early = true;
            break;
        }
    }

    if let Some(snapshot) = &best_snapshot {
        load_named_tensors(head, snapshot)?;
    }
    Ok(TrainOutcome { curve, best: stopper.best(), stopped_early })
}

/// Train a softmax classifier on frozen encoder features. The encoder is
/// forwarded once per manifest (inference mode) and must come out of the
/// probe bit-identical.
pub fn linear_probe(
    encoder: &ConvEncoder,
    train: &Loader<'_>,
    val: &Loader<'_>,
    cfg: &FitConfig,
) -> Result<(ClassifierHead, TrainOutcome)> {
    cfg.validate()?;
    let checksum_before = tensor_checksum(encoder);
    let (train_x, train_y) = extract_features(encoder, train, cfg.batch_size)?;
    let (val_x, val_y) = extract_features(encoder, val, cfg.batch_size)?;
    assert_eq!(
        tensor_checksum(encoder),
        checksum_before,
        "probing must leave the encoder untouched"
    );

    let num_classes = train.manifest().taxonomy().len();
    let mut head_rng = rng_from_seed(derive_seed(cfg.seed, "probe-head", 0));
    let mut head = ClassifierHead::new(encoder.feature_dim(), num_classes, &mut head_rng);
    let outcome =
        fit_head_on_features(&mut head, &train_x, &train_y, &val_x, &val_y, cfg, "probe")?;
    Ok((head, outcome))
}

/// Mean cross-entropy of the classifier over a manifest, inference mode.
pub fn classifier_val_loss(
    model: &ClassifierModel,
    loader: &Loader<'_>,
    batch_size: usize,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut rows = 0usize;
    for indices in loader.epoch_order(batch_size.max(1), 0, 0, false) {
        let batch = loader.labeled_batch(&indices)?;
        let h = model.encoder.forward_inference(&batch.x)?;
        let probs = model.head.classify(&h)?;
        sum += cross_entropy(&probs, &batch.y)?.loss * indices.len() as f64;
        rows += indices.len();
    }
    if rows == 0 {
        return Err(Error::BatchTooSmall(0));
    }
    Ok(sum / rows as f64)
}

/// Train encoder and head jointly, restoring the best-validation weights
/// (batch-norm buffers included) before returning.
pub fn fine_tune(
    model: &mut ClassifierModel,
    train: &Loader<'_>,
    val: &Loader<'_>,
    cfg: &FitConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.manifest().len() == 0 || val.manifest().len() == 0 {
        return Err(Error::BatchTooSmall(0));
    }

    let mut optimizer = AdamW::new(cfg.lr, cfg.weight_decay)?;
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut curve = Vec::new();
    let mut best_snapshot: Option<ParamMap> = None;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut rows = 0usize;
        for (step, indices) in
            train.epoch_order(cfg.batch_size, cfg.seed, epoch, true).iter().enumerate()
        {
            let batch = train.labeled_batch(indices)?;
            model.zero_grad();
            let (h, enc_cache) = model.encoder.forward(&batch.x, Mode::Train)?;
            let logits = model.head.forward(&h)?;
            let probs = softmax(&logits);
            let ce = cross_entropy(&probs, &batch.y)?;
            if !ce.loss.is_finite() {
                return Err(Error::Diverged { phase: "finetune", epoch, step });
            }
            let glogits = softmax_backward(&probs, &ce.grad);
            let gh = model.head.backward(&h, &glogits)?;
            model.encoder.backward(&enc_cache, &gh)?;
            optimizer.step(model);
            loss_sum += ce.loss * indices.len() as f64;
            rows += indices.len();
        }
        let train_loss = loss_sum / rows as f64;

        let val_loss = classifier_val_loss(model, val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { phase: "finetune-val", epoch, step: usize::MAX });
        }

        let decision = stopper.observe(epoch, val_loss);
        if decision.improved {
            best_snapshot = Some(named_tensors(model));
        }
        curve.push(EpochPoint { epoch, train_loss, val_loss, improved: decision.improved });
        if decision.stop {
            stopped_early = true;
            break;
        }
    }

    if let Some(snapshot) = &best_snapshot {
        load_named_tensors(model, snapshot)?;
    }
    Ok(TrainOutcome { curve, best: stopper.best(), stopped_early })
}

/// `(y_true, y_pred)` over a manifest, inference mode, manifest order.
pub fn predict_labels(
    model: &ClassifierModel,
    loader: &Loader<'_>,
    batch_size: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = loader.manifest().len();
    let mut y_true = Vec::with_capacity(n);
    let mut y_pred = Vec::with_capacity(n);
    for indices in loader.epoch_order(batch_size.max(1), 0, 0, false) {
        let batch = loader.labeled_batch(&indices)?;
        let h = model.encoder.forward_inference(&batch.x)?;
        let probs = model.head.classify(&h)?;
        for (i, &label) in batch.y.iter().enumerate() {
            let row = probs.row(i);
            let mut best = 0usize;
            let mut best_p = f64::NEG_INFINITY;
            for (j, &p) in row.iter().enumerate() {
                if p > best_p {
                    best_p = p;
                    best = j;
                }
            }
            y_true.push(label);
            y_pred.push(best);
        }
    }
    Ok((y_true, y_pred))
}

pub fn evaluate_classifier(
    model: &ClassifierModel,
    loader: &Loader<'_>,
    batch_size: usize,
) -> Result<MetricsReport> {
    let (y_true, y_pred) = predict_labels(model, loader, batch_size)?;
    compute_metrics(&y_true, &y_pred, loader.manifest().taxonomy())
}
