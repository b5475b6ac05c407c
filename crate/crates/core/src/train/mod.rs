//! Optimizer, supervised losses, schedules, metrics, and the phase drivers
//! that tie encoders, heads, and objectives together.

pub mod early_stop;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use early_stop::{EarlyStopping, StopDecision, DEFAULT_MIN_DELTA, DEFAULT_PATIENCE};
pub use loss::{cross_entropy, softmax_backward, CrossEntropyOutput, PROB_CLAMP};
pub use metrics::{compute_metrics, ClassMetrics, MetricsReport};
pub use optim::{AdamW, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use trainer::{
    classifier_val_loss, ema_blend, evaluate_classifier, extract_features, fine_tune,
    linear_probe, predict_labels, pretrain_ssl, write_curve_csv, ClassifierModel, EpochPoint,
    FitConfig, PretrainConfig, SslHyper, SslMethod, SslModel, TrainOutcome, DEFAULT_BATCH_SIZE,
    DEFAULT_CENTER_MOMENTUM, DEFAULT_EMA_MOMENTUM, DEFAULT_EVAL_EPOCHS, DEFAULT_SSL_EPOCHS,
    DEFAULT_STUDENT_TEMP, DEFAULT_TEACHER_TEMP,
};
