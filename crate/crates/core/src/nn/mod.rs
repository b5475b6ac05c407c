//! Hand-rolled f64 layers with analytic backward passes. Layers own their
//! parameters; callers of `backward` re-supply the forward inputs the layer
//! did not cache itself.

pub mod block;
pub mod checkpoint;
pub mod conv;
pub mod encoder;
pub mod heads;
pub mod init;
pub mod linear;
pub mod norm;
pub mod ops;
pub mod param;

pub use block::{Bottleneck, ResidualBlockSpec};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use conv::Conv2d;
pub use encoder::{ConvEncoder, EncoderCache, EncoderGrads, EncoderKind, EncoderSpec};
pub use heads::{softmax, ClassifierHead, MlpHead, PROJECTION_DIM, PROJECTION_HIDDEN};
pub use linear::Linear;
pub use norm::BatchNorm2d;
pub use ops::{global_avg_pool, global_avg_pool_backward, relu, relu_backward, MaxPool2d};
pub use param::{
    join, load_named_tensors, named_tensors, tensor_checksum, Module, Param, TensorKind,
};

/// Whether batch-norm layers use batch statistics (and update their running
/// estimates) or the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
