//! Self-supervised objectives. Each loss consumes embedding batches and
//! returns both the scalar objective and its analytic gradient with respect
//! to the online-branch inputs, so trainers never re-derive backward passes.

pub mod byol;
pub mod dino;
pub mod ema;
pub mod embedding;
pub mod moco;
pub mod simclr;

pub use byol::{byol_loss, ByolOutput};
pub use dino::{dino_center_update, dino_loss, CenterState, DinoOutput};
pub use ema::{ema_update_tensor, MomentumState, ParamMap};
pub use embedding::EmbeddingBatch;
pub use moco::{moco_v3_loss, MocoOutput};
pub use simclr::{
    l2_normalize, l2_normalize_backward, l2_normalize_rows, nt_xent_loss, similarity_matrix,
    NtXentOutput,
};
