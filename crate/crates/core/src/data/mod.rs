//! Dataset pipeline: taxonomy, manifests, splitting, balancing,
//! augmentation, and batch loading.

pub mod augment;
pub mod balance;
pub mod loader;
pub mod manifest;
pub mod normalize;
pub mod split;
pub mod synthetic;
pub mod taxonomy;

pub use augment::{
    augment_image, gaussian_blur, resize_bilinear, sample_two_views, AugmentParams,
    AugmentationConfig, CropParams, FillMode, Pixels,
};
pub use balance::{balance_classes, DEFAULT_BALANCE_TARGET};
pub use loader::{decode_gray, LabeledBatch, Loader, TwoViewBatch};
pub use manifest::{DatasetManifest, Origin, SampleRecord};
pub use normalize::{to_model_input, NormalizeSpec};
pub use split::{stratified_split, SplitSpec, MIN_RECORDS_PER_CLASS};
pub use synthetic::{generate, render, SyntheticKind, SyntheticSpec};
pub use taxonomy::ClassTaxonomy;
