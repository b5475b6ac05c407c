//! Batch assembly: manifests → encoder input tensors.
//!
//! The loader owns the replay config for augmented records, the
//! normalization constants, and the target resolution. All randomness
//! (epoch shuffling, SSL view sampling) is derived from explicit seeds, and
//! per-record work is pure, so multi-worker batches are bit-identical to
//! single-worker ones.
//!
//! Supervised batches apply no online augmentation: original records load
//! as-is and augmented records replay exactly the transform recorded in the
//! manifest. This keeps evaluation and probing byte-reproducible.

use std::path::Path;

use ndarray::Array4;
use rand::seq::SliceRandom;

use super::augment::{augment_image, sample_two_views, AugmentationConfig, Pixels};
use super::augment::resize_bilinear;
use super::manifest::{DatasetManifest, Origin, SampleRecord};
use super::normalize::{to_model_input, NormalizeSpec};
use crate::rng::{derive_seed, derive_seed_for_path, rng_from_seed};
use crate::Result;

#[derive(Debug, Clone)]
pub struct LabeledBatch {
    /// (n, 3, resolution, resolution)
    pub x: Array4<f64>,
    /// class index per row
    pub y: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TwoViewBatch {
    pub v1: Array4<f64>,
    pub v2: Array4<f64>,
}

/// Decode an image file to a grayscale [0, 1] grid (8-bit luma depth).
pub fn decode_gray(path: &Path) -> Result<Pixels> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let data: Vec<f64> = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Pixels::from_shape_vec((h as usize, w as usize), data)
        .expect("luma buffer length matches dimensions"))
}

pub struct Loader<'a> {
    manifest: &'a DatasetManifest,
    replay_cfg: AugmentationConfig,
    normalize: NormalizeSpec,
    resolution: usize,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> Loader<'a> {
    pub fn new(
        manifest: &'a DatasetManifest,
        replay_cfg: AugmentationConfig,
        normalize: NormalizeSpec,
        resolution: usize,
        workers: usize,
    ) -> Result<Self> {
        replay_cfg.validate()?;
        normalize.validate()?;
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| crate::Error::InvalidConfig(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self { manifest, replay_cfg, normalize, resolution, pool })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        self.manifest
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Batch index lists for one epoch: a seeded permutation (or manifest
    /// order) chunked by `batch_size`. The trailing partial batch is kept.
    pub fn epoch_order(
        &self,
        batch_size: usize,
        seed: u64,
        epoch: usize,
        shuffle: bool,
    ) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.manifest.len()).collect();
        if shuffle {
            let mut rng = rng_from_seed(derive_seed(seed, "epoch-order", epoch as u64));
            order.shuffle(&mut rng);
        }
        order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
    }

    /// Source pixels for one record, replaying its recorded transform if it
    /// is an augmented virtual record. Dims are the source image's.
    pub fn record_pixels(&self, record: &SampleRecord) -> Result<Pixels> {
        let img = decode_gray(Path::new(&record.path))?;
        Ok(match record.origin {
            Origin::Original => img,
            Origin::Augmented => augment_image(&img, &self.replay_cfg, record.seed),
        })
    }

    fn map_records<T, F>(&self, indices: &[usize], f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&SampleRecord) -> Result<T> + Sync,
    {
        let records = self.manifest.records();
        let run = || -> Result<Vec<T>> {
            use rayon::prelude::*;
            indices.par_iter().map(|&i| f(&records[i])).collect()
        };
        match &self.pool {
            Some(pool) => pool.install(run),
            None => indices.iter().map(|&i| f(&records[i])).collect(),
        }
    }

    /// Supervised batch: resize → normalize → stack, labels alongside.
    pub fn labeled_batch(&self, indices: &[usize]) -> Result<LabeledBatch> {
        let res = self.resolution;
        let inputs = self.map_records(indices, |rec| {
            let px = self.record_pixels(rec)?;
            Ok((to_model_input(&resize_bilinear(&px, res, res), &self.normalize), rec.class))
        })?;
        let mut x = Array4::zeros((indices.len(), 3, res, res));
        let mut y = Vec::with_capacity(indices.len());
        for (i, (input, class)) in inputs.into_iter().enumerate() {
            x.index_axis_mut(ndarray::Axis(0), i).assign(&input);
            y.push(class);
        }
        Ok(LabeledBatch { x, y })
    }

    /// SSL positive-pair batch. Each record's view pair is seeded by
    /// (epoch seed, path, record seed), so it is unique per record and per
    /// epoch but identical across runs and worker counts.
    pub fn two_view_batch(
        &self,
        indices: &[usize],
        view_cfg: &AugmentationConfig,
        seed: u64,
        epoch: usize,
    ) -> Result<TwoViewBatch> {
        view_cfg.validate()?;
        let res = self.resolution;
        let epoch_seed = derive_seed(seed, "views", epoch as u64);
        let views = self.map_records(indices, |rec| {
            let px = self.record_pixels(rec)?;
            let view_seed = derive_seed_for_path(epoch_seed, &rec.path, rec.seed);
            let (a, b) = sample_two_views(&px, view_cfg, view_seed, res);
            Ok((to_model_input(&a, &self.normalize), to_model_input(&b, &self.normalize)))
        })?;
        let mut v1 = Array4::zeros((indices.len(), 3, res, res));
        let mut v2 = Array4::zeros((indices.len(), 3, res, res));
        for (i, (a, b)) in views.into_iter().enumerate() {
            v1.index_axis_mut(ndarray::Axis(0), i).assign(&a);
            v2.index_axis_mut(ndarray::Axis(0), i).assign(&b);
        }
        Ok(TwoViewBatch { v1, v2 })
    }
}
