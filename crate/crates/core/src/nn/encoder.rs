//! Convolutional encoders built from bottleneck stages: a ResNet-50 and a
//! small 32x32 variant sharing one execution path. Forward exposes the final
//! stage's activation map so saliency methods can attach to it.

use crate::error::{Error, Result};
use crate::nn::block::{Bottleneck, BottleneckCache, ResidualBlockSpec};
use crate::nn::conv::Conv2d;
use crate::nn::norm::{BatchNorm2d, BnCache};
use crate::nn::ops::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, MaxPool2d, PoolCache,
};
use crate::nn::param::{join, Module, TensorKind};
use crate::nn::Mode;
use ndarray::{Array2, Array4, ArrayViewD, ArrayViewMutD};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Resnet50,
    Tiny,
}

impl EncoderKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EncoderKind::Resnet50 => "resnet50",
            EncoderKind::Tiny => "tiny",
        }
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet50" => Ok(EncoderKind::Resnet50),
            "tiny" => Ok(EncoderKind::Tiny),
            other => Err(Error::InvalidConfig(format!(
                "unknown encoder {other:?} (expected resnet50 or tiny)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub maxpool: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub input_resolution: usize,
    pub feature_dim: usize,
    pub stem: StemSpec,
    pub stages: Vec<Vec<ResidualBlockSpec>>,
}

impl EncoderSpec {
    /// Canonical (3, 4, 6, 3) bottleneck layout, 224x224 in, 2048-dim out.
    pub fn resnet50() -> Self {
        let stage = |count: usize, inc: usize, mid: usize, out: usize, first_stride: usize| {
            (0..count)
                .map(|i| ResidualBlockSpec {
                    in_channels: if i == 0 { inc } else { out },
                    bottleneck_channels: mid,
                    out_channels: out,
                    stride: if i == 0 { first_stride } else { 1 },
                })
                .collect::<Vec<_>>()
        };
        EncoderSpec {
            kind: EncoderKind::Resnet50,
            input_resolution: 224,
            feature_dim: 2048,
            stem: StemSpec {
                out_channels: 64,
                kernel: 7,
                stride: 2,
                padding: 3,
                maxpool: true,
            },
            stages: vec![
                stage(3, 64, 64, 256, 1),
                stage(4, 256, 128, 512, 2),
                stage(6, 512, 256, 1024, 2),
                stage(3, 1024, 512, 2048, 2),
            ],
        }
    }

    /// Three stages of one block each on 32x32 inputs, 128-dim features,
    /// final map 8x8 - small enough for finite-difference checks on a CPU.
    pub fn tiny() -> Self {
        let block = |inc, mid, out, stride| ResidualBlockSpec {
            in_channels: inc,
            bottleneck_channels: mid,
            out_channels: out,
            stride,
        };
        EncoderSpec {
            kind: EncoderKind::Tiny,
            input_resolution: 32,
            feature_dim: 128,
            stem: StemSpec {
                out_channels: 16,
                kernel: 3,
                stride: 1,
                padding: 1,
                maxpool: false,
            },
            stages: vec![
                vec![block(16, 8, 32, 2)],
                vec![block(32, 16, 64, 2)],
                vec![block(64, 32, 128, 1)],
            ],
        }
    }

    pub fn of_kind(kind: EncoderKind) -> Self {
        match kind {
            EncoderKind::Resnet50 => Self::resnet50(),
            EncoderKind::Tiny => Self::tiny(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_resolution == 0 {
            return Err(Error::InvalidConfig("input resolution must be positive".into()));
        }
        if self.stages.is_empty() || self.stages.iter().any(|s| s.is_empty()) {
            return Err(Error::InvalidConfig("encoder needs at least one block per stage".into()));
        }
        let mut channels = self.stem.out_channels;
        for block in self.stages.iter().flatten() {
            block.validate()?;
            if block.in_channels != channels {
                return Err(Error::InvalidConfig(format!(
                    "block expects {} input channels, previous stage emits {channels}",
                    block.in_channels
                )));
            }
            channels = block.out_channels;
        }
        if channels != self.feature_dim {
            return Err(Error::InvalidConfig(format!(
                "last stage emits {channels} channels, spec promises feature_dim {}",
                self.feature_dim
            )));
        }
        Ok(())
    }

    /// Side length of the final stage's activation map.
    pub fn final_spatial(&self) -> usize {
        let mut h = (self.input_resolution + 2 * self.stem.padding - self.stem.kernel)
            / self.stem.stride
            + 1;
        if self.stem.maxpool {
            h = (h + 2 - 3) / 2 + 1;
        }
        for block in self.stages.iter().flatten() {
            h = (h - 1) / block.stride + 1;
        }
        h
    }
}

#[derive(Debug, Clone)]
pub struct ConvEncoder {
    pub spec: EncoderSpec,
    stem_conv: Conv2d,
    stem_bn: BatchNorm2d,
    stem_pool: Option<MaxPool2d>,
    stages: Vec<Vec<Bottleneck>>,
}

/// Everything backward needs, plus the saliency attachment point.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    input: Array4<f64>,
    stem_bnc: BnCache,
    stem_r: Array4<f64>,
    pool: Option<PoolCache>,
    blocks: Vec<Vec<BottleneckCache>>,
    /// Final stage output after ReLU, before pooling.
    pub final_map: Array4<f64>,
}

#[derive(Debug)]
pub struct EncoderGrads {
    pub input_grad: Array4<f64>,
    /// Gradient of the loss w.r.t. `EncoderCache::final_map`.
    pub final_map_grad: Array4<f64>,
}

impl ConvEncoder {
    pub fn new(spec: EncoderSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let stem_conv = Conv2d::new(
            3,
            spec.stem.out_channels,
            spec.stem.kernel,
            spec.stem.stride,
            spec.stem.padding,
            rng,
        );
        let stem_bn = BatchNorm2d::new(spec.stem.out_channels);
        let stem_pool = spec.stem.maxpool.then_some(MaxPool2d {
            kernel: 3,
            stride: 2,
            padding: 1,
        });
        let mut stages = Vec::with_capacity(spec.stages.len());
        for stage_spec in &spec.stages {
            let mut blocks = Vec::with_capacity(stage_spec.len());
            for block_spec in stage_spec {
                blocks.push(Bottleneck::new(*block_spec, rng)?);
            }
            stages.push(blocks);
        }
        Ok(ConvEncoder {
            spec,
            stem_conv,
            stem_bn,
            stem_pool,
            stages,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    fn check_input(&self, x: &Array4<f64>, context: &'static str) -> Result<()> {
        let (_, c, h, w) = x.dim();
        let r = self.spec.input_resolution;
        if c != 3 || h != r || w != r {
            return Err(Error::ShapeMismatch {
                context,
                expected: format!("(n, 3, {r}, {r})"),
                got: format!("{:?}", x.dim()),
            });
        }
        Ok(())
    }

    /// Full forward with caches for a later `backward`.
    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Result<(Array2<f64>, EncoderCache)> {
        self.check_input(x, "ConvEncoder::forward")?;
        let a = self.stem_conv.forward(x)?;
        let (a, stem_bnc) = self.stem_bn.forward(&a, mode)?;
        let stem_r = relu(&a);
        let (mut cur, pool) = match &self.stem_pool {
            Some(p) => {
                let (y, c) = p.forward_cached(&stem_r)?;
                (y, Some(c))
            }
            None => (stem_r.clone(), None),
        };

        let mut blocks = Vec::with_capacity(self.stages.len());
        for stage in &mut self.stages {
            let mut stage_caches = Vec::with_capacity(stage.len());
            for block in stage {
                let (next, cache) = block.forward(&cur, mode)?;
                cur = next;
                stage_caches.push(cache);
            }
            blocks.push(stage_caches);
        }

        let features = global_avg_pool(&cur);
        Ok((
            features,
            EncoderCache {
                input: x.clone(),
                stem_bnc,
                stem_r,
                pool,
                blocks,
                final_map: cur,
            },
        ))
    }

    /// Eval-mode forward on a read-only model; no caches, bit-stable.
    pub fn forward_inference(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        self.forward_inference_with_map(x).map(|(f, _)| f)
    }

    /// Same, but also hands back the final activation map.
    pub fn forward_inference_with_map(
        &self,
        x: &Array4<f64>,
    ) -> Result<(Array2<f64>, Array4<f64>)> {
        self.check_input(x, "ConvEncoder::forward_inference")?;
        let a = self.stem_bn.forward_inference(&self.stem_conv.forward(x)?)?;
        let mut cur = relu(&a);
        if let Some(p) = &self.stem_pool {
            cur = p.forward(&cur)?;
        }
        for stage in &self.stages {
            for block in stage {
                cur = block.forward_inference(&cur)?;
            }
        }
        Ok((global_avg_pool(&cur), cur))
    }

    /// Accumulates parameter gradients from d(loss)/d(features).
    pub fn backward(&mut self, cache: &EncoderCache, gfeat: &Array2<f64>) -> Result<EncoderGrads> {
        let (_, _, mh, mw) = cache.final_map.dim();
        if gfeat.dim() != (cache.final_map.dim().0, self.spec.feature_dim) {
            return Err(Error::ShapeMismatch {
                context: "ConvEncoder::backward",
                expected: format!("({}, {})", cache.final_map.dim().0, self.spec.feature_dim),
                got: format!("{:?}", gfeat.dim()),
            });
        }
        let mut g = global_avg_pool_backward(gfeat, (mh, mw));
        let final_map_grad = g.clone();

        for (stage, caches) in self.stages.iter_mut().zip(&cache.blocks).rev() {
            for (block, bcache) in stage.iter_mut().zip(caches).rev() {
                g = block.backward(bcache, &g)?;
            }
        }
        if let Some(p) = &self.stem_pool {
            let pc = cache.pool.as_ref().ok_or_else(|| Error::ShapeMismatch {
                context: "ConvEncoder::backward",
                expected: "pool cache from forward".into(),
                got: "missing".into(),
            })?;
            g = p.backward(pc, &g)?;
        }
        g = relu_backward(&cache.stem_r, &g);
        g = self.stem_bn.backward(&cache.stem_bnc, &g)?;
        let input_grad = self.stem_conv.backward(&cache.input, &g)?;

        Ok(EncoderGrads {
            input_grad,
            final_map_grad,
        })
    }
}

impl Module for ConvEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, ArrayViewD<'_, f64>)) {
        self.stem_conv.visit(&join(prefix, "stem.conv"), f);
        self.stem_bn.visit(&join(prefix, "stem.bn"), f);
        for (si, stage) in self.stages.iter().enumerate() {
            for (bi, block) in stage.iter().enumerate() {
                block.visit(&join(prefix, &format!("stage{si}.block{bi}")), f);
            }
        }
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, TensorKind, ArrayViewMutD<'_, f64>),
    ) {
        self.stem_conv.visit_mut(&join(prefix, "stem.conv"), f);
        self.stem_bn.visit_mut(&join(prefix, "stem.bn"), f);
        for (si, stage) in self.stages.iter_mut().enumerate() {
            for (bi, block) in stage.iter_mut().enumerate() {
                block.visit_mut(&join(prefix, &format!("stage{si}.block{bi}")), f);
            }
        }
    }

    fn visit_trainable(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>, ArrayViewD<'_, f64>),
    ) {
        self.stem_conv.visit_trainable(&join(prefix, "stem.conv"), f);
        self.stem_bn.visit_trainable(&join(prefix, "stem.bn"), f);
        for (si, stage) in self.stages.iter_mut().enumerate() {
            for (bi, block) in stage.iter_mut().enumerate() {
                block.visit_trainable(&join(prefix, &format!("stage{si}.block{bi}")), f);
            }
        }
    }

    fn zero_grad(&mut self) {
        self.stem_conv.zero_grad();
        self.stem_bn.zero_grad();
        for block in self.stages.iter_mut().flatten() {
            block.zero_grad();
        }
    }
}
