//! Parameter storage and the named-tensor visitor every layer implements.
//! Trainers, the EMA branch, and checkpoints all address tensors by name,
//! so the visit order (and the names themselves) must stay stable.

use crate::error::{Error, Result};
use crate::rng::stable_hash;
use crate::ssl::ParamMap;
use ndarray::{Array, ArrayViewD, ArrayViewMutD, Dimension};

/// A trainable tensor paired with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<D: Dimension> {
    pub value: Array<f64, D>,
    pub grad: Array<f64, D>,
}

impl<D: Dimension> Param<D> {
    pub fn new(value: Array<f64, D>) -> Self {
        let grad = Array::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Whether a tensor receives gradient updates or is a running statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Buffer,
}

/// Anything holding named tensors: layers, encoders, heads, and their
/// compositions. Names are `.`-joined paths rooted at `prefix`.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, ArrayViewD<'_, f64>));

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, TensorKind, ArrayViewMutD<'_, f64>),
    );

    /// Visit each trainable tensor as (name, value, grad) for optimizer steps.
    fn visit_trainable(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>, ArrayViewD<'_, f64>),
    );

    fn zero_grad(&mut self);
}

pub fn join(prefix: &str, leaf: &str) -> String {
    if prefix.is_empty() {
        leaf.to_string()
    } else {
        format!("{prefix}.{leaf}")
    }
}

/// Snapshot every tensor (weights and buffers) into an owned, name-ordered map.
pub fn named_tensors<M: Module + ?Sized>(module: &M) -> ParamMap {
    let mut map = ParamMap::new();
    module.visit("", &mut |name, _kind, view| {
        map.insert(name.to_string(), view.to_owned());
    });
    map
}

/// Load a snapshot back. Every tensor the module exposes must be present
/// with a matching shape, and the snapshot must not carry extras.
pub fn load_named_tensors<M: Module + ?Sized>(module: &mut M, map: &ParamMap) -> Result<()> {
    let mut seen = 0usize;
    let mut failure: Option<Error> = None;
    module.visit_mut("", &mut |name, _kind, mut view| {
        if failure.is_some() {
            return;
        }
        match map.get(name) {
            Some(src) if src.shape() == view.shape() => {
                view.assign(src);
                seen += 1;
            }
            Some(src) => {
                failure = Some(Error::ShapeMismatch {
                    context: "load_named_tensors",
                    expected: format!("{name}: {:?}", view.shape()),
                    got: format!("{:?}", src.shape()),
                });
            }
            None => {
                failure = Some(Error::Checkpoint(format!("missing tensor {name:?}")));
            }
        }
    });
    if let Some(err) = failure {
        return Err(err);
    }
    if seen != map.len() {
        return Err(Error::Checkpoint(format!(
            "snapshot has {} tensors, model exposes {seen}",
            map.len()
        )));
    }
    Ok(())
}

/// Order-sensitive digest of every named tensor. Two modules agree iff all
/// names, shapes, and exact bit patterns agree.
pub fn tensor_checksum<M: Module + ?Sized>(module: &M) -> u64 {
    let mut digest: u64 = 0xcbf2_9ce4_8422_2325;
    module.visit("", &mut |name, _kind, view| {
        let mut bytes = Vec::with_capacity(view.len() * 8 + name.len());
        for &v in view.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        digest = stable_hash(&[&digest.to_le_bytes(), name.as_bytes(), &bytes]);
    });
    digest
}
