//! AdamW with decoupled weight decay.
//!
//! β = (0.9, 0.999), ε = 1e-8, no warmup, no schedule. Moment estimates are
//! keyed by tensor name, so one optimizer can drive any [`Module`]
//! composition; buffers (running statistics) are never touched.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::nn::param::Module;
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    step_count: u64,
    m: BTreeMap<String, ArrayD<f64>>,
    v: BTreeMap<String, ArrayD<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {lr}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be nonnegative, got {weight_decay}"
            )));
        }
        Ok(Self { lr, weight_decay, step_count: 0, m: BTreeMap::new(), v: BTreeMap::new() })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over every trainable tensor: m and v track the gradient,
    /// the parameter moves by −lr·( m̂ / (√v̂ + ε) + wd·θ ).
    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let (lr, wd) = (self.lr, self.weight_decay);
        let (m_map, v_map) = (&mut self.m, &mut self.v);
        module.visit_trainable("", &mut |name, mut value, grad| {
            let m = m_map
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(grad.shape().to_vec()));
            let v = v_map
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(grad.shape().to_vec()));
            ndarray::Zip::from(&mut *m).and(&grad).for_each(|m, &g| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            });
            ndarray::Zip::from(&mut *v).and(&grad).for_each(|v, &g| {
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            });
            ndarray::Zip::from(&mut value).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *p -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + wd * *p);
            });
        });
    }
}
