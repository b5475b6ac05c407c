//! Exponential moving average of named parameter tensors, used for the
//! momentum branches (target networks, teachers).

use crate::error::{Error, Result};
use ndarray::ArrayD;
use std::collections::BTreeMap;

/// Named parameter tensors, ordered by name so iteration is stable.
pub type ParamMap = BTreeMap<String, ArrayD<f64>>;

/// xi' = m * xi + (1 - m) * theta, elementwise.
pub fn ema_update_tensor(target: &ArrayD<f64>, online: &ArrayD<f64>, m: f64) -> Result<ArrayD<f64>> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InvalidConfig(format!(
            "ema momentum must lie in [0, 1], got {m}"
        )));
    }
    if target.shape() != online.shape() {
        return Err(Error::ShapeMismatch {
            context: "ema_update_tensor",
            expected: format!("{:?}", target.shape()),
            got: format!("{:?}", online.shape()),
        });
    }
    let mut out = target.clone();
    out.zip_mut_with(online, |t, &o| *t = m * *t + (1.0 - m) * o);
    Ok(out)
}

/// Momentum copy of a model's parameters. Holds its own tensors; never
/// receives gradient updates, only EMA pulls toward the online parameters.
#[derive(Debug, Clone)]
pub struct MomentumState {
    pub params: ParamMap,
    pub update_count: u64,
}

impl MomentumState {
    /// Start as an exact copy of the online parameters.
    pub fn from_online(online: &ParamMap) -> Self {
        MomentumState {
            params: online.clone(),
            update_count: 0,
        }
    }

    /// Pull every tensor toward its online counterpart. The two maps must
    /// have identical key sets and shapes.
    pub fn update(&mut self, online: &ParamMap, m: f64) -> Result<()> {
        if self.params.len() != online.len() {
            return Err(Error::ShapeMismatch {
                context: "MomentumState::update",
                expected: format!("{} tensors", self.params.len()),
                got: format!("{} tensors", online.len()),
            });
        }
        for (name, target) in &self.params {
            let theta = online.get(name).ok_or_else(|| Error::ShapeMismatch {
                context: "MomentumState::update",
                expected: format!("parameter {name:?} present"),
                got: "missing".to_string(),
            })?;
            // validate all shapes before mutating anything
            if target.shape() != theta.shape() {
                return Err(Error::ShapeMismatch {
                    context: "MomentumState::update",
                    expected: format!("{name}: {:?}", target.shape()),
                    got: format!("{:?}", theta.shape()),
                });
            }
        }
        for (name, target) in self.params.iter_mut() {
            let theta = &online[name];
            let m_c = m;
            *target = ema_update_tensor(target, theta, m_c)?;
        }
        self.update_count += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::ArrayD;

    fn tensor(vals: &[f64]) -> ArrayD<f64> {
        ArrayD::from_shape_vec(vec![vals.len()], vals.to_vec()).unwrap()
    }

    #[test]
    fn momentum_one_freezes_target() {
        let t = tensor(&[0.25, -3.0]);
        let o = tensor(&[9.0, 9.0]);
        let out = ema_update_tensor(&t, &o, 1.0).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn momentum_zero_copies_online() {
        let t = tensor(&[0.25, -3.0]);
        let o = tensor(&[9.0, 9.0]);
        let out = ema_update_tensor(&t, &o, 0.0).unwrap();
        assert_eq!(out, o);
    }

    #[test]
    fn hundred_steps_match_closed_form() {
        // xi_k = m^k xi_0 + (1 - m^k) theta; xi_0 = 0, theta = 1, m = 0.99
        let mut xi = tensor(&[0.0]);
        let theta = tensor(&[1.0]);
        for _ in 0..100 {
            xi = ema_update_tensor(&xi, &theta, 0.99).unwrap();
        }
        assert_abs_diff_eq!(xi[[0]], 0.6339676587267709, epsilon = 1e-8);
    }

    #[test]
    fn momentum_outside_unit_interval_is_rejected() {
        let t = tensor(&[0.0]);
        assert!(ema_update_tensor(&t, &t, -0.1).is_err());
        assert!(ema_update_tensor(&t, &t, 1.1).is_err());
    }

    #[test]
    fn state_update_walks_all_tensors() {
        let mut online = ParamMap::new();
        online.insert("w".into(), tensor(&[1.0, 2.0]));
        online.insert("b".into(), tensor(&[4.0]));
        let mut state = MomentumState::from_online(&online);

        online.insert("w".into(), tensor(&[3.0, 4.0]));
        online.insert("b".into(), tensor(&[0.0]));
        state.update(&online, 0.5).unwrap();

        assert_abs_diff_eq!(state.params["w"][[0]], 2.0);
        assert_abs_diff_eq!(state.params["w"][[1]], 3.0);
        assert_abs_diff_eq!(state.params["b"][[0]], 2.0);
        assert_eq!(state.update_count, 1);
    }

    #[test]
    fn key_mismatch_is_rejected() {
        let mut online = ParamMap::new();
        online.insert("w".into(), tensor(&[1.0]));
        let mut state = MomentumState::from_online(&online);

        let mut renamed = ParamMap::new();
        renamed.insert("weight".into(), tensor(&[1.0]));
        assert!(state.update(&renamed, 0.9).is_err());
    }
}
