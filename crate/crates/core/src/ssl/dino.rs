//! Self-distillation loss with a centered, sharpened teacher.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};

/// Running center subtracted from teacher logits before sharpening.
#[derive(Debug, Clone)]
pub struct CenterState {
    pub center: Array1<f64>,
    pub momentum: f64,
}

impl CenterState {
    pub fn new(dim: usize, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!(
                "center momentum must lie in [0, 1], got {momentum}"
            )));
        }
        Ok(Self {
            center: Array1::zeros(dim),
            momentum,
        })
    }
}

/// `c' = lambda c + (1 - lambda) mean`; pure, returns the new state.
pub fn dino_center_update(state: &CenterState, teacher_batch_mean: &Array1<f64>) -> CenterState {
    let lambda = state.momentum;
    let center = state
        .center
        .iter()
        .zip(teacher_batch_mean.iter())
        .map(|(&c, &m)| lambda * c + (1.0 - lambda) * m)
        .collect();
    CenterState {
        center,
        momentum: lambda,
    }
}

#[derive(Debug, Clone)]
pub struct DinoOutput {
    pub loss: f64,
    /// Gradient w.r.t. the student logits (the teacher side gets none).
    pub grad: Array2<f64>,
    /// Teacher probability rows (diagnostics; the center tracks raw teacher
    /// logits, not these).
    pub teacher_probs: Array2<f64>,
}

/// Cross-entropy between the centered teacher distribution and the student,
/// averaged over row-aligned (student view, teacher other-view) pairs.
pub fn dino_loss(
    student_logits: &Array2<f64>,
    teacher_logits: &Array2<f64>,
    center: &CenterState,
    student_temp: f64,
    teacher_temp: f64,
) -> Result<DinoOutput> {
    if student_logits.dim() != teacher_logits.dim() {
        return Err(Error::ShapeMismatch {
            context: "dino_loss",
            expected: format!("{:?}", student_logits.dim()),
            got: format!("{:?}", teacher_logits.dim()),
        });
    }
    if student_logits.ncols() != center.center.len() {
        return Err(Error::ShapeMismatch {
            context: "dino_loss center",
            expected: format!("{} dims", student_logits.ncols()),
            got: format!("{} dims", center.center.len()),
        });
    }
    if student_temp <= 0.0 || teacher_temp <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "temperatures must be positive, got student {student_temp}, teacher {teacher_temp}"
        )));
    }
    let (rows, dim) = student_logits.dim();
    if rows == 0 {
        return Err(Error::BatchTooSmall(0));
    }

    let mut loss = 0.0;
    let mut grad = Array2::zeros((rows, dim));
    let mut teacher_probs = Array2::zeros((rows, dim));
    let inv_rows = 1.0 / rows as f64;

    for i in 0..rows {
        // teacher: softmax((t - c) / tau_t), sharpened, no gradient
        let mut t_scaled: Vec<f64> = (0..dim)
            .map(|k| (teacher_logits[(i, k)] - center.center[k]) / teacher_temp)
            .collect();
        let t_max = t_scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut t_sum = 0.0;
        for v in t_scaled.iter_mut() {
            *v = (*v - t_max).exp();
            t_sum += *v;
        }
        for (k, v) in t_scaled.iter().enumerate() {
            teacher_probs[(i, k)] = v / t_sum;
        }

        // student log-softmax at tau_s
        let s_scaled: Vec<f64> = (0..dim)
            .map(|k| student_logits[(i, k)] / student_temp)
            .collect();
        let s_max = s_scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s_lse = s_max
            + s_scaled
                .iter()
                .map(|v| (v - s_max).exp())
                .sum::<f64>()
                .ln();

        for k in 0..dim {
            let t_k = teacher_probs[(i, k)];
            let log_s = s_scaled[k] - s_lse;
            loss -= t_k * log_s;
            let s_prob = (s_scaled[k] - s_lse).exp();
            grad[(i, k)] = (s_prob - t_k) / student_temp * inv_rows;
        }
    }

    Ok(DinoOutput {
        loss: loss * inv_rows,
        grad,
        teacher_probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn center(dim: usize) -> CenterState {
        CenterState::new(dim, 0.9).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Array2::zeros((3, 4));
        let out = dino_loss(&logits, &logits, &center(4), 0.1, 0.04).unwrap();
        assert_abs_diff_eq!(out.loss, 4.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn perfectly_centered_teacher_is_uniform() {
        // center equal to the teacher logits flattens the teacher distribution
        let teacher = array![[3.0, -1.0, 0.5]];
        let student = Array2::zeros((1, 3));
        let state = CenterState {
            center: array![3.0, -1.0, 0.5],
            momentum: 0.9,
        };
        let out = dino_loss(&student, &teacher, &state, 0.1, 0.04).unwrap();
        assert_abs_diff_eq!(out.loss, 3.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn sharp_teacher_matching_student_fixture() {
        // frozen from direct evaluation: teacher softmax(25, 0) is numerically
        // one-hot; student prob of that class is softmax(10, 0)_1
        let logits = array![[1.0, 0.0]];
        let out = dino_loss(&logits, &logits, &center(2), 0.1, 0.04).unwrap();
        assert_abs_diff_eq!(out.loss, 4.5399038097168754e-5, epsilon = 1e-9);
    }

    #[test]
    fn teacher_rows_sum_to_one() {
        let student = array![[0.3, -0.7, 1.1], [2.0, 0.0, -1.0]];
        let teacher = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]];
        let out = dino_loss(&student, &teacher, &center(3), 0.1, 0.04).unwrap();
        for row in out.teacher_probs.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn lower_teacher_temperature_sharpens() {
        let teacher = array![[1.0, 0.2, -0.5]];
        let student = Array2::zeros((1, 3));
        let sharp = dino_loss(&student, &teacher, &center(3), 0.1, 0.02).unwrap();
        let soft = dino_loss(&student, &teacher, &center(3), 0.1, 0.2).unwrap();
        let max_p = |p: &Array2<f64>| p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(max_p(&sharp.teacher_probs) > max_p(&soft.teacher_probs));
    }

    #[test]
    fn center_update_arithmetic_and_boundaries() {
        let mean = Array1::ones(3);
        let s = CenterState::new(3, 0.9).unwrap();
        let s2 = dino_center_update(&s, &mean);
        assert_abs_diff_eq!(s2.center[0], 0.1, epsilon = 1e-12);

        let frozen = CenterState::new(3, 1.0).unwrap();
        assert_eq!(dino_center_update(&frozen, &mean).center, frozen.center);

        let copy = CenterState::new(3, 0.0).unwrap();
        assert_eq!(dino_center_update(&copy, &mean).center, mean);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = Array2::zeros((1, 3));
        let b = Array2::zeros((1, 4));
        assert!(dino_loss(&a, &b, &center(3), 0.1, 0.04).is_err());
    }
}
