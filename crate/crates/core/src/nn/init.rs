//! Weight initialization: He-style fan-in scaling for conv and linear
//! weights, zeros for biases and batch-norm shifts.

use ndarray::{Array, Dimension, IntoDimension};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// N(0, sqrt(2 / fan_in)) over the given shape, drawn in row-major order so
/// the same seed always produces the same tensor.
pub fn he_normal<D: Dimension, Sh: IntoDimension<Dim = D>>(
    rng: &mut ChaCha8Rng,
    shape: Sh,
    fan_in: usize,
) -> Array<f64, D> {
    assert!(fan_in > 0, "fan_in must be positive");
    let std = (2.0 / fan_in as f64).sqrt();
    let dim = shape.into_dimension();
    let mut out = Array::zeros(dim);
    for v in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = z * std;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn same_seed_same_tensor() {
        let a: ndarray::Array2<f64> = he_normal(&mut rng_from_seed(11), (4, 3), 3);
        let b: ndarray::Array2<f64> = he_normal(&mut rng_from_seed(11), (4, 3), 3);
        assert_eq!(a, b);
    }

    #[test]
    fn spread_scales_with_fan_in() {
        // std = sqrt(2/fan_in): sample variance should land near 2/fan_in
        let mut rng = rng_from_seed(12);
        let w: ndarray::Array2<f64> = he_normal(&mut rng, (200, 50), 50);
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((var - 0.04).abs() < 0.01, "sample variance {var}");
    }
}
