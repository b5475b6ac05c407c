//! Representation diagnostics: 2-D projection of encoder features and a
//! clustering-agreement score against the reference labels.

pub mod kmeans;
pub mod tsne;

pub use kmeans::{adjusted_rand_index, kmeans, KMeansResult};
pub use tsne::{tsne, TsneConfig};

use ndarray::Array2;

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct EmbedOutcome {
    /// 2-D coordinates, one row per feature row.
    pub coords: Array2<f64>,
    /// Cluster id per row, from k-means on the projected coordinates.
    pub clusters: Vec<usize>,
    /// Adjusted Rand index between clusters and the reference labels.
    pub ari: f64,
}

/// Project features to 2-D, cluster the projection into `k` groups, and
/// score the clustering against `labels`.
pub fn embed_and_cluster(
    features: &Array2<f64>,
    labels: &[usize],
    k: usize,
    cfg: &TsneConfig,
) -> Result<EmbedOutcome> {
    if labels.len() != features.nrows() {
        return Err(Error::ShapeMismatch {
            context: "embed_and_cluster",
            expected: format!("{} labels", features.nrows()),
            got: format!("{}", labels.len()),
        });
    }
    let coords = tsne(features, cfg)?;
    let clustering = kmeans(&coords, k, cfg.seed)?;
    let ari = adjusted_rand_index(labels, &clustering.assignments)?;
    Ok(EmbedOutcome { coords, clusters: clustering.assignments, ari })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    #[test]
    fn separable_features_cluster_in_agreement_with_labels() {
        let mut rng = rng_from_seed(12);
        let per = 12;
        let mut features = Array2::zeros((2 * per, 6));
        let mut labels = Vec::new();
        for i in 0..2 * per {
            let class = i / per;
            labels.push(class);
            for j in 0..6 {
                features[(i, j)] = 8.0 * class as f64 + rng.random_range(-0.5..0.5);
            }
        }
        let cfg = TsneConfig {
            perplexity: 5.0,
            iters: 300,
            exaggeration_iters: 100,
            momentum_switch_iter: 100,
            ..TsneConfig::default()
        };
        let outcome = embed_and_cluster(&features, &labels, 2, &cfg).unwrap();
        assert_eq!(outcome.coords.dim(), (2 * per, 2));
        assert_eq!(outcome.clusters.len(), 2 * per);
        assert!(outcome.ari > 0.9, "ari {}", outcome.ari);
    }

    #[test]
    fn label_count_mismatch_is_rejected() {
        let features = Array2::zeros((4, 3));
        assert!(embed_and_cluster(&features, &[0, 1], 2, &TsneConfig::default()).is_err());
    }
}
