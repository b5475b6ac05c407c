//! Classification metrics: confusion matrix, per-class precision/recall/F1,
//! weighted and macro aggregates.
//!
//! Empty denominators (a class never predicted, or with no support) resolve
//! to 0 with a logged warning rather than NaN. The weighted aggregates use
//! class support as weights, which makes weighted recall algebraically equal
//! to accuracy — a property the tests pin.

use serde::{Deserialize, Serialize};

use crate::data::taxonomy::ClassTaxonomy;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub total: usize,
    pub accuracy: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub f1_weighted: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub per_class: Vec<ClassMetrics>,
    /// confusion[r][c] counts records of true class r predicted as c.
    pub confusion: Vec<Vec<usize>>,
}

pub fn compute_metrics(
    y_true: &[usize],
    y_pred: &[usize],
    taxonomy: &ClassTaxonomy,
) -> Result<MetricsReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::ShapeMismatch {
            context: "compute_metrics",
            expected: format!("{} predictions", y_true.len()),
            got: format!("{}", y_pred.len()),
        });
    }
    if y_true.is_empty() {
        return Err(Error::InvalidConfig("compute_metrics needs at least one sample".into()));
    }
    let k = taxonomy.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k || p >= k {
            return Err(Error::TaxonomyMismatch(format!(
                "label {} outside taxonomy of {k} classes",
                t.max(p)
            )));
        }
        confusion[t][p] += 1;
    }

    let total = y_true.len();
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
        let tp = confusion[c][c];
        let precision = if predicted == 0 {
            if support > 0 {
                log::warn!("class '{}' never predicted; precision set to 0", taxonomy.name(c));
            }
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if support == 0 {
            log::warn!("class '{}' has no support; recall set to 0", taxonomy.name(c));
            0.0
        } else {
            tp as f64 / support as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            class: taxonomy.name(c).to_string(),
            support,
            precision,
            recall,
            f1,
        });
    }

    let weighted = |f: &dyn Fn(&ClassMetrics) -> f64| -> f64 {
        per_class.iter().map(|m| m.support as f64 * f(m)).sum::<f64>() / total as f64
    };
    let macro_avg = |f: &dyn Fn(&ClassMetrics) -> f64| -> f64 {
        per_class.iter().map(|m| f(m)).sum::<f64>() / k as f64
    };
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();

    Ok(MetricsReport {
        total,
        accuracy: correct as f64 / total as f64,
        precision_weighted: weighted(&|m| m.precision),
        recall_weighted: weighted(&|m| m.recall),
        f1_weighted: weighted(&|m| m.f1),
        precision_macro: macro_avg(&|m| m.precision),
        recall_macro: macro_avg(&|m| m.recall),
        f1_macro: macro_avg(&|m| m.f1),
        per_class,
        confusion,
    })
}
