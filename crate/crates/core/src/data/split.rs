//! Deterministic stratified train/val/test splitting.
//!
//! Global split sizes come first: train = round(train_frac·T), val =
//! floor(val_frac·T), test = remainder — the only rounding that yields
//! 8500/1062/1063 from a 10625-record corpus. Those totals are then
//! apportioned across classes by largest remainder (quota = total·n_c/T,
//! capacity-capped, ties broken by taxonomy order), which keeps every class
//! within one record of its exact share. Records move between splits only
//! via the per-class seeded shuffle, so a seed pins the entire partition.

use rand::seq::SliceRandom;

use super::manifest::DatasetManifest;
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

pub const MIN_RECORDS_PER_CLASS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_frac: 0.8, val_frac: 0.1, test_frac: 0.1, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidConfig(format!(
                "split fractions must lie in [0, 1], got {fracs:?}"
            )));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Apportion `total` seats over classes proportionally to `weights`
/// (largest-remainder), never exceeding `capacity`. Ties and seat order are
/// broken by class index, so the result is a pure function of the inputs.
fn apportion(total: usize, weights: &[usize], capacity: &[usize]) -> Vec<usize> {
    let weight_sum: usize = weights.iter().sum();
    let k = weights.len();
    if total == 0 || weight_sum == 0 {
        return vec![0; k];
    }
    let mut seats: Vec<usize> = Vec::with_capacity(k);
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(k);
    for c in 0..k {
        let quota = total as f64 * weights[c] as f64 / weight_sum as f64;
        let base = (quota.floor() as usize).min(capacity[c]);
        seats.push(base);
        fracs.push((c, quota - quota.floor()));
    }
    // stable sort keeps class order among equal remainders
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let mut remaining = total - seats.iter().sum::<usize>();
    while remaining > 0 {
        let mut gave = false;
        for &(c, _) in &fracs {
            if remaining == 0 {
                break;
            }
            if seats[c] < capacity[c] {
                seats[c] += 1;
                remaining -= 1;
                gave = true;
            }
        }
        if !gave {
            break; // capacities exhausted; caller guarantees this can't strand seats
        }
    }
    seats
}

/// Split a manifest into train/val/test per `spec`. Every class needs at
/// least [`MIN_RECORDS_PER_CLASS`] records; the output is a partition of the
/// input and is byte-identical across runs with the same seed.
pub fn stratified_split(
    manifest: &DatasetManifest,
    spec: &SplitSpec,
) -> Result<(DatasetManifest, DatasetManifest, DatasetManifest)> {
    spec.validate()?;
    let taxonomy = manifest.taxonomy();
    let counts = manifest.counts();
    for (c, &n) in counts.iter().enumerate() {
        if n < MIN_RECORDS_PER_CLASS {
            return Err(Error::ClassTooSmall {
                class: taxonomy.name(c).to_string(),
                count: n,
                min: MIN_RECORDS_PER_CLASS,
            });
        }
    }

    let total = manifest.len();
    let train_total = ((spec.train_frac * total as f64).round() as usize).min(total);
    let val_total = ((spec.val_frac * total as f64).floor() as usize).min(total - train_total);
    let test_total = total - train_total - val_total;

    let train_counts = apportion(train_total, &counts, &counts);
    let val_capacity: Vec<usize> =
        counts.iter().zip(&train_counts).map(|(n, t)| n - t).collect();
    let val_counts = apportion(val_total, &counts, &val_capacity);
    debug_assert_eq!(train_counts.iter().sum::<usize>(), train_total);
    debug_assert_eq!(val_counts.iter().sum::<usize>(), val_total);

    let mut train_idx = Vec::with_capacity(train_total);
    let mut val_idx = Vec::with_capacity(val_total);
    let mut test_idx = Vec::with_capacity(test_total);
    for c in 0..taxonomy.len() {
        let mut class_idx: Vec<usize> = manifest
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.class == c)
            .map(|(i, _)| i)
            .collect();
        let mut rng = rng_from_seed(derive_seed(spec.seed, "split", c as u64));
        class_idx.shuffle(&mut rng);
        let (tr, rest) = class_idx.split_at(train_counts[c]);
        let (va, te) = rest.split_at(val_counts[c]);
        train_idx.extend_from_slice(tr);
        val_idx.extend_from_slice(va);
        test_idx.extend_from_slice(te);
    }

    let build = |mut idx: Vec<usize>| -> Result<DatasetManifest> {
        idx.sort_unstable(); // manifest order is lexicographic; keep it
        let records = idx.into_iter().map(|i| manifest.records()[i].clone()).collect();
        DatasetManifest::with_records(taxonomy.clone(), records)
    };
    Ok((build(train_idx)?, build(val_idx)?, build(test_idx)?))
}
