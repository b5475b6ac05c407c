//! Class balancing by virtual augmentation records.
//!
//! Deficit classes are topped up to the target count with records that point
//! back at a source image and carry a replayable transform seed. Seeds hash
//! (global seed, source path, replica index), so the result is independent
//! of record order and stable across runs. Oversized classes are an error —
//! this pipeline never downsamples.

use std::collections::BTreeMap;

use super::manifest::{DatasetManifest, Origin, SampleRecord};
use crate::rng::derive_seed_for_path;
use crate::{Error, Result};

pub const DEFAULT_BALANCE_TARGET: usize = 625;

/// Bring every class up to exactly `target` records. Existing records are
/// untouched; new records are appended in (class, replica) order. Calling
/// this on an already-balanced manifest returns it unchanged.
pub fn balance_classes(
    manifest: &DatasetManifest,
    target: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if target == 0 {
        return Err(Error::InvalidConfig("balance target must be at least 1".into()));
    }
    let taxonomy = manifest.taxonomy().clone();
    let counts = manifest.counts();
    for (c, &n) in counts.iter().enumerate() {
        if n > target {
            return Err(Error::ClassOverTarget {
                class: taxonomy.name(c).to_string(),
                count: n,
                target,
            });
        }
    }

    // replica numbering continues past any augmented records already present,
    // so re-balancing to a higher target never reuses a seed
    let mut next_replica: BTreeMap<&str, u64> = BTreeMap::new();
    for r in manifest.records() {
        if r.origin == Origin::Augmented {
            *next_replica.entry(r.path.as_str()).or_insert(0) += 1;
        }
    }

    let mut records = manifest.records().to_vec();
    for c in 0..taxonomy.len() {
        let deficit = target - counts[c];
        if deficit == 0 {
            continue;
        }
        let sources: Vec<&SampleRecord> = manifest
            .records()
            .iter()
            .filter(|r| r.class == c && r.origin == Origin::Original)
            .collect();
        if sources.is_empty() {
            return Err(Error::ClassTooSmall {
                class: taxonomy.name(c).to_string(),
                count: 0,
                min: 1,
            });
        }
        for i in 0..deficit {
            let src = sources[i % sources.len()];
            let replica = next_replica.entry(src.path.as_str()).or_insert(0);
            let record_seed = derive_seed_for_path(seed, &src.path, *replica);
            *replica += 1;
            records.push(SampleRecord {
                path: src.path.clone(),
                class: c,
                origin: Origin::Augmented,
                seed: record_seed,
            });
        }
    }
    DatasetManifest::with_records(taxonomy, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::taxonomy::ClassTaxonomy;
    use std::collections::BTreeSet;

    fn manifest_with_counts(per_class: &[usize]) -> DatasetManifest {
        let tax = ClassTaxonomy::synthetic(per_class.len()).unwrap();
        let mut records = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                records.push(SampleRecord {
                    path: format!("{}/img{i:04}.png", tax.name(c)),
                    class: c,
                    origin: Origin::Original,
                    seed: 0,
                });
            }
        }
        DatasetManifest::with_records(tax, records).unwrap()
    }

    #[test]
    fn deficit_classes_reach_target_with_originals_preserved() {
        let m = manifest_with_counts(&[5, 7, 10]);
        let out = balance_classes(&m, 10, 1).unwrap();
        assert_eq!(out.counts(), vec![10, 10, 10]);
        // original records survive verbatim in their original positions
        assert_eq!(&out.records()[..m.len()], m.records());
        let augmented = out.records().iter().filter(|r| r.origin == Origin::Augmented).count();
        assert_eq!(augmented, 8);
    }

    #[test]
    fn already_balanced_manifest_is_a_fixed_point() {
        let m = manifest_with_counts(&[6, 6]);
        let out = balance_classes(&m, 6, 9).unwrap();
        assert_eq!(out.records(), m.records());
    }

    #[test]
    fn balancing_is_idempotent() {
        let m = manifest_with_counts(&[3, 8]);
        let once = balance_classes(&m, 8, 4).unwrap();
        let twice = balance_classes(&once, 8, 4).unwrap();
        assert_eq!(once.records(), twice.records());
    }

    #[test]
    fn class_above_target_is_rejected() {
        let m = manifest_with_counts(&[12, 5]);
        match balance_classes(&m, 10, 0) {
            Err(Error::ClassOverTarget { class, count: 12, target: 10 }) => {
                assert_eq!(class, "class00");
            }
            other => panic!("expected ClassOverTarget, got {other:?}"),
        }
    }

    #[test]
    fn replica_seeds_are_distinct_and_reproducible() {
        let m = manifest_with_counts(&[2]);
        let out = balance_classes(&m, 20, 3).unwrap();
        let seeds: Vec<u64> = out
            .records()
            .iter()
            .filter(|r| r.origin == Origin::Augmented)
            .map(|r| r.seed)
            .collect();
        assert_eq!(seeds.len(), 18);
        let unique: BTreeSet<u64> = seeds.iter().copied().collect();
        assert_eq!(unique.len(), 18, "replica seeds must not collide");
        let again = balance_classes(&m, 20, 3).unwrap();
        assert_eq!(out.records(), again.records());
        let other_seed = balance_classes(&m, 20, 4).unwrap();
        assert_ne!(out.records(), other_seed.records());
    }

    #[test]
    fn forty_eight_originals_become_625() {
        let m = manifest_with_counts(&[48]);
        let out = balance_classes(&m, DEFAULT_BALANCE_TARGET, 0).unwrap();
        assert_eq!(out.counts(), vec![625]);
        let augmented = out.records().iter().filter(|r| r.origin == Origin::Augmented).count();
        assert_eq!(augmented, 577);
        // round-robin over sources: each source used 577/48 = 12 times, 1 extra
        let first_source_replicas = out
            .records()
            .iter()
            .filter(|r| r.origin == Origin::Augmented && r.path.ends_with("img0000.png"))
            .count();
        assert_eq!(first_source_replicas, 13);
    }

    #[test]
    fn raising_the_target_extends_without_reusing_seeds() {
        let m = manifest_with_counts(&[4]);
        let first = balance_classes(&m, 8, 5).unwrap();
        let second = balance_classes(&first, 12, 5).unwrap();
        assert_eq!(second.counts(), vec![12]);
        let seeds: BTreeSet<u64> = second
            .records()
            .iter()
            .filter(|r| r.origin == Origin::Augmented)
            .map(|r| r.seed)
            .collect();
        assert_eq!(seeds.len(), 8);
    }

    #[test]
    fn empty_class_cannot_be_balanced() {
        let tax = ClassTaxonomy::synthetic(2).unwrap();
        let records = vec![
            SampleRecord { path: "class00/a.png".into(), class: 0, origin: Origin::Original, seed: 0 },
            SampleRecord { path: "class00/b.png".into(), class: 0, origin: Origin::Original, seed: 0 },
        ];
        let m = DatasetManifest::with_records(tax, records).unwrap();
        match balance_classes(&m, 5, 0) {
            Err(Error::ClassTooSmall { class, .. }) => assert_eq!(class, "class01"),
            other => panic!("expected ClassTooSmall, got {other:?}"),
        }
    }
}
