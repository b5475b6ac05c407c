//! Class taxonomy: the ordered set of labels a dataset is organized under.
//!
//! The canonical brain-MRI taxonomy is 17 classes formed as tumor-family ×
//! MRI-sequence (five families with T1/T1C+/T2, plus Normal with T1/T2).
//! Synthetic datasets use small generic taxonomies; everything downstream
//! (manifests, splits, metrics) is keyed by class *index* in taxonomy order,
//! so the order here is load-bearing and must never be shuffled.

use crate::rng::stable_hash;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

pub const TUMOR_FAMILIES: [&str; 5] = [
    "Glioma",
    "Schwannoma",
    "Meningioma",
    "Neurocitoma",
    "OtherLesions",
];
pub const TUMOR_SEQUENCES: [&str; 3] = ["T1", "T1C+", "T2"];
pub const NORMAL_SEQUENCES: [&str; 2] = ["T1", "T2"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTaxonomy {
    classes: Vec<String>,
}

impl ClassTaxonomy {
    /// Build from an explicit ordered class list. Rejects duplicates and
    /// empty lists; any further structure is the caller's business.
    pub fn new(classes: Vec<String>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::TaxonomyMismatch("no classes given".into()));
        }
        for (i, c) in classes.iter().enumerate() {
            if c.is_empty() || c.contains('\t') || c.contains('\n') {
                return Err(Error::TaxonomyMismatch(format!(
                    "class {i} has an empty or unserializable name"
                )));
            }
            if classes[..i].contains(c) {
                return Err(Error::TaxonomyMismatch(format!("duplicate class '{c}'")));
            }
        }
        Ok(Self { classes })
    }

    /// The 17-class brain-MRI taxonomy: five tumor families × three
    /// sequences, plus Normal × two sequences, in canonical order.
    pub fn brain_mri() -> Self {
        let mut classes = Vec::with_capacity(17);
        for family in TUMOR_FAMILIES {
            for seq in TUMOR_SEQUENCES {
                classes.push(format!("{family}-{seq}"));
            }
        }
        for seq in NORMAL_SEQUENCES {
            classes.push(format!("Normal-{seq}"));
        }
        Self { classes }
    }

    /// Generic k-class taxonomy for synthetic data: class00, class01, …
    pub fn synthetic(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::TaxonomyMismatch("synthetic taxonomy needs k >= 1".into()));
        }
        Self::new((0..k).map(|i| format!("class{i:02}")).collect())
    }

    /// One class name per line; blank lines and `#` comments skipped.
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let classes: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        Self::new(classes)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn name(&self, index: usize) -> &str {
        &self.classes[index]
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    /// Stable fingerprint written into manifest headers so a manifest can
    /// never be silently read under a different taxonomy.
    pub fn hash(&self) -> u64 {
        let parts: Vec<&[u8]> = self.classes.iter().map(|c| c.as_bytes()).collect();
        stable_hash(&parts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brain_mri_has_family_by_sequence_structure() {
        let tax = ClassTaxonomy::brain_mri();
        assert_eq!(tax.len(), 17);
        // 5 families x 3 sequences, then Normal x 2
        assert_eq!(tax.name(0), "Glioma-T1");
        assert_eq!(tax.name(1), "Glioma-T1C+");
        assert_eq!(tax.name(2), "Glioma-T2");
        assert_eq!(tax.name(14), "OtherLesions-T2");
        assert_eq!(tax.name(15), "Normal-T1");
        assert_eq!(tax.name(16), "Normal-T2");
        let normals = tax.classes().iter().filter(|c| c.starts_with("Normal-")).count();
        assert_eq!(normals, 2);
        for family in TUMOR_FAMILIES {
            let n = tax
                .classes()
                .iter()
                .filter(|c| c.starts_with(&format!("{family}-")))
                .count();
            assert_eq!(n, 3, "family {family}");
        }
    }

    #[test]
    fn duplicate_and_empty_classes_are_rejected() {
        assert!(ClassTaxonomy::new(vec![]).is_err());
        assert!(ClassTaxonomy::new(vec!["a".into(), "a".into()]).is_err());
        assert!(ClassTaxonomy::new(vec!["a".into(), "".into()]).is_err());
        assert!(ClassTaxonomy::new(vec!["a\tb".into()]).is_err());
    }

    #[test]
    fn index_round_trips() {
        let tax = ClassTaxonomy::brain_mri();
        for (i, c) in tax.classes().iter().enumerate() {
            assert_eq!(tax.index_of(c), Some(i));
        }
        assert_eq!(tax.index_of("Gliomas-T1"), None);
    }

    #[test]
    fn hash_tracks_names_and_order() {
        let a = ClassTaxonomy::brain_mri();
        let b = ClassTaxonomy::brain_mri();
        assert_eq!(a.hash(), b.hash());
        let swapped = ClassTaxonomy::new(vec!["Glioma-T1C+".into(), "Glioma-T1".into()]).unwrap();
        let straight = ClassTaxonomy::new(vec!["Glioma-T1".into(), "Glioma-T1C+".into()]).unwrap();
        assert_ne!(swapped.hash(), straight.hash());
        assert_ne!(a.hash(), ClassTaxonomy::synthetic(17).unwrap().hash());
    }

    #[test]
    fn synthetic_taxonomy_sizes() {
        assert_eq!(ClassTaxonomy::synthetic(4).unwrap().len(), 4);
        assert!(ClassTaxonomy::synthetic(0).is_err());
    }
}
