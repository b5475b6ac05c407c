//! Dataset manifests: ordered record lists with a taxonomy fingerprint.
//!
//! A manifest is the unit of exchange between pipeline stages. It is stored
//! as a tab-separated text file — one record per line (`path label origin
//! seed`) under a header carrying the taxonomy hash — so that splits and
//! balanced datasets are diffable, byte-reproducible artifacts.
//!
//! Augmented records are *virtual*: `path` points at the source image and
//! `seed` replays the exact transform at load time. Nothing is ever written
//! next to the source data.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use super::taxonomy::ClassTaxonomy;
use crate::{Error, Result};

const HEADER_PREFIX: &str = "# manifest v1 taxonomy=";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Original,
    Augmented,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Original => "original",
            Origin::Augmented => "augmented",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "original" => Some(Origin::Original),
            "augmented" => Some(Origin::Augmented),
            _ => None,
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// Image file location. For augmented records this is the *source* image.
    pub path: String,
    /// Class index into the manifest's taxonomy.
    pub class: usize,
    pub origin: Origin,
    /// Replay seed; 0 by convention for originals.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    taxonomy: ClassTaxonomy,
    records: Vec<SampleRecord>,
    /// Undecodable files skipped during a directory scan (empty after
    /// `read_tsv`; informational only, never serialized).
    pub skipped: Vec<PathBuf>,
}

impl DatasetManifest {
    pub fn with_records(taxonomy: ClassTaxonomy, records: Vec<SampleRecord>) -> Result<Self> {
        for r in &records {
            if r.class >= taxonomy.len() {
                return Err(Error::TaxonomyMismatch(format!(
                    "record '{}' has class index {} outside taxonomy of {} classes",
                    r.path,
                    r.class,
                    taxonomy.len()
                )));
            }
        }
        Ok(Self { taxonomy, records, skipped: Vec::new() })
    }

    pub fn taxonomy(&self) -> &ClassTaxonomy {
        &self.taxonomy
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Histogram of record labels, indexed by taxonomy class index.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.taxonomy.len()];
        for r in &self.records {
            counts[r.class] += 1;
        }
        counts
    }

    /// Scan `root`, which must hold one subdirectory per taxonomy class.
    /// Every decodable image is listed exactly once, labeled by its
    /// directory; undecodable files are skipped with a warning. The record
    /// order is lexicographic by path.
    pub fn scan(root: &Path, taxonomy: &ClassTaxonomy) -> Result<Self> {
        let mut has_any_dir = false;
        if root.is_dir() {
            for entry in fs::read_dir(root)? {
                if entry?.path().is_dir() {
                    has_any_dir = true;
                    break;
                }
            }
        }
        if !has_any_dir {
            return Err(Error::NoClasses(root.to_path_buf()));
        }

        let mut records = Vec::new();
        let mut skipped = Vec::new();
        for (class, name) in taxonomy.classes().iter().enumerate() {
            let dir = root.join(name);
            if !dir.is_dir() {
                return Err(Error::TaxonomyMismatch(format!(
                    "class directory '{}' missing under {}",
                    name,
                    root.display()
                )));
            }
            let mut entries: Vec<PathBuf> = fs::read_dir(&dir)?
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            for path in entries {
                let Some(path_str) = path.to_str() else {
                    log::warn!("skipping non-UTF-8 path {}", path.display());
                    skipped.push(path);
                    continue;
                };
                match image::open(&path) {
                    Ok(_) => records.push(SampleRecord {
                        path: path_str.to_string(),
                        class,
                        origin: Origin::Original,
                        seed: 0,
                    }),
                    Err(err) => {
                        log::warn!("skipping undecodable file {}: {err}", path.display());
                        skipped.push(path);
                    }
                }
            }
        }
        records.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Self { taxonomy: taxonomy.clone(), records, skipped })
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(HEADER_PREFIX);
        out.push_str(&format!("{:016x}\n", self.taxonomy.hash()));
        for r in &self.records {
            if r.path.contains('\t') || r.path.contains('\n') {
                return Err(Error::InvalidConfig(format!(
                    "path '{}' contains tab or newline and cannot be serialized",
                    r.path
                )));
            }
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.path,
                self.taxonomy.name(r.class),
                r.origin,
                r.seed
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Read a manifest written by [`write_tsv`]. The taxonomy hash in the
    /// header must match `taxonomy`, which guards against mixing artifacts
    /// from different class sets.
    pub fn read_tsv(path: &Path, taxonomy: &ClassTaxonomy) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let Some((_, header)) = lines.next() else {
            return Err(Error::ManifestParse { line: 1, msg: "empty file".into() });
        };
        let Some(hash_hex) = header.strip_prefix(HEADER_PREFIX) else {
            return Err(Error::ManifestParse {
                line: 1,
                msg: format!("bad header '{header}'"),
            });
        };
        let hash = u64::from_str_radix(hash_hex.trim(), 16).map_err(|e| Error::ManifestParse {
            line: 1,
            msg: format!("bad taxonomy hash: {e}"),
        })?;
        if hash != taxonomy.hash() {
            return Err(Error::TaxonomyMismatch(format!(
                "manifest {} was written under taxonomy {:016x}, expected {:016x}",
                path.display(),
                hash,
                taxonomy.hash()
            )));
        }

        let mut records = Vec::new();
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::ManifestParse {
                    line: lineno,
                    msg: format!("expected 4 tab-separated fields, got {}", fields.len()),
                });
            }
            let class = taxonomy.index_of(fields[1]).ok_or_else(|| Error::ManifestParse {
                line: lineno,
                msg: format!("unknown class '{}'", fields[1]),
            })?;
            let origin = Origin::parse(fields[2]).ok_or_else(|| Error::ManifestParse {
                line: lineno,
                msg: format!("unknown origin '{}'", fields[2]),
            })?;
            let seed = fields[3].parse::<u64>().map_err(|e| Error::ManifestParse {
                line: lineno,
                msg: format!("bad seed: {e}"),
            })?;
            records.push(SampleRecord { path: fields[0].to_string(), class, origin, seed });
        }
        Self::with_records(taxonomy.clone(), records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma};
    use tempfile::TempDir;

    fn write_png(path: &Path, w: u32, h: u32, value: u8) {
        let img = GrayImage::from_pixel(w, h, Luma([value]));
        img.save(path).unwrap();
    }

    fn synthetic_root(classes: usize, per_class: usize) -> (TempDir, ClassTaxonomy) {
        let tmp = TempDir::new().unwrap();
        let tax = ClassTaxonomy::synthetic(classes).unwrap();
        for name in tax.classes() {
            let dir = tmp.path().join(name);
            fs::create_dir(&dir).unwrap();
            for i in 0..per_class {
                write_png(&dir.join(format!("img{i:03}.png")), 8, 8, (i * 7) as u8);
            }
        }
        (tmp, tax)
    }

    #[test]
    fn scan_counts_every_decodable_image_once() {
        let (tmp, tax) = synthetic_root(17, 2);
        let m = DatasetManifest::scan(tmp.path(), &tax).unwrap();
        assert_eq!(m.len(), 34);
        assert_eq!(m.counts(), vec![2; 17]);
        assert!(m.skipped.is_empty());
        // lexicographic by path
        let mut paths: Vec<&str> = m.records().iter().map(|r| r.path.as_str()).collect();
        let sorted = {
            let mut s = paths.clone();
            s.sort();
            s
        };
        assert_eq!(paths, sorted);
        paths.dedup();
        assert_eq!(paths.len(), 34);
    }

    #[test]
    fn scan_skips_undecodable_files_with_warning() {
        let (tmp, tax) = synthetic_root(3, 2);
        fs::write(tmp.path().join("class00").join("notes.txt"), b"not an image").unwrap();
        let m = DatasetManifest::scan(tmp.path(), &tax).unwrap();
        assert_eq!(m.len(), 6);
        assert_eq!(m.skipped.len(), 1);
        assert!(m.skipped[0].ends_with("notes.txt"));
    }

    #[test]
    fn scan_rejects_missing_class_dir_naming_it() {
        let (tmp, tax) = synthetic_root(3, 1);
        fs::remove_dir_all(tmp.path().join("class01")).unwrap();
        let err = DatasetManifest::scan(tmp.path(), &tax).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("class01"), "error should name the class: {msg}");
    }

    #[test]
    fn scan_rejects_empty_root() {
        let tmp = TempDir::new().unwrap();
        let tax = ClassTaxonomy::synthetic(2).unwrap();
        match DatasetManifest::scan(tmp.path(), &tax) {
            Err(Error::NoClasses(_)) => {}
            other => panic!("expected NoClasses, got {other:?}"),
        }
    }

    #[test]
    fn tsv_round_trip_is_byte_stable() {
        let (tmp, tax) = synthetic_root(4, 3);
        let m = DatasetManifest::scan(tmp.path(), &tax).unwrap();
        let f1 = tmp.path().join("a.tsv");
        let f2 = tmp.path().join("b.tsv");
        m.write_tsv(&f1).unwrap();
        let back = DatasetManifest::read_tsv(&f1, &tax).unwrap();
        assert_eq!(back.records(), m.records());
        back.write_tsv(&f2).unwrap();
        assert_eq!(fs::read(&f1).unwrap(), fs::read(&f2).unwrap());
    }

    #[test]
    fn tsv_rejects_wrong_taxonomy() {
        let (tmp, tax) = synthetic_root(4, 1);
        let m = DatasetManifest::scan(tmp.path(), &tax).unwrap();
        let f = tmp.path().join("m.tsv");
        m.write_tsv(&f).unwrap();
        let other = ClassTaxonomy::synthetic(5).unwrap();
        match DatasetManifest::read_tsv(&f, &other) {
            Err(Error::TaxonomyMismatch(_)) => {}
            other => panic!("expected TaxonomyMismatch, got {other:?}"),
        }
    }

    #[test]
    fn tsv_rejects_malformed_lines() {
        let tmp = TempDir::new().unwrap();
        let tax = ClassTaxonomy::synthetic(2).unwrap();
        let f = tmp.path().join("m.tsv");
        fs::write(
            &f,
            format!("{HEADER_PREFIX}{:016x}\nonly\tthree\tfields\n", tax.hash()),
        )
        .unwrap();
        match DatasetManifest::read_tsv(&f, &tax) {
            Err(Error::ManifestParse { line: 2, .. }) => {}
            other => panic!("expected ManifestParse at line 2, got {other:?}"),
        }
    }

    #[test]
    fn with_records_validates_class_indices() {
        let tax = ClassTaxonomy::synthetic(2).unwrap();
        let bad = SampleRecord {
            path: "x.png".into(),
            class: 2,
            origin: Origin::Original,
            seed: 0,
        };
        assert!(DatasetManifest::with_records(tax, vec![bad]).is_err());
    }
}
