use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CaganError, Result};

/// Name of the manifest file inside a dataset directory.
pub const MANIFEST_FILE: &str = "manifest.tsv";

/// One human/article pair of a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairEntry {
    pub pair_id: String,
    /// Path of the person image, relative to the dataset root.
    pub human: PathBuf,
    /// Path of the standalone article image, relative to the dataset root.
    pub article: PathBuf,
}

/// Validated list of pairs under a dataset root.
///
/// Invariants: pair ids are unique and there are at least two pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    root: PathBuf,
    entries: Vec<PairEntry>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<PairEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.pair_id.is_empty() || e.pair_id.contains(['\t', '\n']) {
                return Err(CaganError::Validation(format!("invalid pair_id {:?}", e.pair_id)));
            }
            if !seen.insert(e.pair_id.as_str()) {
                return Err(CaganError::Validation(format!("duplicate pair_id `{}`", e.pair_id)));
            }
        }
        if entries.len() < 2 {
            return Err(CaganError::DatasetTooSmall(entries.len()));
        }
        Ok(DatasetManifest {
            root: root.into(),
            entries,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[PairEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn human_path(&self, index: usize) -> PathBuf {
        self.root.join(&self.entries[index].human)
    }

    pub fn article_path(&self, index: usize) -> PathBuf {
        self.root.join(&self.entries[index].article)
    }

    pub fn index_of(&self, pair_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.pair_id == pair_id)
    }

    /// Serializes to the tab-separated manifest text.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                e.pair_id,
                path_text(&e.human),
                path_text(&e.article)
            ));
        }
        out
    }

    /// Writes `manifest.tsv` into the root directory.
    pub fn write(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let mut file = fs::File::create(&path).map_err(|e| CaganError::io(&path, e))?;
        file.write_all(self.to_tsv().as_bytes())
            .map_err(|e| CaganError::io(&path, e))
    }
}

fn path_text(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

/// Parses manifest text: one `pair_id<TAB>human_relpath<TAB>article_relpath`
/// record per line. Blank lines and lines starting with `#` are skipped.
pub fn parse_manifest(root: &Path, text: &str) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(CaganError::Validation(format!(
                "manifest line {} must have three tab-separated fields",
                lineno + 1
            )));
        }
        entries.push(PairEntry {
            pair_id: fields[0].to_string(),
            human: PathBuf::from(fields[1]),
            article: PathBuf::from(fields[2]),
        });
    }
    DatasetManifest::new(root, entries)
}

/// Reads and validates `root/manifest.tsv`, checking that every listed image
/// exists and decodes.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(CaganError::Validation(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CaganError::io(&path, e))?;
    let manifest = parse_manifest(root, &text)?;
    for (i, e) in manifest.entries().iter().enumerate() {
        for (what, p) in [("human", manifest.human_path(i)), ("article", manifest.article_path(i))] {
            if !p.is_file() {
                return Err(CaganError::Ingestion {
                    pair_id: e.pair_id.clone(),
                    reason: format!("{what} image {} is missing", p.display()),
                });
            }
            image::open(&p).map_err(|err| CaganError::Ingestion {
                pair_id: e.pair_id.clone(),
                reason: format!("{what} image {} does not decode: {err}", p.display()),
            })?;
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records_and_skips_comments() {
        let m = parse_manifest(Path::new("/d"), "# header\na\th/a.png\tc/a.png\n\nb\th/b.png\tc/b.png\n").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.human_path(1), PathBuf::from("/d/h/b.png"));
        assert_eq!(m.index_of("b"), Some(1));
    }

    #[test]
    fn duplicate_ids_and_tiny_sets_are_rejected() {
        let dup = parse_manifest(Path::new("."), "a\tx\ty\na\tx\ty\n").unwrap_err();
        assert!(matches!(dup, CaganError::Validation(ref m) if m.contains("duplicate")));
        let small = parse_manifest(Path::new("."), "a\tx\ty\n").unwrap_err();
        assert!(matches!(small, CaganError::DatasetTooSmall(1)));
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse_manifest(Path::new("."), "a\tx\n").is_err());
        assert!(parse_manifest(Path::new("."), "a\tx\ty\tz\n").is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let m = parse_manifest(Path::new("/r"), "p0\th/0.png\ta/0.png\np1\th/1.png\ta/1.png\n").unwrap();
        assert_eq!(parse_manifest(Path::new("/r"), &m.to_tsv()).unwrap(), m);
    }
}
