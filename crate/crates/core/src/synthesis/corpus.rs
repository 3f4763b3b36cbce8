//! Image corpus: every image file under a directory, plus an optional
//! `manifest.csv` with `file,category` columns (paths relative to the root).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

const EXTENSIONS: [&str; 7] = ["png", "jpg", "jpeg", "gif", "webp", "bmp", "tiff"];
pub const MANIFEST: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusImage {
    /// Relative to the corpus root, `/`-separated.
    pub rel_path: String,
    pub category: Option<String>,
    pub sha256: String,
}

impl CorpusImage {
    pub fn key(&self, question_index: u32) -> String {
        format!("{}-q{question_index}", &self.sha256[..16])
    }
}

#[derive(Deserialize)]
struct ManifestRow {
    file: String,
    category: String,
}

/// Lists the corpus in path order. Byte-identical images are kept once.
pub fn load_corpus(root: &Path) -> Result<Vec<CorpusImage>, String> {
    if !root.is_dir() {
        return Err(format!("corpus directory {} is not readable", root.display()));
    }
    let mut categories = BTreeMap::new();
    let manifest = root.join(MANIFEST);
    if manifest.exists() {
        let mut reader = csv::Reader::from_path(&manifest).map_err(|e| format!("{}: {e}", manifest.display()))?;
        for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
            let row = row.map_err(|e| format!("{} row {}: {e}", manifest.display(), i + 1))?;
            categories.insert(row.file, row.category);
        }
    }

    let mut images = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| format!("walking {}: {e}", root.display()))?;
        let path = entry.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !entry.file_type().is_file() || !is_image {
            continue;
        }
        let rel = path.strip_prefix(root).expect("walk stays under root");
        let rel_path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let sha256 = hex::encode(Sha256::digest(&bytes));
        if !seen.insert(sha256.clone()) {
            tracing::info!(path = %rel_path, "skipping duplicate image");
            continue;
        }
        images.push(CorpusImage { category: categories.get(&rel_path).cloned(), rel_path, sha256 });
    }
    Ok(images)
}
