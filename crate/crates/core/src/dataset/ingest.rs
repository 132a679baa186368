//! Generic folder ingester: `root/<source>/<semantic>/<image>.{png,jpg,jpeg}`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, DatasetManifest, ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::imaging::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub real_source: String,
    /// `None` marks every semantic as seen.
    pub seen_semantics: Option<Vec<String>>,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            real_source: "real".into(),
            seen_semantics: None,
            val_fraction: 1.0 / 12.0,
            test_fraction: 1.0 / 12.0,
            seed: 0,
        }
    }
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() != want_dirs {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        let is_image = || {
            path.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        };
        if want_dirs || is_image() {
            out.push(name);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every image under `root`. Seen cells are shuffled with the seed and
/// split into train/val/test by the configured fractions; unseen semantics go
/// entirely to test.
pub fn ingest_folder(root: &Path, cfg: &IngestConfig) -> Result<Dataset> {
    let val_test = cfg.val_fraction + cfg.test_fraction;
    if cfg.val_fraction < 0.0 || cfg.test_fraction < 0.0 || val_test >= 1.0 {
        return Err(Error::InvalidArgument("val/test fractions must be ≥ 0 and sum below 1".into()));
    }
    let sources = sorted_entries(root, true)?;
    if !sources.contains(&cfg.real_source) {
        return Err(Error::InvalidArgument(format!(
            "no `{}` folder under {}",
            cfg.real_source,
            root.display()
        )));
    }
    let mut semantics: Vec<String> = Vec::new();
    for src in &sources {
        for sem in sorted_entries(&root.join(src), true)? {
            if !semantics.contains(&sem) {
                semantics.push(sem);
            }
        }
    }
    semantics.sort();
    let seen = cfg.seen_semantics.clone().unwrap_or_else(|| semantics.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();
    let mut images = Vec::new();
    for src in &sources {
        for sem in &semantics {
            let dir = root.join(src).join(sem);
            if !dir.is_dir() {
                continue;
            }
            let mut files = sorted_entries(&dir, false)?;
            files.shuffle(&mut rng);
            let n = files.len();
            let n_val = (n as f64 * cfg.val_fraction).round() as usize;
            let n_test = (n as f64 * cfg.test_fraction).round() as usize;
            for (i, file) in files.iter().enumerate() {
                let split = if !seen.contains(sem) || i < n_test {
                    Split::Test
                } else if i < n_test + n_val {
                    Split::Val
                } else {
                    Split::Train
                };
                let stem = Path::new(file).file_stem().and_then(|s| s.to_str()).unwrap_or(file);
                let id = format!("{src}/{sem}/{stem}");
                records.push(ManifestRecord {
                    path: format!("images/{id}.png"),
                    id,
                    source: src.clone(),
                    semantic: sem.clone(),
                    split,
                });
                images.push(Image::load(&dir.join(file))?);
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Empty(format!("no images under {}", root.display())));
    }
    let manifest = DatasetManifest::new(sources, &cfg.real_source, semantics, seen, records)?;
    Dataset::from_parts(manifest, images)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ingests_tree() {
        let dir = tempfile::tempdir().unwrap();
        for src in ["real", "gan1"] {
            for sem in ["cat", "dog"] {
                let d = dir.path().join(src).join(sem);
                fs::create_dir_all(&d).unwrap();
                for i in 0..12 {
                    Image::filled(8, 8, i as f64 / 12.0).quantized().save_png(&d.join(format!("{i}.png"))).unwrap();
                }
            }
        }
        fs::write(dir.path().join("real/cat/notes.txt"), "skip").unwrap();
        let cfg = IngestConfig { seen_semantics: Some(vec!["cat".into()]), ..IngestConfig::default() };
        let data = ingest_folder(dir.path(), &cfg).unwrap();
        assert_eq!(data.len(), 48);
        let counts = data.manifest.counts();
        assert_eq!(counts[&("real".into(), "cat".into(), Split::Train)], 10);
        assert_eq!(counts[&("gan1".into(), "dog".into(), Split::Test)], 12);
        assert_eq!(data.real_index(), data.manifest.source_index("real").unwrap());
    }

    #[test]
    fn missing_real_folder_errors() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("gan1/cat")).unwrap();
        assert!(ingest_folder(dir.path(), &IngestConfig::default()).is_err());
    }
}
