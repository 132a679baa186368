//! Labelled images, dataset manifests and the data-side pipeline: fixture
//! generation, folder ingestion, cleaning, pair sampling and augmentation.

mod augment;
mod cleaning;
mod fixture;
mod ingest;

pub use augment::{augment_train, eval_transform, prepare_training_group, AugmentConfig, PreparedGroup};
pub use cleaning::{clean_select, clean_select_embedded, kmeans, BlockDctEmbedder, KMeansResult, PerceptualEmbedder};
pub use fixture::{band_energy, default_seen, fingerprint_frequencies, generate_fixture, FixtureConfig, CONTENT_CONTRAST, STAMP_AMPLITUDE};
pub use ingest::{ingest_folder, IngestConfig};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

pub const MANIFEST_FORMAT: &str = "repmix-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split `{s}`"))),
        }
    }
}

/// First line of a manifest file: vocabularies and the semantic partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    pub sources: Vec<String>,
    pub real_source: String,
    pub semantics: Vec<String>,
    pub seen_semantics: Vec<String>,
    pub unseen_semantics: Vec<String>,
}

/// One manifest line after the header. `path` is relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub path: String,
    pub source: String,
    pub semantic: String,
    pub split: Split,
}

/// Line-delimited JSON: a header object, then one record per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(
        sources: Vec<String>,
        real_source: &str,
        semantics: Vec<String>,
        seen_semantics: Vec<String>,
        records: Vec<ManifestRecord>,
    ) -> Result<Self> {
        let unseen_semantics = semantics
            .iter()
            .filter(|s| !seen_semantics.contains(s))
            .cloned()
            .collect();
        let m = Self {
            header: ManifestHeader {
                format: MANIFEST_FORMAT.into(),
                version: MANIFEST_VERSION,
                sources,
                real_source: real_source.into(),
                semantics,
                seen_semantics,
                unseen_semantics,
            },
            records,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.format != MANIFEST_FORMAT || h.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest {} v{}",
                h.format, h.version
            )));
        }
        if h.sources.len() < 2 {
            return Err(Error::InvalidArgument("need REAL plus at least one synthetic source".into()));
        }
        if !h.sources.contains(&h.real_source) {
            return Err(Error::InvalidArgument(format!(
                "real source `{}` not in source vocabulary",
                h.real_source
            )));
        }
        if let Some(s) = h.seen_semantics.iter().find(|s| h.unseen_semantics.contains(s)) {
            return Err(Error::InvalidArgument(format!("semantic `{s}` is both seen and unseen")));
        }
        for s in h.seen_semantics.iter().chain(&h.unseen_semantics) {
            if !h.semantics.contains(s) {
                return Err(Error::InvalidArgument(format!("partition names unknown semantic `{s}`")));
            }
        }
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate id `{}`", r.id)));
            }
            if !h.sources.contains(&r.source) {
                return Err(Error::InvalidArgument(format!("`{}` has unknown source `{}`", r.id, r.source)));
            }
            if !h.semantics.contains(&r.semantic) {
                return Err(Error::InvalidArgument(format!(
                    "`{}` has unknown semantic `{}`",
                    r.id, r.semantic
                )));
            }
        }
        Ok(())
    }

    /// A full manifest also has every split populated.
    pub fn validate_full(&self) -> Result<()> {
        self.validate()?;
        for split in Split::ALL {
            if !self.records.iter().any(|r| r.split == split) {
                return Err(Error::Empty(format!("{split} split")));
            }
        }
        Ok(())
    }

    pub fn real_index(&self) -> usize {
        self.source_index(&self.header.real_source).expect("validated")
    }

    pub fn source_index(&self, name: &str) -> Option<usize> {
        self.header.sources.iter().position(|s| s == name)
    }

    pub fn semantic_index(&self, name: &str) -> Option<usize> {
        self.header.semantics.iter().position(|s| s == name)
    }

    pub fn is_seen_semantic(&self, name: &str) -> bool {
        self.header.seen_semantics.iter().any(|s| s == name)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::from_lines(text.lines().map(|l| Ok(l.to_string())))
    }

    fn from_lines(mut lines: impl Iterator<Item = std::io::Result<String>>) -> Result<Self> {
        let first = lines
            .next()
            .ok_or_else(|| Error::Format("empty manifest".into()))?
            .map_err(|e| Error::io("<manifest>", e))?;
        let header: ManifestHeader = serde_json::from_str(&first)?;
        let mut records = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::io("<manifest>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        let m = Self { header, records };
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_lines(BufReader::new(file).lines())
    }

    /// Record counts keyed by `(source, semantic, split)`.
    pub fn counts(&self) -> BTreeMap<(String, String, Split), usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry((r.source.clone(), r.semantic.clone(), r.split)).or_insert(0) += 1;
        }
        out
    }
}

/// Image with its source label `y` and semantic label `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub pixels: Image,
    pub source_label: usize,
    pub semantic_label: usize,
}

/// A manifest with its images loaded, `items[i]` belonging to `manifest.records[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub items: Vec<LabeledImage>,
}

impl Dataset {
    pub fn from_parts(manifest: DatasetManifest, images: Vec<Image>) -> Result<Self> {
        if images.len() != manifest.records.len() {
            return Err(Error::Shape(format!(
                "{} images for {} records",
                images.len(),
                manifest.records.len()
            )));
        }
        let items = manifest
            .records
            .iter()
            .zip(images)
            .map(|(r, pixels)| LabeledImage {
                id: r.id.clone(),
                pixels,
                source_label: manifest.source_index(&r.source).expect("validated"),
                semantic_label: manifest.semantic_index(&r.semantic).expect("validated"),
            })
            .collect();
        Ok(Self { manifest, items })
    }

    /// Reads the manifest and every image it references.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(manifest_path)?;
        let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let images = manifest
            .records
            .iter()
            .map(|r| Image::load(&base.join(&r.path)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(manifest, images)
    }

    /// Writes `manifest.jsonl` and each image as PNG under `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        for (r, item) in self.manifest.records.iter().zip(&self.items) {
            let path = dir.join(&r.path);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            item.pixels.save_png(&path)?;
        }
        let manifest_path = dir.join("manifest.jsonl");
        self.manifest.write(&manifest_path)?;
        Ok(manifest_path)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn real_index(&self) -> usize {
        self.manifest.real_index()
    }

    pub fn is_seen(&self, index: usize) -> bool {
        self.manifest.is_seen_semantic(&self.manifest.records[index].semantic)
    }

    /// Indices in `split`, sorted by position in the manifest.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.items.len())
            .filter(|&i| self.manifest.records[i].split == split)
            .collect()
    }

    /// Indices in `split` restricted to seen semantics.
    pub fn seen_split_indices(&self, split: Split) -> Vec<usize> {
        self.split_indices(split).into_iter().filter(|&i| self.is_seen(i)).collect()
    }
}

/// Two independent uniform draws from `pool` (self-pairs allowed).
pub fn sample_pair_from<R: Rng + ?Sized>(pool: &[usize], rng: &mut R) -> Result<(usize, usize)> {
    if pool.is_empty() {
        return Err(Error::Empty("cannot sample a pair from an empty split".into()));
    }
    let a = pool[rng.random_range(0..pool.len())];
    let b = pool[rng.random_range(0..pool.len())];
    Ok((a, b))
}

/// Uniform, unstratified pair from a split.
pub fn sample_pair<'a, R: Rng + ?Sized>(
    data: &'a Dataset,
    split: Split,
    rng: &mut R,
) -> Result<(&'a LabeledImage, &'a LabeledImage)> {
    let (a, b) = sample_pair_from(&data.split_indices(split), rng)?;
    Ok((&data.items[a], &data.items[b]))
}
