//! Procedural stand-in for a GAN attribution benchmark: semantic classes are
//! low-frequency procedural scenes, each synthetic source stamps its own faint
//! periodic artifact in the mid/high frequency band, REAL images carry none.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, DatasetManifest, ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::imaging::Image;

/// Peak stamp amplitude (2% of the `[0, 1]` range).
pub const STAMP_AMPLITUDE: f64 = 0.02;
/// Scene contrast low enough that a small network picks up the stamp within a few epochs.
pub const CONTENT_CONTRAST: f64 = 0.2;

const STYLES: [&str; 6] = ["stripes", "blobs", "gradient", "rings", "checker", "waves"];

/// `(cycles per pixel along x, along y)` of each synthetic source's stamp.
const STAMP_FREQUENCIES: [(f64, f64); 8] = [
    (0.5, 0.0),
    (0.0, 0.5),
    (0.5, 0.5),
    (0.25, 0.25),
    (0.25, 0.0),
    (0.0, 0.25),
    (0.25, 0.5),
    (0.5, 0.25),
];

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConfig {
    /// REAL plus `num_sources - 1` synthetic sources.
    pub num_sources: usize,
    pub num_semantics: usize,
    pub per_cell: usize,
    /// The first `seen_semantics` semantics are exposed to training.
    pub seen_semantics: usize,
    pub image_size: usize,
    pub stamp_amplitude: f64,
    /// Scene values are squeezed to `0.5 ± 0.4 * content_contrast`.
    pub content_contrast: f64,
}

impl FixtureConfig {
    pub fn new(num_sources: usize, num_semantics: usize, per_cell: usize) -> Self {
        Self {
            num_sources,
            num_semantics,
            per_cell,
            seen_semantics: default_seen(num_semantics),
            image_size: 36,
            stamp_amplitude: STAMP_AMPLITUDE,
            content_contrast: CONTENT_CONTRAST,
        }
    }
}

/// Two thirds of the semantics, at least one.
pub fn default_seen(num_semantics: usize) -> usize {
    ((num_semantics * 2 + 1) / 3).clamp(1, num_semantics.max(1))
}

/// Stamp frequencies of synthetic source `k` (1-based; 0 is REAL and has none).
pub fn fingerprint_frequencies(k: usize) -> Option<(f64, f64)> {
    (k >= 1).then(|| STAMP_FREQUENCIES[(k - 1) % STAMP_FREQUENCIES.len()])
}

fn stamp_value(k: usize, x: usize, y: usize) -> f64 {
    match fingerprint_frequencies(k) {
        None => 0.0,
        Some((fx, fy)) => (2.0 * PI * fx * x as f64).cos() * (2.0 * PI * fy * y as f64).cos(),
    }
}

fn semantic_name(s: usize) -> String {
    let style = STYLES[s % STYLES.len()];
    match s / STYLES.len() {
        0 => style.to_string(),
        round => format!("{style}{}", round + 1),
    }
}

fn source_name(k: usize) -> String {
    if k == 0 {
        "real".into()
    } else {
        format!("gan{k}")
    }
}

/// Colour drawn around a semantic-specific hue.
fn palette(rng: &mut ChaCha8Rng, semantic: usize) -> [f64; 3] {
    let base = (semantic as f64 * 0.37).fract();
    let hue = (base + rng.random_range(-0.08..0.08)).rem_euclid(1.0);
    let light = rng.random_range(0.3..0.7);
    [0.0, 1.0 / 3.0, 2.0 / 3.0].map(|off| light + 0.25 * (2.0 * PI * (hue + off)).cos())
}

/// Low-frequency scene in `0.5 ± 0.4 * contrast`.
fn scene(rng: &mut ChaCha8Rng, semantic: usize, size: usize, contrast: f64) -> Image {
    let c1 = palette(rng, semantic);
    let c2 = palette(rng, semantic + 3);
    let n = size as f64;
    let field: Box<dyn Fn(f64, f64) -> f64> = match semantic % STYLES.len() {
        0 => {
            let theta = rng.random_range(0.0..PI);
            let period = rng.random_range(10.0..16.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            Box::new(move |x, y| 0.5 + 0.5 * ((x * theta.cos() + y * theta.sin()) * 2.0 * PI / period + phase).sin())
        }
        1 => {
            let blobs: Vec<(f64, f64, f64)> = (0..rng.random_range(3..6))
                .map(|_| (rng.random_range(0.0..n), rng.random_range(0.0..n), rng.random_range(4.0..8.0)))
                .collect();
            Box::new(move |x, y| {
                blobs
                    .iter()
                    .map(|&(cx, cy, r)| (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * r * r)).exp())
                    .sum::<f64>()
                    .min(1.0)
            })
        }
        2 => {
            let theta = rng.random_range(0.0..2.0 * PI);
            Box::new(move |x, y| {
                let t = ((x - n / 2.0) * theta.cos() + (y - n / 2.0) * theta.sin()) / n + 0.5;
                t.clamp(0.0, 1.0)
            })
        }
        3 => {
            let (cx, cy) = (rng.random_range(0.0..n), rng.random_range(0.0..n));
            let period = rng.random_range(10.0..14.0);
            Box::new(move |x, y| 0.5 + 0.5 * (((x - cx).hypot(y - cy)) * 2.0 * PI / period).cos())
        }
        4 => {
            let cell = rng.random_range(8.0..12.0);
            let (ox, oy) = (rng.random_range(0.0..cell), rng.random_range(0.0..cell));
            Box::new(move |x, y| {
                let a = ((x + ox) / cell).floor() as i64 + ((y + oy) / cell).floor() as i64;
                (a.rem_euclid(2)) as f64
            })
        }
        _ => {
            let (px, py) = (rng.random_range(12.0..20.0), rng.random_range(12.0..20.0));
            let (phx, phy) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
            Box::new(move |x, y| 0.5 + 0.5 * (x * 2.0 * PI / px + phx).sin() * (y * 2.0 * PI / py + phy).cos())
        }
    };
    Image::from_fn(size, size, |x, y, c| {
        let t = field(x as f64, y as f64);
        0.5 + contrast * ((c1[c] * (1.0 - t) + c2[c] * t).clamp(0.1, 0.9) - 0.5)
    })
}

fn split_sizes(per_cell: usize) -> (usize, usize) {
    if per_cell < 3 {
        return (0, 0);
    }
    let held = ((per_cell as f64 / 12.0).round() as usize).max(1);
    (held, held)
}

/// Builds the fixture in memory. Images are 8-bit quantised so the PNGs
/// written by [`Dataset::save`] reload bit-identically.
///
/// Seen semantics are split 10:1:1 into train/val/test per (source, semantic)
/// cell; unseen semantics go entirely to test.
pub fn generate_fixture(cfg: &FixtureConfig, seed: u64) -> Result<Dataset> {
    if cfg.num_sources < 2 {
        return Err(Error::InvalidArgument(format!(
            "need REAL plus at least one synthetic source, got {} sources",
            cfg.num_sources
        )));
    }
    if cfg.num_semantics == 0 || cfg.per_cell == 0 {
        return Err(Error::Empty("fixture with no semantics or no images per cell".into()));
    }
    if cfg.seen_semantics == 0 || cfg.seen_semantics > cfg.num_semantics {
        return Err(Error::InvalidArgument(format!(
            "seen semantics {} not in 1..={}",
            cfg.seen_semantics, cfg.num_semantics
        )));
    }
    if cfg.image_size < 8 || !(0.0..=0.1).contains(&cfg.stamp_amplitude) || !(0.0..=1.0).contains(&cfg.content_contrast) {
        return Err(Error::InvalidArgument(
            "image size < 8, stamp amplitude outside [0, 0.1] or contrast outside [0, 1]".into(),
        ));
    }
    let sources: Vec<String> = (0..cfg.num_sources).map(source_name).collect();
    let semantics: Vec<String> = (0..cfg.num_semantics).map(semantic_name).collect();
    let seen: Vec<String> = semantics[..cfg.seen_semantics].to_vec();
    let (n_val, n_test) = split_sizes(cfg.per_cell);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut images = Vec::new();
    for (s, sem) in semantics.iter().enumerate() {
        let is_seen = s < cfg.seen_semantics;
        for (k, src) in sources.iter().enumerate() {
            for i in 0..cfg.per_cell {
                let mut img = scene(&mut rng, s, cfg.image_size, cfg.content_contrast);
                if k > 0 {
                    for y in 0..cfg.image_size {
                        for x in 0..cfg.image_size {
                            let v = cfg.stamp_amplitude * stamp_value(k, x, y);
                            for c in 0..3 {
                                img.set(x, y, c, img.get(x, y, c) + v);
                            }
                        }
                    }
                }
                let split = if !is_seen {
                    Split::Test
                } else if i < cfg.per_cell - n_val - n_test {
                    Split::Train
                } else if i < cfg.per_cell - n_test {
                    Split::Val
                } else {
                    Split::Test
                };
                let id = format!("{src}_{sem}_{i:04}");
                records.push(ManifestRecord {
                    path: format!("images/{id}.png"),
                    id,
                    source: src.clone(),
                    semantic: sem.clone(),
                    split,
                });
                images.push(img.quantized());
            }
        }
    }
    let manifest = DatasetManifest::new(sources, "real", semantics, seen, records)?;
    Dataset::from_parts(manifest, images)
}

/// Magnitude of the 2-D DFT of the channel-mean image at `(fx, fy)` cycles/pixel.
pub fn band_energy(image: &Image, fx: f64, fy: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for y in 0..image.height() {
        for x in 0..image.width() {
            let v = (0..3).map(|c| image.get(x, y, c)).sum::<f64>() / 3.0;
            let a = -2.0 * PI * (fx * x as f64 + fy * y as f64);
            re += v * a.cos();
            im += v * a.sin();
        }
    }
    (re * re + im * im).sqrt() / (image.width() * image.height()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_partition() {
        let d = generate_fixture(&FixtureConfig::new(4, 6, 12), 7).unwrap();
        assert_eq!(d.len(), 4 * 6 * 12);
        assert_eq!(d.manifest.header.seen_semantics.len(), 4);
        d.manifest.validate_full().unwrap();
        let counts = d.manifest.counts();
        assert_eq!(counts[&("gan1".into(), "stripes".into(), Split::Train)], 10);
        assert_eq!(counts[&("gan1".into(), "stripes".into(), Split::Val)], 1);
        assert_eq!(counts[&("real".into(), "checker".into(), Split::Test)], 12);
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(generate_fixture(&FixtureConfig::new(4, 6, 0), 1).is_err());
        assert!(generate_fixture(&FixtureConfig::new(1, 6, 5), 1).is_err());
        assert!(generate_fixture(&FixtureConfig::new(2, 0, 5), 1).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = FixtureConfig::new(3, 2, 4);
        assert_eq!(generate_fixture(&cfg, 5).unwrap(), generate_fixture(&cfg, 5).unwrap());
        assert_ne!(generate_fixture(&cfg, 5).unwrap(), generate_fixture(&cfg, 6).unwrap());
    }
}
