//! Deterministic bank of benign image corruptions, five severities each, with a
//! seen/unseen partition for training-time augmentation.
//!
//! Severity ladders (index = severity - 1):
//!
//! | kind             | parameter                    | ladder                                  |
//! |------------------|------------------------------|-----------------------------------------|
//! | gaussian_noise   | sigma                        | 0.04 0.06 0.08 0.12 0.16                |
//! | shot_noise       | photons per unit intensity   | 250 120 60 30 15                        |
//! | impulse_noise    | salt-and-pepper fraction     | 0.01 0.02 0.04 0.07 0.10                |
//! | gaussian_blur    | sigma (px)                   | 0.4 0.6 0.8 1.0 1.4                     |
//! | defocus_blur     | disk radius (px)             | 1.0 1.5 2.0 2.5 3.0                     |
//! | motion_blur      | streak length (px)           | 2 3 4 5 7                               |
//! | jpeg_compression | quality                      | 80 65 50 35 20                          |
//! | pixelate         | downscale factor             | 0.9 0.8 0.7 0.6 0.5                     |
//! | brightness       | HSV value offset             | 0.1 0.2 0.3 0.4 0.5                     |
//! | contrast         | contrast factor              | 0.75 0.6 0.45 0.3 0.2                   |
//! | saturate         | HSV saturation (scale, add)  | (0.3,0) (0.1,0) (2,0) (5,0.1) (20,0.2)  |
//! | elastic          | max displacement (px)        | 0.5 0.75 1.0 1.25 1.5                   |

use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    GaussianBlur,
    DefocusBlur,
    MotionBlur,
    JpegCompression,
    Pixelate,
    Brightness,
    Contrast,
    Saturate,
    Elastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionFamily {
    Noise,
    Blur,
    Digital,
    Photometric,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 12] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::GaussianBlur,
        CorruptionKind::DefocusBlur,
        CorruptionKind::MotionBlur,
        CorruptionKind::JpegCompression,
        CorruptionKind::Pixelate,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Saturate,
        CorruptionKind::Elastic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::GaussianBlur => "gaussian_blur",
            CorruptionKind::DefocusBlur => "defocus_blur",
            CorruptionKind::MotionBlur => "motion_blur",
            CorruptionKind::JpegCompression => "jpeg_compression",
            CorruptionKind::Pixelate => "pixelate",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Saturate => "saturate",
            CorruptionKind::Elastic => "elastic",
        }
    }

    pub fn family(self) -> CorruptionFamily {
        use CorruptionKind::*;
        match self {
            GaussianNoise | ShotNoise | ImpulseNoise => CorruptionFamily::Noise,
            GaussianBlur | DefocusBlur | MotionBlur => CorruptionFamily::Blur,
            JpegCompression | Pixelate | Elastic => CorruptionFamily::Digital,
            Brightness | Contrast | Saturate => CorruptionFamily::Photometric,
        }
    }

    /// Human-readable parameter for a severity, as listed in the manifest.
    pub fn parameter(self, severity: u8) -> String {
        let i = (severity - 1) as usize;
        use CorruptionKind::*;
        match self {
            GaussianNoise => format!("sigma={}", GAUSSIAN_SIGMA[i]),
            ShotNoise => format!("photons={}", SHOT_PHOTONS[i]),
            ImpulseNoise => format!("amount={}", IMPULSE_AMOUNT[i]),
            GaussianBlur => format!("sigma={}", BLUR_SIGMA[i]),
            DefocusBlur => format!("radius={}", DEFOCUS_RADIUS[i]),
            MotionBlur => format!("length={};angle=seeded[-45,45]", MOTION_LENGTH[i]),
            JpegCompression => format!("quality={}", JPEG_QUALITY[i]),
            Pixelate => format!("factor={}", PIXELATE_FACTOR[i]),
            Brightness => format!("value_offset={}", BRIGHTNESS[i]),
            Contrast => format!("factor={}", CONTRAST[i]),
            Saturate => format!("scale={};add={}", SATURATE[i].0, SATURATE[i].1),
            Elastic => format!("max_shift={};smoothing_sigma={ELASTIC_SMOOTH}", ELASTIC_SHIFT[i]),
        }
    }
}

const GAUSSIAN_SIGMA: [f64; 5] = [0.04, 0.06, 0.08, 0.12, 0.16];
const SHOT_PHOTONS: [f64; 5] = [250.0, 120.0, 60.0, 30.0, 15.0];
const IMPULSE_AMOUNT: [f64; 5] = [0.01, 0.02, 0.04, 0.07, 0.10];
const BLUR_SIGMA: [f64; 5] = [0.4, 0.6, 0.8, 1.0, 1.4];
const DEFOCUS_RADIUS: [f64; 5] = [1.0, 1.5, 2.0, 2.5, 3.0];
const MOTION_LENGTH: [usize; 5] = [2, 3, 4, 5, 7];
/// JPEG quality per severity.
pub const JPEG_QUALITY: [u8; 5] = [80, 65, 50, 35, 20];
const PIXELATE_FACTOR: [f64; 5] = [0.9, 0.8, 0.7, 0.6, 0.5];
const BRIGHTNESS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
const CONTRAST: [f64; 5] = [0.75, 0.6, 0.45, 0.3, 0.2];
const SATURATE: [(f64, f64); 5] = [(0.3, 0.0), (0.1, 0.0), (2.0, 0.0), (5.0, 0.1), (20.0, 0.2)];
const ELASTIC_SHIFT: [f64; 5] = [0.5, 0.75, 1.0, 1.25, 1.5];
const ELASTIC_SMOOTH: f64 = 2.0;

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownCorruption(s.to_string()))
    }
}

/// One concrete corruption: kind, severity in `1..=5` and noise seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::Severity(severity));
        }
        Ok(Self { kind, severity, seed })
    }
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.kind, self.severity, self.seed)
    }
}

/// Parses `kind:severity:seed` (seed optional, default 0).
impl FromStr for CorruptionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let kind: CorruptionKind = parts.next().unwrap_or_default().parse()?;
        let severity = parts
            .next()
            .ok_or_else(|| Error::InvalidArgument(format!("missing severity in `{s}`")))?
            .parse::<u8>()
            .map_err(|e| Error::InvalidArgument(format!("bad severity in `{s}`: {e}")))?;
        let seed = match parts.next() {
            Some(v) => v
                .parse::<u64>()
                .map_err(|e| Error::InvalidArgument(format!("bad seed in `{s}`: {e}")))?,
            None => 0,
        };
        if parts.next().is_some() {
            return Err(Error::InvalidArgument(format!("too many fields in `{s}`")));
        }
        CorruptionSpec::new(kind, severity, seed)
    }
}

/// Applies `spec`; output has the input's shape and lies in `[0, 1]`.
pub fn apply_corruption(image: &Image, spec: &CorruptionSpec) -> Result<Image> {
    if !(1..=5).contains(&spec.severity) {
        return Err(Error::Severity(spec.severity));
    }
    let i = (spec.severity - 1) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    use CorruptionKind::*;
    let mut out = match spec.kind {
        GaussianNoise => {
            let normal = Normal::new(0.0, GAUSSIAN_SIGMA[i]).expect("positive sigma");
            map_values(image, |v| v + normal.sample(&mut rng))
        }
        ShotNoise => {
            let photons = SHOT_PHOTONS[i];
            map_values(image, |v| {
                let lambda = v.clamp(0.0, 1.0) * photons;
                if lambda <= 0.0 {
                    0.0
                } else {
                    Poisson::new(lambda).expect("positive rate").sample(&mut rng) / photons
                }
            })
        }
        ImpulseNoise => {
            let amount = IMPULSE_AMOUNT[i];
            map_values(image, |v| {
                if rng.random::<f64>() < amount {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    v
                }
            })
        }
        GaussianBlur => {
            let sigma = BLUR_SIGMA[i];
            let radius = (3.0 * sigma).ceil() as isize;
            let taps: Vec<f64> = (-radius..=radius)
                .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
                .collect();
            separable_blur(image, &taps)
        }
        DefocusBlur => convolve_sparse(image, &defocus_kernel(DEFOCUS_RADIUS[i])),
        MotionBlur => {
            let len = MOTION_LENGTH[i];
            let angle = rng.random_range(-45.0f64..=45.0).to_radians();
            let (dx, dy) = (angle.cos(), angle.sin());
            let half = (len - 1) as f64 / 2.0;
            let offsets: Vec<f64> = (0..len).map(|t| t as f64 - half).collect();
            Image::from_fn(image.width(), image.height(), |x, y, c| {
                offsets
                    .iter()
                    .map(|&t| image.sample_bilinear(x as f64 + t * dx, y as f64 + t * dy, c))
                    .sum::<f64>()
                    / len as f64
            })
        }
        JpegCompression => jpeg_round_trip(image, JPEG_QUALITY[i])?,
        Pixelate => {
            let f = PIXELATE_FACTOR[i];
            let w = ((image.width() as f64 * f).round() as usize).max(1);
            let h = ((image.height() as f64 * f).round() as usize).max(1);
            let small = box_downsample(image, w, h);
            Image::from_fn(image.width(), image.height(), |x, y, c| {
                small.get(x * w / image.width(), y * h / image.height(), c)
            })
        }
        Brightness => map_hsv(image, |h, s, v| (h, s, v + BRIGHTNESS[i])),
        Contrast => {
            let factor = CONTRAST[i];
            let n = (image.width() * image.height()) as f64;
            let means: Vec<f64> = (0..3)
                .map(|c| image.data().iter().skip(c).step_by(3).sum::<f64>() / n)
                .collect();
            let mut out = image.clone();
            for (k, v) in out.data_mut().iter_mut().enumerate() {
                let m = means[k % 3];
                *v = (*v - m) * factor + m;
            }
            out
        }
        Saturate => {
            let (a, b) = SATURATE[i];
            map_hsv(image, |h, s, v| (h, s * a + b, v))
        }
        Elastic => elastic(image, ELASTIC_SHIFT[i], &mut rng),
    };
    out.clip();
    Ok(out)
}

/// `None` is the identity.
pub fn maybe_corrupt(image: &Image, spec: Option<&CorruptionSpec>) -> Result<Image> {
    match spec {
        Some(s) => apply_corruption(image, s),
        None => Ok(image.clone()),
    }
}

fn map_values(image: &Image, mut f: impl FnMut(f64) -> f64) -> Image {
    let mut out = image.clone();
    out.data_mut().iter_mut().for_each(|v| *v = f(*v));
    out
}

fn separable_blur(image: &Image, taps: &[f64]) -> Image {
    let norm: f64 = taps.iter().sum();
    let r = (taps.len() / 2) as isize;
    let horiz = Image::from_fn(image.width(), image.height(), |x, y, c| {
        taps.iter()
            .enumerate()
            .map(|(k, w)| w * image.get_clamped(x as isize + k as isize - r, y as isize, c))
            .sum::<f64>()
            / norm
    });
    Image::from_fn(image.width(), image.height(), |x, y, c| {
        taps.iter()
            .enumerate()
            .map(|(k, w)| w * horiz.get_clamped(x as isize, y as isize + k as isize - r, c))
            .sum::<f64>()
            / norm
    })
}

/// Disk with a one-pixel soft edge, smoothed by a small Gaussian. A hard
/// binary disk has strong sidelobes that make blur strength non-monotone in
/// the radius for high-frequency content.
fn defocus_kernel(radius: f64) -> Vec<(isize, isize, f64)> {
    const ALIAS_SIGMA: f64 = 0.5;
    let half = (radius + 0.5).ceil() as isize + 2;
    let side = (2 * half + 1) as usize;
    let idx = |dx: isize, dy: isize| ((dy + half) as usize) * side + (dx + half) as usize;
    let mut disk = vec![0.0; side * side];
    for dy in -half..=half {
        for dx in -half..=half {
            let d = ((dx * dx + dy * dy) as f64).sqrt();
            disk[idx(dx, dy)] = (radius + 0.5 - d).clamp(0.0, 1.0);
        }
    }
    let taps: Vec<f64> = (-2..=2isize)
        .map(|t| (-(t * t) as f64 / (2.0 * ALIAS_SIGMA * ALIAS_SIGMA)).exp())
        .collect();
    let smooth = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; side * side];
        for dy in -half..=half {
            for dx in -half..=half {
                let mut acc = 0.0;
                for (k, w) in taps.iter().enumerate() {
                    let o = k as isize - 2;
                    let (sx, sy) = if horizontal { (dx + o, dy) } else { (dx, dy + o) };
                    if sx.abs() <= half && sy.abs() <= half {
                        acc += w * src[idx(sx, sy)];
                    }
                }
                out[idx(dx, dy)] = acc;
            }
        }
        out
    };
    let blurred = smooth(&smooth(&disk, true), false);
    let mut kernel = Vec::new();
    for dy in -half..=half {
        for dx in -half..=half {
            let w = blurred[idx(dx, dy)];
            if w > 1e-12 {
                kernel.push((dx, dy, w));
            }
        }
    }
    kernel
}

fn convolve_sparse(image: &Image, kernel: &[(isize, isize, f64)]) -> Image {
    let norm: f64 = kernel.iter().map(|k| k.2).sum();
    Image::from_fn(image.width(), image.height(), |x, y, c| {
        kernel
            .iter()
            .map(|&(dx, dy, w)| w * image.get_clamped(x as isize + dx, y as isize + dy, c))
            .sum::<f64>()
            / norm
    })
}

fn box_downsample(image: &Image, w: usize, h: usize) -> Image {
    let (sw, sh) = (image.width(), image.height());
    Image::from_fn(w, h, |x, y, c| {
        let (x0, x1) = (x * sw / w, ((x + 1) * sw).div_ceil(w).max(x * sw / w + 1));
        let (y0, y1) = (y * sh / h, ((y + 1) * sh).div_ceil(h).max(y * sh / h + 1));
        let mut acc = 0.0;
        for yy in y0..y1.min(sh) {
            for xx in x0..x1.min(sw) {
                acc += image.get(xx, yy, c);
            }
        }
        acc / ((x1.min(sw) - x0) * (y1.min(sh) - y0)) as f64
    })
}

fn jpeg_round_trip(image: &Image, quality: u8) -> Result<Image> {
    let rgb = image.to_rgb8();
    let mut buf = Vec::new();
    let mut enc = ::image::codecs::jpeg::JpegEncoder::new_with_quality(Cursor::new(&mut buf), quality);
    enc.encode_image(&rgb)?;
    let decoded = ::image::load_from_memory_with_format(&buf, ::image::ImageFormat::Jpeg)?.to_rgb8();
    Ok(Image::from_rgb8(&decoded))
}

fn elastic(image: &Image, max_shift: f64, rng: &mut ChaCha8Rng) -> Image {
    let (w, h) = (image.width(), image.height());
    let field = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let raw = Image::from_fn(w, h, |_, _, _| 0.0);
        let mut raw = raw;
        for v in raw.data_mut().iter_mut().step_by(3) {
            *v = rng.random_range(-1.0..=1.0);
        }
        let sigma = ELASTIC_SMOOTH;
        let radius = (3.0 * sigma).ceil() as isize;
        let taps: Vec<f64> = (-radius..=radius)
            .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let smooth = separable_blur(&raw, &taps);
        let vals: Vec<f64> = smooth.data().iter().step_by(3).copied().collect();
        let peak = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        vals.into_iter().map(|v| v / peak * max_shift).collect()
    };
    let dx = field(rng);
    let dy = field(rng);
    Image::from_fn(w, h, |x, y, c| {
        let k = y * w + x;
        image.sample_bilinear(x as f64 + dx[k], y as f64 + dy[k], c)
    })
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    } / 6.0;
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn map_hsv(image: &Image, f: impl Fn(f64, f64, f64) -> (f64, f64, f64)) -> Image {
    let mut out = image.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
        let (h, s, v) = f(h, s, v);
        let (r, g, b) = hsv_to_rgb(h, s.clamp(0.0, 1.0), v.clamp(0.0, 1.0));
        px.copy_from_slice(&[r, g, b]);
    }
    out
}

/// Which corruptions training may sample, which are held out, and how often one is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionPolicy {
    seen: Vec<CorruptionKind>,
    unseen: Vec<CorruptionKind>,
    activation_probability: f64,
}

/// Kinds withheld from training by default.
pub const DEFAULT_UNSEEN: [CorruptionKind; 3] = [
    CorruptionKind::ImpulseNoise,
    CorruptionKind::GaussianBlur,
    CorruptionKind::Saturate,
];

impl Default for CorruptionPolicy {
    fn default() -> Self {
        let seen = CorruptionKind::ALL
            .into_iter()
            .filter(|k| !DEFAULT_UNSEEN.contains(k))
            .collect();
        Self::new(seen, DEFAULT_UNSEEN.to_vec(), 0.95).expect("default split is disjoint")
    }
}

impl CorruptionPolicy {
    pub fn new(seen: Vec<CorruptionKind>, unseen: Vec<CorruptionKind>, activation_probability: f64) -> Result<Self> {
        if let Some(k) = seen.iter().find(|k| unseen.contains(k)) {
            return Err(Error::InvalidArgument(format!("`{k}` is both seen and unseen")));
        }
        if !(0.0..=1.0).contains(&activation_probability) {
            return Err(Error::InvalidArgument(format!(
                "activation probability {activation_probability} outside [0, 1]"
            )));
        }
        if seen.is_empty() && activation_probability > 0.0 {
            return Err(Error::InvalidArgument(
                "no seen corruptions to sample from but activation probability > 0".into(),
            ));
        }
        Ok(Self {
            seen,
            unseen,
            activation_probability,
        })
    }

    /// Policy that never corrupts.
    pub fn disabled() -> Self {
        let p = Self::default();
        Self {
            activation_probability: 0.0,
            ..p
        }
    }

    pub fn seen(&self) -> &[CorruptionKind] {
        &self.seen
    }

    pub fn unseen(&self) -> &[CorruptionKind] {
        &self.unseen
    }

    pub fn activation_probability(&self) -> f64 {
        self.activation_probability
    }

    pub fn is_seen(&self, kind: CorruptionKind) -> bool {
        self.seen.contains(&kind)
    }

    /// Every registered kind, seen first.
    pub fn bank(&self) -> Vec<CorruptionKind> {
        self.seen.iter().chain(&self.unseen).copied().collect()
    }
}

/// With the policy's activation probability, applies a uniformly drawn seen
/// kind at a uniformly drawn severity; otherwise returns the image unchanged.
pub fn random_training_corruption<R: Rng + ?Sized>(
    image: &Image,
    policy: &CorruptionPolicy,
    rng: &mut R,
) -> Result<(Image, Option<CorruptionSpec>)> {
    let p = policy.activation_probability;
    if p <= 0.0 || rng.random::<f64>() >= p {
        return Ok((image.clone(), None));
    }
    if policy.seen.is_empty() {
        return Err(Error::InvalidArgument("no seen corruptions to sample from".into()));
    }
    let kind = policy.seen[rng.random_range(0..policy.seen.len())];
    let severity = rng.random_range(1..=5u8);
    let spec = CorruptionSpec::new(kind, severity, rng.next_u64())?;
    Ok((apply_corruption(image, &spec)?, Some(spec)))
}

/// Tab-separated `kind, severity, parameters, partition` table.
pub fn corruption_manifest(policy: &CorruptionPolicy) -> String {
    let mut out = String::from("kind\tseverity\tparameters\tpartition\n");
    for kind in policy.bank() {
        let part = if policy.is_seen(kind) { "seen" } else { "unseen" };
        for sev in 1..=5u8 {
            out.push_str(&format!("{kind}\t{sev}\t{}\t{part}\n", kind.parameter(sev)));
        }
    }
    out
}
