use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corruptions::{random_training_corruption, CorruptionPolicy, CorruptionSpec};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::mix::MixSpec;
use crate::nn::InsertionPoint;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub resize: usize,
    pub crop: usize,
    pub flip_probability: f64,
    /// Random crop during training; evaluation always centre-crops.
    pub random_crop: bool,
    pub corruptions: CorruptionPolicy,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            resize: 256,
            crop: 224,
            flip_probability: 0.5,
            random_crop: true,
            corruptions: CorruptionPolicy::default(),
        }
    }
}

impl AugmentConfig {
    pub fn sized(resize: usize, crop: usize) -> Self {
        Self { resize, crop, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.crop > self.resize {
            return Err(Error::InvalidArgument(format!(
                "crop {} must be in 1..={}",
                self.crop, self.resize
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::InvalidArgument("flip probability outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Resize, crop, horizontal flip, then a possible seen-family corruption.
pub fn augment_train<R: Rng + ?Sized>(
    image: &Image,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Image, Option<CorruptionSpec>)> {
    cfg.validate()?;
    let resized = image.resize(cfg.resize, cfg.resize);
    let slack = cfg.resize - cfg.crop;
    let (x0, y0) = if cfg.random_crop && slack > 0 {
        (rng.random_range(0..=slack), rng.random_range(0..=slack))
    } else {
        (slack / 2, slack / 2)
    };
    let mut out = resized.crop(x0, y0, cfg.crop, cfg.crop)?;
    if rng.random::<f64>() < cfg.flip_probability {
        out = out.flip_horizontal();
    }
    random_training_corruption(&out, &cfg.corruptions, rng)
}

/// Resize then centre crop.
pub fn eval_transform(image: &Image, cfg: &AugmentConfig) -> Result<Image> {
    cfg.validate()?;
    image.resize(cfg.resize, cfg.resize).center_crop(cfg.crop)
}

/// Network inputs for one mixed training example.
#[derive(Debug, Clone)]
pub struct PreparedGroup<T: Scalar> {
    pub inputs: Vec<Tensor<T>>,
    /// Mix applied inside the network; the identity when pixels were blended beforehand.
    pub forward_mix: MixSpec,
    pub corruptions: Vec<Option<CorruptionSpec>>,
}

/// `pixel_pre_aug` blends the resized raw images and augments the blend once;
/// every other seam augments each image independently and mixes inside the network.
pub fn prepare_training_group<T: Scalar, R: Rng + ?Sized>(
    images: &[&Image],
    mix: &MixSpec,
    point: InsertionPoint,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<PreparedGroup<T>> {
    if images.len() != mix.len() {
        return Err(Error::Shape(format!("{} images for {} weights", images.len(), mix.len())));
    }
    if point == InsertionPoint::PixelPreAug {
        let resized: Vec<Image> = images.iter().map(|i| i.resize(cfg.resize, cfg.resize)).collect();
        let refs: Vec<&Image> = resized.iter().collect();
        let blended = Image::blend(&refs, &mix.weights)?;
        let (aug, spec) = augment_train(&blended, cfg, rng)?;
        return Ok(PreparedGroup {
            inputs: vec![aug.to_tensor()],
            forward_mix: MixSpec::identity(1),
            corruptions: vec![spec],
        });
    }
    let mut inputs = Vec::with_capacity(images.len());
    let mut corruptions = Vec::with_capacity(images.len());
    for img in images {
        let (aug, spec) = augment_train(img, cfg, rng)?;
        inputs.push(aug.to_tensor());
        corruptions.push(spec);
    }
    Ok(PreparedGroup { inputs, forward_mix: mix.clone(), corruptions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quiet(resize: usize, crop: usize) -> AugmentConfig {
        AugmentConfig { corruptions: CorruptionPolicy::disabled(), ..AugmentConfig::sized(resize, crop) }
    }

    #[test]
    fn output_shape_and_range() {
        let img = Image::from_fn(20, 14, |x, y, c| ((x + 2 * y + c) % 7) as f64 / 6.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = AugmentConfig::sized(12, 10);
        for _ in 0..20 {
            let (out, _) = augment_train(&img, &cfg, &mut rng).unwrap();
            assert_eq!((out.width(), out.height()), (10, 10));
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(eval_transform(&img, &cfg).unwrap().width(), 10);
    }

    #[test]
    fn no_flip_no_crop_is_resize() {
        let img = Image::from_fn(8, 8, |x, y, c| (x * 8 + y + c) as f64 / 80.0);
        let cfg = AugmentConfig { flip_probability: 0.0, ..quiet(8, 8) };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment_train(&img, &cfg, &mut rng).unwrap().0, img);
    }

    #[test]
    fn bad_crop_rejected() {
        let img = Image::filled(8, 8, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(augment_train(&img, &quiet(8, 9), &mut rng).is_err());
    }

    #[test]
    fn pre_aug_blends_once() {
        let a = Image::filled(6, 6, 0.2);
        let b = Image::filled(6, 6, 0.6);
        let mix = MixSpec::pair(0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g: PreparedGroup<f64> =
            prepare_training_group(&[&a, &b], &mix, InsertionPoint::PixelPreAug, &quiet(6, 4), &mut rng).unwrap();
        assert_eq!(g.inputs.len(), 1);
        assert_eq!(g.forward_mix.weights, vec![1.0]);
        assert!(g.inputs[0].data().iter().all(|v| (v - 0.5).abs() < 1e-12));
        let g: PreparedGroup<f64> =
            prepare_training_group(&[&a, &b], &mix, InsertionPoint::AfterGap, &quiet(6, 4), &mut rng).unwrap();
        assert_eq!(g.inputs.len(), 2);
        assert_eq!(g.forward_mix, mix);
    }
}
