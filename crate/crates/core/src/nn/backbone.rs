use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Activation, ChannelAffine, Conv2d, Layer, Linear, Network, Pool, PoolKind, Residual};

/// Seam between the early map and the late map where representations are mixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InsertionPoint {
    /// Raw pixels, mixed before augmentation.
    PixelPreAug,
    /// Raw pixels, mixed after each image was augmented.
    PixelPostAug,
    /// After the k-th pooling stage (1-based).
    AfterPool(usize),
    AfterGap,
    /// After the k-th fully connected stage (1-based), including its activation.
    AfterFc(usize),
}

impl InsertionPoint {
    pub fn is_pixel(self) -> bool {
        matches!(self, InsertionPoint::PixelPreAug | InsertionPoint::PixelPostAug)
    }
}

impl Default for InsertionPoint {
    fn default() -> Self {
        InsertionPoint::AfterFc(1)
    }
}

impl fmt::Display for InsertionPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InsertionPoint::PixelPreAug => write!(f, "pixel_pre_aug"),
            InsertionPoint::PixelPostAug => write!(f, "pixel_post_aug"),
            InsertionPoint::AfterPool(k) => write!(f, "after_pool_{k}"),
            InsertionPoint::AfterGap => write!(f, "after_gap"),
            InsertionPoint::AfterFc(k) => write!(f, "after_fc_{k}"),
        }
    }
}

impl FromStr for InsertionPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown insertion point `{s}`"));
        let index = |rest: &str| -> Result<usize> {
            match rest.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(k),
                _ => Err(bad()),
            }
        };
        match s {
            "pixel_pre_aug" => Ok(InsertionPoint::PixelPreAug),
            "pixel_post_aug" => Ok(InsertionPoint::PixelPostAug),
            "after_gap" => Ok(InsertionPoint::AfterGap),
            _ => {
                if let Some(rest) = s.strip_prefix("after_pool_") {
                    Ok(InsertionPoint::AfterPool(index(rest)?))
                } else if let Some(rest) = s.strip_prefix("after_fc_") {
                    Ok(InsertionPoint::AfterFc(index(rest)?))
                } else {
                    Err(bad())
                }
            }
        }
    }
}

impl Serialize for InsertionPoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InsertionPoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Fixed input standardisation applied as every backbone's first layer.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_STD: f64 = 0.25;

/// Backbone architecture description; rebuilding from it plus stored
/// parameters reproduces a model exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BackboneSpec {
    /// Four 3x3 conv stages (three followed by 2x2 average pooling), global
    /// pooling, then two fully connected layers ending in the embedding.
    Tiny {
        widths: [usize; 4],
        hidden: usize,
        embed_dim: usize,
        activation: Activation,
    },
    /// 50-layer bottleneck residual network whose classifier is replaced by a
    /// projection to the embedding.
    Resnet50 { embed_dim: usize },
    /// Global colour average followed by two fully connected layers; has no
    /// spatial feature block.
    PixelMlp { hidden: usize, embed_dim: usize },
}

impl BackboneSpec {
    pub fn tiny(embed_dim: usize) -> Self {
        BackboneSpec::Tiny {
            widths: [8, 16, 32, 32],
            hidden: 64,
            embed_dim,
            activation: Activation::Silu,
        }
    }

    pub fn embed_dim(&self) -> usize {
        match self {
            BackboneSpec::Tiny { embed_dim, .. }
            | BackboneSpec::Resnet50 { embed_dim }
            | BackboneSpec::PixelMlp { embed_dim, .. } => *embed_dim,
        }
    }

    /// Builds freshly initialised layers and the seam table.
    pub fn build<T: Scalar>(&self, seed: u64) -> (Network<T>, Vec<(InsertionPoint, usize)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers: Vec<Layer<T>> = vec![Layer::Standardize {
            mean: INPUT_MEAN,
            std: INPUT_STD,
        }];
        let mut seams = vec![
            (InsertionPoint::PixelPreAug, 0),
            (InsertionPoint::PixelPostAug, 0),
        ];
        match self {
            BackboneSpec::Tiny {
                widths,
                hidden,
                embed_dim,
                activation,
            } => {
                let mut in_ch = 3;
                for (stage, &w) in widths.iter().enumerate() {
                    layers.push(Layer::Conv(Conv2d::new(in_ch, w, 3, 1, 1, &mut rng)));
                    layers.push(Layer::Act(*activation));
                    if stage < 3 {
                        layers.push(Layer::Pool(Pool {
                            kind: PoolKind::Avg,
                            kernel: 2,
                            stride: 2,
                            pad: 0,
                        }));
                        seams.push((InsertionPoint::AfterPool(stage + 1), layers.len()));
                    }
                    in_ch = w;
                }
                layers.push(Layer::GlobalAvgPool);
                seams.push((InsertionPoint::AfterGap, layers.len()));
                layers.push(Layer::Linear(Linear::new(in_ch, *hidden, &mut rng)));
                layers.push(Layer::Act(*activation));
                seams.push((InsertionPoint::AfterFc(1), layers.len()));
                layers.push(Layer::Linear(Linear::new(*hidden, *embed_dim, &mut rng)));
                seams.push((InsertionPoint::AfterFc(2), layers.len()));
            }
            BackboneSpec::Resnet50 { embed_dim } => {
                layers.push(Layer::Conv(Conv2d::new(3, 64, 7, 2, 3, &mut rng)));
                layers.push(Layer::Affine(ChannelAffine::new(64)));
                layers.push(Layer::Act(Activation::Relu));
                layers.push(Layer::Pool(Pool {
                    kind: PoolKind::Max,
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                }));
                seams.push((InsertionPoint::AfterPool(1), layers.len()));
                let mut in_ch = 64;
                for (stage, &(mid, blocks)) in [(64, 3), (128, 4), (256, 6), (512, 3)].iter().enumerate() {
                    let out = mid * 4;
                    for b in 0..blocks {
                        let stride = if b == 0 && stage > 0 { 2 } else { 1 };
                        let mut last = ChannelAffine::new(out);
                        // zero-initialised residual branch keeps the unnormalised stack stable
                        last.scale.fill(T::zero());
                        let main = vec![
                            Layer::Conv(Conv2d::new(in_ch, mid, 1, 1, 0, &mut rng)),
                            Layer::Affine(ChannelAffine::new(mid)),
                            Layer::Act(Activation::Relu),
                            Layer::Conv(Conv2d::new(mid, mid, 3, stride, 1, &mut rng)),
                            Layer::Affine(ChannelAffine::new(mid)),
                            Layer::Act(Activation::Relu),
                            Layer::Conv(Conv2d::new(mid, out, 1, 1, 0, &mut rng)),
                            Layer::Affine(last),
                        ];
                        let shortcut = if in_ch != out || stride != 1 {
                            vec![
                                Layer::Conv(Conv2d::new(in_ch, out, 1, stride, 0, &mut rng)),
                                Layer::Affine(ChannelAffine::new(out)),
                            ]
                        } else {
                            Vec::new()
                        };
                        layers.push(Layer::Residual(Box::new(Residual { main, shortcut })));
                        in_ch = out;
                    }
                }
                layers.push(Layer::GlobalAvgPool);
                seams.push((InsertionPoint::AfterGap, layers.len()));
                layers.push(Layer::Linear(Linear::new(in_ch, *embed_dim, &mut rng)));
                seams.push((InsertionPoint::AfterFc(1), layers.len()));
            }
            BackboneSpec::PixelMlp { hidden, embed_dim } => {
                layers.push(Layer::GlobalAvgPool);
                seams.push((InsertionPoint::AfterGap, layers.len()));
                layers.push(Layer::Linear(Linear::new(3, *hidden, &mut rng)));
                layers.push(Layer::Act(Activation::Silu));
                seams.push((InsertionPoint::AfterFc(1), layers.len()));
                layers.push(Layer::Linear(Linear::new(*hidden, *embed_dim, &mut rng)));
                seams.push((InsertionPoint::AfterFc(2), layers.len()));
            }
        }
        (Network::new(layers), seams)
    }
}
