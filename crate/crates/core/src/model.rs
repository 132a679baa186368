//! Attribution model: backbone split at a mixing seam plus detection and attribution heads.

use std::ops::Deref;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mix::{repmix, MixSpec, DEFAULT_BETA};
use crate::nn::{BackboneSpec, InsertionPoint, Network};
use crate::scalar::Scalar;
use crate::tensor::{dot, Tensor};

/// Embedding width used by the production configuration.
pub const DEFAULT_EMBED_DIM: usize = 256;

/// Intermediate representation at the mixing seam (`[C, H, W]` or flat).
pub type FeatureMap<T> = Tensor<T>;

/// Output of the late map; the space the heads read from.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T>(Vec<T>);

impl<T: Scalar> Embedding<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }
}

impl<T> Deref for Embedding<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// How the real/fake probabilities gate the attribution logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatingMode {
    /// Raw logits multiplied by the detection probabilities.
    #[default]
    Logit,
    /// Hierarchical log-probabilities: `ln p_real` for REAL and
    /// `ln p_fake + log_softmax_over_fakes(logit)` for the rest.
    Probability,
}

/// Objective the model is trained with; also selects the logits `predict` reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Detection loss plus gated attribution cross-entropy.
    #[default]
    Compound,
    /// Plain (mixing-weighted) cross-entropy on ungated logits.
    CrossEntropy,
}

/// How the binary real/fake decision is read off a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionRule {
    /// Real iff the attribution argmax is the REAL class.
    #[default]
    Argmax,
    /// Real iff the detection head gives `p_real > 0.5`.
    DetectionHead,
}

/// Everything needed to rebuild a model apart from its parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneSpec,
    pub insertion_point: InsertionPoint,
    pub class_names: Vec<String>,
    pub real_index: usize,
    pub beta: f64,
    pub input_size: usize,
    #[serde(default)]
    pub gating: GatingMode,
    #[serde(default)]
    pub loss: LossMode,
    #[serde(default)]
    pub detection_rule: DetectionRule,
}

impl ModelConfig {
    pub fn tiny(class_names: Vec<String>, real_index: usize, input_size: usize) -> Self {
        Self {
            backbone: BackboneSpec::tiny(DEFAULT_EMBED_DIM),
            insertion_point: InsertionPoint::default(),
            class_names,
            real_index,
            beta: DEFAULT_BETA,
            input_size,
            gating: GatingMode::default(),
            loss: LossMode::default(),
            detection_rule: DetectionRule::default(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {}",
                self.class_names.len()
            )));
        }
        if self.real_index >= self.class_names.len() {
            return Err(Error::IndexOutOfRange {
                index: self.real_index,
                len: self.class_names.len(),
            });
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {}", self.beta)));
        }
        if self.input_size == 0 || self.backbone.embed_dim() == 0 {
            return Err(Error::InvalidArgument("zero input size or embedding width".into()));
        }
        Ok(())
    }
}

/// Linear heads on the embedding: two detection filters and the attribution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionHeads<T> {
    pub w_real: Tensor<T>,
    pub w_fake: Tensor<T>,
    /// `[D, |Y|]`, row-major.
    pub w_attr: Tensor<T>,
    pub bias: Tensor<T>,
    pub real_index: usize,
}

impl<T: Scalar> AttributionHeads<T> {
    pub fn new(embed_dim: usize, num_classes: usize, real_index: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if real_index >= num_classes {
            return Err(Error::IndexOutOfRange {
                index: real_index,
                len: num_classes,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (1.0 / embed_dim as f64).sqrt()).expect("valid std");
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::of(normal.sample(&mut rng))).collect() };
        Ok(Self {
            w_real: Tensor::vector(draw(embed_dim)),
            w_fake: Tensor::vector(draw(embed_dim)),
            w_attr: Tensor::from_vec(&[embed_dim, num_classes], draw(embed_dim * num_classes))?,
            bias: Tensor::zeros(&[num_classes]),
            real_index,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.w_real.len()
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    fn check(&self, z: &[T]) -> Result<()> {
        if z.len() != self.embed_dim() {
            return Err(Error::Shape(format!(
                "embedding has {} values, heads expect {}",
                z.len(),
                self.embed_dim()
            )));
        }
        Ok(())
    }

    pub fn params(&self) -> [&Tensor<T>; 4] {
        [&self.w_real, &self.w_fake, &self.w_attr, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<T>; 4] {
        [
            &mut self.w_real,
            &mut self.w_fake,
            &mut self.w_attr,
            &mut self.bias,
        ]
    }
}

/// Two-way softmax of `(w_real . z, w_fake . z)`.
pub fn detection_scores<T: Scalar>(z: &[T], heads: &AttributionHeads<T>) -> Result<(T, T)> {
    heads.check(z)?;
    let zr = dot(heads.w_real.data(), z);
    let zf = dot(heads.w_fake.data(), z);
    Ok(two_way_softmax(zr, zf))
}

pub(crate) fn two_way_softmax<T: Scalar>(zr: T, zf: T) -> (T, T) {
    let m = zr.max(zf);
    let er = (zr - m).exp();
    let ef = (zf - m).exp();
    let pr = er / (er + ef);
    (pr, T::one() - pr)
}

/// `W_attr^T z + b`.
pub fn attribution_logits<T: Scalar>(z: &[T], heads: &AttributionHeads<T>) -> Result<Vec<T>> {
    heads.check(z)?;
    let k = heads.num_classes();
    let mut out = heads.bias.data().to_vec();
    for (&zi, row) in z.iter().zip(heads.w_attr.data().chunks_exact(k)) {
        for (o, &w) in out.iter_mut().zip(row) {
            *o += zi * w;
        }
    }
    Ok(out)
}

/// Scales the REAL logit by `p_real` and every other logit by `p_fake`.
pub fn gated_logits<T: Scalar>(z_attr: &[T], p_real: T, p_fake: T, real_index: usize) -> Result<Vec<T>> {
    if real_index >= z_attr.len() {
        return Err(Error::IndexOutOfRange {
            index: real_index,
            len: z_attr.len(),
        });
    }
    if (p_real + p_fake - T::one()).abs() > T::of(1e-6) {
        return Err(Error::InvalidArgument(format!(
            "detection probabilities {p_real} + {p_fake} do not sum to 1"
        )));
    }
    Ok(z_attr
        .iter()
        .enumerate()
        .map(|(c, &v)| if c == real_index { v * p_real } else { v * p_fake })
        .collect())
}

/// Hierarchical log-probability gating used by [`GatingMode::Probability`].
pub fn probability_gated<T: Scalar>(z_attr: &[T], d: T, real_index: usize) -> Result<Vec<T>> {
    if real_index >= z_attr.len() {
        return Err(Error::IndexOutOfRange {
            index: real_index,
            len: z_attr.len(),
        });
    }
    let ln_real = -softplus(-d);
    let ln_fake = -softplus(d);
    let lse = log_sum_exp(z_attr.iter().enumerate().filter(|(c, _)| *c != real_index).map(|(_, &v)| v));
    Ok(z_attr
        .iter()
        .enumerate()
        .map(|(c, &v)| if c == real_index { ln_real } else { ln_fake + v - lse })
        .collect())
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(xs: impl Iterator<Item = T> + Clone) -> T {
    let m = xs.clone().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + xs.map(|v| (v - m).exp()).sum::<T>().ln()
}

/// Max-subtracted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Everything the heads compute from one embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput<T> {
    pub z_real: T,
    pub z_fake: T,
    pub p_real: T,
    pub p_fake: T,
    pub logits: Vec<T>,
    /// Logits the loss and `predict` read: gated for the compound objective,
    /// raw for plain cross-entropy.
    pub final_logits: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub source: usize,
    pub is_real: bool,
    pub scores: Vec<T>,
    pub p_real: T,
}

/// Activations recorded by [`AttributionModel::forward_mixed_traced`].
#[derive(Debug, Clone)]
pub struct MixedTrace<T> {
    pub early: Vec<Vec<Tensor<T>>>,
    pub late: Vec<Tensor<T>>,
    pub mix: MixSpec,
}

impl<T: Scalar> MixedTrace<T> {
    pub fn embedding(&self) -> Embedding<T> {
        Embedding(self.late.last().expect("nonempty trace").data().to_vec())
    }
}

/// Backbone split into early map, seam and late map, plus heads.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionModel<T> {
    config: ModelConfig,
    network: Network<T>,
    heads: AttributionHeads<T>,
    seam: usize,
}

impl<T: Scalar> AttributionModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (network, seams) = config.backbone.build::<T>(seed);
        let seam = seams
            .iter()
            .find(|(ip, _)| *ip == config.insertion_point)
            .map(|(_, s)| *s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "backbone has no seam `{}`",
                    config.insertion_point
                ))
            })?;
        network.check_seam(seam)?;
        let heads = AttributionHeads::new(
            config.backbone.embed_dim(),
            config.num_classes(),
            config.real_index,
            seed ^ 0x5eed_0f_4ead,
        )?;
        Ok(Self {
            config,
            network,
            heads,
            seam,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn network(&self) -> &Network<T> {
        &self.network
    }

    pub fn heads(&self) -> &AttributionHeads<T> {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut AttributionHeads<T> {
        &mut self.heads
    }

    /// Layer index where mixing happens; `0` for pixel-level insertion.
    pub fn seam(&self) -> usize {
        self.seam
    }

    pub fn real_index(&self) -> usize {
        self.config.real_index
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = self.config.input_size;
        if x.shape() != [3, s, s] {
            return Err(Error::Shape(format!(
                "model expects [3, {s}, {s}] input, got {:?}",
                x.shape()
            )));
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("input image".into()));
        }
        Ok(())
    }

    /// Early map `f_e`.
    pub fn early(&self, x: &Tensor<T>) -> Result<FeatureMap<T>> {
        self.check_input(x)?;
        let mut t = self.network.forward_range(x, 0, self.seam)?;
        Ok(t.pop().expect("nonempty"))
    }

    /// Late map `f_l`.
    pub fn late(&self, u: &FeatureMap<T>) -> Result<Embedding<T>> {
        let mut t = self.network.forward_range(u, self.seam, self.network.depth())?;
        Ok(Embedding(t.pop().expect("nonempty").into_vec()))
    }

    /// Unmixed forward pass.
    pub fn embed(&self, x: &Tensor<T>) -> Result<Embedding<T>> {
        self.check_input(x)?;
        let mut t = self.network.forward_range(x, 0, self.network.depth())?;
        Ok(Embedding(t.pop().expect("nonempty").into_vec()))
    }

    pub fn forward_mixed(&self, images: &[Tensor<T>], mix: &MixSpec) -> Result<Embedding<T>> {
        Ok(self.forward_mixed_traced(images, mix)?.embedding())
    }

    /// `f_l(sum_k w_k f_e(x_k))`, keeping every activation for the backward pass.
    pub fn forward_mixed_traced(&self, images: &[Tensor<T>], mix: &MixSpec) -> Result<MixedTrace<T>> {
        mix.validate()?;
        if images.len() != mix.len() {
            return Err(Error::Shape(format!(
                "{} images but {} mixing weights",
                images.len(),
                mix.len()
            )));
        }
        let mut early = Vec::with_capacity(images.len());
        for x in images {
            self.check_input(x)?;
            early.push(self.network.forward_range(x, 0, self.seam)?);
        }
        let seam_maps: Vec<Tensor<T>> = early.iter().map(|t| t.last().expect("nonempty").clone()).collect();
        let u = repmix(&seam_maps, mix)?;
        let late = self.network.forward_range(&u, self.seam, self.network.depth())?;
        Ok(MixedTrace {
            early,
            late,
            mix: mix.clone(),
        })
    }

    /// Backpropagates the embedding gradient through the late map, the mixing
    /// layer and each early branch. Returns per-image input gradients.
    pub fn backward_mixed(&self, trace: &MixedTrace<T>, grad_z: &[T], grads: &mut [Tensor<T>]) -> Vec<Tensor<T>> {
        let depth = self.network.depth();
        let gz = Tensor::from_vec(trace.late.last().expect("nonempty").shape(), grad_z.to_vec())
            .expect("embedding gradient matches embedding");
        let net_grads = &mut grads[..self.network.param_count()];
        let gu = self.network.backward_range(&trace.late, self.seam, depth, gz, net_grads);
        trace
            .early
            .iter()
            .zip(&trace.mix.weights)
            .map(|(branch, &w)| {
                let mut g = gu.clone();
                g.scale(T::of(w));
                if w == 0.0 {
                    return Tensor::zeros(branch[0].shape());
                }
                self.network.backward_range(branch, 0, self.seam, g, net_grads)
            })
            .collect()
    }

    /// Heads applied to an embedding.
    pub fn head_output(&self, z: &[T]) -> Result<HeadOutput<T>> {
        self.heads.check(z)?;
        let z_real = dot(self.heads.w_real.data(), z);
        let z_fake = dot(self.heads.w_fake.data(), z);
        let (p_real, p_fake) = two_way_softmax(z_real, z_fake);
        let logits = attribution_logits(z, &self.heads)?;
        let final_logits = match (self.config.loss, self.config.gating) {
            (LossMode::CrossEntropy, _) => logits.clone(),
            (LossMode::Compound, GatingMode::Logit) => gated_logits(&logits, p_real, p_fake, self.config.real_index)?,
            (LossMode::Compound, GatingMode::Probability) => {
                probability_gated(&logits, z_real - z_fake, self.config.real_index)?
            }
        };
        Ok(HeadOutput {
            z_real,
            z_fake,
            p_real,
            p_fake,
            logits,
            final_logits,
        })
    }

    pub fn predict_embedding(&self, z: &[T]) -> Result<Prediction<T>> {
        let out = self.head_output(z)?;
        let scores = softmax(&out.final_logits);
        let source = argmax(&scores);
        let is_real = match self.config.detection_rule {
            DetectionRule::Argmax => source == self.config.real_index,
            DetectionRule::DetectionHead => out.p_real > T::of(0.5),
        };
        Ok(Prediction {
            source,
            is_real,
            scores,
            p_real: out.p_real,
        })
    }

    /// Inference: unmixed forward pass, then softmax over the final logits.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Prediction<T>> {
        let z = self.embed(x)?;
        self.predict_embedding(&z)
    }

    /// Network parameters followed by `w_real, w_fake, w_attr, bias`.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = self.network.params();
        p.extend(self.heads.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.network.params_mut();
        p.extend(self.heads.params_mut());
        p
    }

    pub fn zero_grads(&self) -> Vec<Tensor<T>> {
        self.params().into_iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn to_state(&self) -> ModelState {
        ModelState {
            config: self.config.clone(),
            params: self
                .params()
                .iter()
                .map(|p| p.data().iter().map(|v| v.as_f64()).collect())
                .collect(),
        }
    }

    pub fn from_state(state: &ModelState) -> Result<Self> {
        let mut model = Self::new(state.config.clone(), 0)?;
        let mut params = model.params_mut();
        if params.len() != state.params.len() {
            return Err(Error::Format(format!(
                "state has {} parameter tensors, architecture needs {}",
                state.params.len(),
                params.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(&state.params) {
            if p.len() != v.len() {
                return Err(Error::Format(format!(
                    "parameter of shape {:?} stored with {} values",
                    p.shape(),
                    v.len()
                )));
            }
            for (d, &s) in p.data_mut().iter_mut().zip(v) {
                *d = T::of(s);
            }
        }
        Ok(model)
    }
}

/// Serializable configuration plus flattened parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heads(d: usize, k: usize) -> AttributionHeads<f64> {
        AttributionHeads::new(d, k, 0, 1).unwrap()
    }

    #[test]
    fn equal_detection_filters_give_half() {
        let mut h = heads(4, 3);
        h.w_fake = h.w_real.clone();
        let (r, f) = detection_scores(&[0.3, -2.0, 1.0, 5.0], &h).unwrap();
        assert_eq!((r, f), (0.5, 0.5));
        let (r, f) = detection_scores(&[0.0; 4], &heads(4, 3)).unwrap();
        assert_eq!((r, f), (0.5, 0.5));
    }

    #[test]
    fn ln3_margin_gives_three_quarters() {
        let mut h = heads(2, 2);
        h.w_real = Tensor::vector(vec![3f64.ln(), 0.0]);
        h.w_fake = Tensor::vector(vec![0.0, 0.0]);
        let (r, f) = detection_scores(&[1.0, 0.0], &h).unwrap();
        assert!((r - 0.75).abs() < 1e-15);
        assert!((r + f - 1.0).abs() < 1e-15);
    }

    #[test]
    fn attribution_logits_cases() {
        let h = heads(3, 4);
        assert_eq!(attribution_logits(&[0.0; 3], &h).unwrap(), h.bias.data());
        let mut id = heads(3, 3);
        id.w_attr = Tensor::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        assert_eq!(attribution_logits(&[0., 1., 0.], &id).unwrap(), vec![0., 1., 0.]);
        assert!(attribution_logits(&[0.0; 2], &h).is_err());
    }

    #[test]
    fn gating_cases() {
        assert_eq!(gated_logits(&[1.0, 2.0, 0.5], 1.0, 0.0, 0).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(gated_logits(&[1.0, -2.0, 0.5], 0.5, 0.5, 1).unwrap(), vec![0.5, -1.0, 0.25]);
        let g = gated_logits(&[1.0f64, 2.0, 0.5], 0.8, 0.2, 0).unwrap();
        for (a, b) in g.iter().zip([0.8, 0.4, 0.1]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(
            gated_logits(&[1.0, 2.0], 0.5, 0.5, 2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn probability_gating_is_a_distribution() {
        let g = probability_gated(&[0.3f64, -1.0, 2.0, 0.1], 0.7, 0).unwrap();
        let total: f64 = g.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let (pr, _) = two_way_softmax(0.7f64, 0.0);
        assert!((g[0].exp() - pr).abs() < 1e-12);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.5f32; 4]), 0);
    }
}
