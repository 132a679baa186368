//! Paired sampling, augmentation, mixed forward pass, compound loss, Adam
//! with step decay, early stopping on validation attribution accuracy.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{prepare_training_group, sample_pair_from, AugmentConfig, Dataset, Split};
use crate::error::{Error, Result};
use crate::evaluation::attribution_accuracy;
use crate::losses::{total_loss_backward, LossBreakdown, MixedTarget};
use crate::mix::{sample_mix_weights, MixSpec, DEFAULT_BETA};
use crate::model::{AttributionModel, ModelState};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub lr_decay_gamma: f64,
    pub decay_every: usize,
    pub beta: f64,
    /// Pairs per optimiser step; each pair draws its own weights.
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Images combined per training example.
    pub mix_samples: usize,
    /// `false` trains on each sampled image separately (no representation mixing).
    pub mixing: bool,
    /// Pairs per epoch; `None` means half the training split, so each image is
    /// drawn about once per epoch.
    pub pairs_per_epoch: Option<usize>,
    pub adam: AdamConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 30,
            learning_rate: 1e-4,
            lr_decay_gamma: 0.85,
            decay_every: 1,
            beta: DEFAULT_BETA,
            batch_size: 16,
            early_stop_patience: 5,
            seed: 0,
            mix_samples: 2,
            mixing: true,
            pairs_per_epoch: None,
            adam: AdamConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.max_epochs == 0 || self.batch_size == 0 || self.decay_every == 0 || self.mix_samples < 1 {
            return bad("epochs, batch size, decay period and mix samples must be positive");
        }
        if self.pairs_per_epoch == Some(0) {
            return bad("pairs per epoch must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(self.lr_decay_gamma > 0.0 && self.lr_decay_gamma <= 1.0) {
            return bad("lr decay gamma must be in (0, 1]");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if self.early_stop_patience > self.max_epochs {
            return bad("patience exceeds max epochs");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam betas must be in [0, 1) and eps positive");
        }
        self.augment.validate()
    }

    /// Closed-form step schedule: `lr0 * gamma^floor(epoch / decay_every)`,
    /// `epoch` counted from 0.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay_gamma.powi((epoch / self.decay_every) as i32)
    }
}

/// Adam over a model's parameter list.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new<U: Scalar>(model: &AttributionModel<U>, cfg: AdamConfig) -> Adam<T> {
        let zeros: Vec<Tensor<T>> = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam { cfg, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>], lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::of(self.cfg.beta1), T::of(self.cfg.beta2));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let (lr, eps) = (T::of(lr), T::of(self.cfg.eps));
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
            }
        }
    }
}

/// Mean losses over an epoch's examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub l_det: f64,
    pub l_attr: f64,
    pub l_total: f64,
    pub examples: usize,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_det: f64,
    pub l_attr: f64,
    pub l_total: f64,
    pub val_acc: f64,
    pub lr: f64,
}

/// One optimisation example: dataset indices and the weights they are mixed with.
struct Example {
    indices: Vec<usize>,
    mix: MixSpec,
}

fn draw_examples<R: Rng + ?Sized>(pool: &[usize], cfg: &TrainConfig, rng: &mut R) -> Result<Vec<Example>> {
    let mut indices = Vec::with_capacity(cfg.mix_samples);
    if cfg.mix_samples == 2 {
        let (a, b) = sample_pair_from(pool, rng)?;
        indices.extend([a, b]);
    } else {
        for _ in 0..cfg.mix_samples {
            indices.push(sample_pair_from(pool, rng)?.0);
        }
    }
    let mix = sample_mix_weights(cfg.beta, cfg.mix_samples, rng)?;
    if cfg.mixing {
        return Ok(vec![Example { indices, mix }]);
    }
    Ok(indices
        .into_iter()
        .map(|i| Example { indices: vec![i], mix: MixSpec::identity(1) })
        .collect())
}

/// One pass of `pairs_per_epoch` sampled pairs at learning rate `lr`.
pub fn train_epoch<T: Scalar>(
    model: &mut AttributionModel<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    lr: f64,
    adam: &mut Adam<T>,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    let pool = data.split_indices(Split::Train);
    if pool.is_empty() {
        return Err(Error::Empty("train split".into()));
    }
    let pairs = cfg.pairs_per_epoch.unwrap_or(pool.len().div_ceil(2));
    let point = model.config().insertion_point;
    let real = model.real_index();
    let mut sums = (0.0, 0.0, 0.0);
    let mut examples = 0usize;
    let mut done = 0usize;
    while done < pairs {
        let batch = cfg.batch_size.min(pairs - done);
        let mut grads = model.zero_grads();
        let mut batch_examples = 0usize;
        let mut diagnostics = Vec::new();
        for _ in 0..batch {
            for ex in draw_examples(&pool, cfg, rng)? {
                let images: Vec<_> = ex.indices.iter().map(|&i| &data.items[i].pixels).collect();
                let group = prepare_training_group::<T, _>(&images, &ex.mix, point, &cfg.augment, rng)?;
                let labels = ex.indices.iter().map(|&i| data.items[i].source_label).collect();
                let target = MixedTarget::new(labels, &ex.mix, real)?;
                let (loss, _) = total_loss_backward(model, &group.inputs, &group.forward_mix, &target, &mut grads)?;
                let ids: Vec<&str> = ex.indices.iter().map(|&i| data.items[i].id.as_str()).collect();
                if !loss.l_total.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss {loss:?} on images {ids:?} with weights {:?}, corruptions {:?}",
                        ex.mix.weights, group.corruptions
                    )));
                }
                diagnostics.push((ids.join("+"), group.corruptions));
                accumulate(&mut sums, &loss);
                batch_examples += 1;
            }
        }
        let scale = T::of(1.0 / batch_examples as f64);
        grads.iter_mut().for_each(|g| g.scale(scale));
        if let Some(bad) = grads.iter().position(|g| !g.all_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of parameter tensor {bad}; batch {diagnostics:?}"
            )));
        }
        adam.step(model.params_mut(), &grads, lr);
        examples += batch_examples;
        done += batch;
    }
    let n = examples as f64;
    Ok(EpochStats { l_det: sums.0 / n, l_attr: sums.1 / n, l_total: sums.2 / n, examples })
}

fn accumulate(sums: &mut (f64, f64, f64), l: &LossBreakdown) {
    sums.0 += l.l_det;
    sums.1 += l.l_attr;
    sums.2 += l.l_total;
}

/// Position of a ChaCha8 stream, enough to resume it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Format("malformed rng state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelState,
    pub train_config: TrainConfig,
    /// 1-based epoch the parameters come from.
    pub epoch: usize,
    pub val_accuracy: f64,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn to_model<T: Scalar>(&self) -> Result<AttributionModel<T>> {
        AttributionModel::from_state(&self.model)
    }

    /// Writes to a sibling temp file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format(format!("checkpoint format v{}", ckpt.format_version)));
        }
        Ok(ckpt)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// [`fit_with`] without an observer.
pub fn fit<T: Scalar>(model: &mut AttributionModel<T>, data: &Dataset, cfg: &TrainConfig) -> Result<FitOutcome> {
    fit_with(model, data, cfg, &mut |_, _| Ok(()))
}

/// Trains until `max_epochs` or until validation attribution accuracy has not
/// improved for `early_stop_patience` epochs (at least one). `observer` sees
/// each log line and, when accuracy improved, the new best checkpoint. On
/// return `model` holds the best parameters.
pub fn fit_with<T: Scalar>(
    model: &mut AttributionModel<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochLog, Option<&Checkpoint>) -> Result<()>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if cfg.augment.crop != model.config().input_size {
        return Err(Error::InvalidArgument(format!(
            "crop {} differs from model input size {}",
            cfg.augment.crop,
            model.config().input_size
        )));
    }
    let val = data.split_indices(Split::Val);
    if val.is_empty() {
        return Err(Error::Empty("validation split".into()));
    }
    if data.split_indices(Split::Train).is_empty() {
        return Err(Error::Empty("train split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model, cfg.adam.clone());
    let mut best: Option<Checkpoint> = None;
    let mut log = Vec::new();
    let mut stale = 0usize;
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        let stats = train_epoch(model, data, cfg, lr, &mut adam, &mut rng)?;
        let val_acc = attribution_accuracy(model, data, &val, &cfg.augment)?;
        let entry = EpochLog {
            epoch: epoch + 1,
            l_det: stats.l_det,
            l_attr: stats.l_attr,
            l_total: stats.l_total,
            val_acc,
            lr,
        };
        let improved = best.as_ref().is_none_or(|b| val_acc > b.val_accuracy);
        if improved {
            stale = 0;
            best = Some(Checkpoint {
                format_version: CHECKPOINT_FORMAT_VERSION,
                model: model.to_state(),
                train_config: cfg.clone(),
                epoch: epoch + 1,
                val_accuracy: val_acc,
                rng: RngState::capture(&rng),
            });
        } else {
            stale += 1;
        }
        observer(&entry, if improved { best.as_ref() } else { None })?;
        log.push(entry);
        if stale >= cfg.early_stop_patience.max(1) {
            break;
        }
    }
    let best = best.expect("at least one epoch ran");
    *model = best.to_model()?;
    Ok(FitOutcome { best, log })
}
