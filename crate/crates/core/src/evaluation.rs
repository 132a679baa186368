//! Metrics, perturbation sweeps, I-FGSM, GradCAM and embedding export.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corruptions::{apply_corruption, CorruptionKind, CorruptionPolicy, CorruptionSpec};
use crate::dataset::{eval_transform, AugmentConfig, Dataset, Split};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::losses::{final_logit_grad, inference_loss_input_grad};
use crate::model::AttributionModel;
use crate::scalar::Scalar;
use crate::seeding::derive_seed;
use crate::tensor::Tensor;

pub const NMI_NORMALIZATION: &str = "geometric";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub detection_accuracy: f64,
    pub attribution_accuracy: f64,
    pub attribution_nmi: f64,
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(T;P) / sqrt(H(T) H(P))` over the contingency table, natural logs.
/// Identical labelings, and renamings of two or more classes, score exactly 1;
/// otherwise a zero marginal entropy scores 0.
pub fn nmi(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::Shape("truth and prediction lengths differ".into()));
    }
    if truth.is_empty() {
        return Err(Error::Empty("no predictions".into()));
    }
    if truth == predicted {
        return Ok(1.0);
    }
    let n = truth.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (&t, &p) in truth.iter().zip(predicted) {
        *joint.entry((t, p)).or_default() += 1;
        *rows.entry(t).or_default() += 1;
        *cols.entry(p).or_default() += 1;
    }
    // one-to-one relabelling of two or more classes
    if rows.len() > 1 && joint.len() == rows.len() && joint.len() == cols.len() {
        return Ok(1.0);
    }
    let ht = entropy(rows.values().copied(), n);
    let hp = entropy(cols.values().copied(), n);
    if ht == 0.0 || hp == 0.0 {
        return Ok(0.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(t, p), &c)| {
            let c = c as f64;
            c / n * (n * c / (rows[&t] as f64 * cols[&p] as f64)).ln()
        })
        .sum();
    Ok((mi / (ht * hp).sqrt()).clamp(0.0, 1.0))
}

/// Accuracy, binary REAL-vs-not accuracy and NMI from `(truth, predicted)` pairs.
pub fn compute_metrics(pairs: &[(usize, usize)], real_index: usize) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::Empty("no predictions".into()));
    }
    let n = pairs.len() as f64;
    let exact = pairs.iter().filter(|(t, p)| t == p).count();
    let binary = pairs.iter().filter(|(t, p)| (*t == real_index) == (*p == real_index)).count();
    let (truth, predicted): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    Ok(Metrics {
        count: pairs.len(),
        detection_accuracy: binary as f64 / n,
        attribution_accuracy: exact as f64 / n,
        attribution_nmi: nmi(&truth, &predicted)?,
    })
}

/// One evaluated image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub index: usize,
    pub truth: usize,
    pub predicted: usize,
    pub seen_semantic: bool,
}

/// Corruption applied to every image of an evaluation pass; each image gets
/// the seed `derive_seed(seed, dataset index)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalCorruption {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

/// Network input for image `index`: eval transform, then the optional corruption.
pub fn eval_input(data: &Dataset, index: usize, aug: &AugmentConfig, corruption: Option<&EvalCorruption>) -> Result<Image> {
    let img = eval_transform(&data.items[index].pixels, aug)?;
    match corruption {
        None => Ok(img),
        Some(c) => {
            let spec = CorruptionSpec::new(c.kind, c.severity, derive_seed(c.seed, index as u64))?;
            apply_corruption(&img, &spec)
        }
    }
}

/// Unmixed inference over `indices`.
pub fn predict_records<T: Scalar>(
    model: &AttributionModel<T>,
    data: &Dataset,
    indices: &[usize],
    aug: &AugmentConfig,
    corruption: Option<&EvalCorruption>,
) -> Result<Vec<EvalRecord>> {
    indices
        .iter()
        .map(|&i| {
            let x = eval_input(data, i, aug, corruption)?;
            let pred = model.predict(&x.to_tensor())?;
            Ok(EvalRecord {
                index: i,
                truth: data.items[i].source_label,
                predicted: pred.source,
                seen_semantic: data.is_seen(i),
            })
        })
        .collect()
}

/// Attribution accuracy on `indices` without mixing or corruption.
pub fn attribution_accuracy<T: Scalar>(
    model: &AttributionModel<T>,
    data: &Dataset,
    indices: &[usize],
    aug: &AugmentConfig,
) -> Result<f64> {
    let recs = predict_records(model, data, indices, aug, None)?;
    if recs.is_empty() {
        return Err(Error::Empty("no images to evaluate".into()));
    }
    Ok(recs.iter().filter(|r| r.truth == r.predicted).count() as f64 / recs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    /// `seen` or `unseen`.
    pub semantic_group: String,
    /// Corruption kind name, or `none`.
    pub corruption: String,
    /// 0 when uncorrupted.
    pub severity: u8,
    pub metrics: Metrics,
}

pub const SLICE_CSV_HEADER: &str =
    "semantic_group,corruption,severity,count,detection_accuracy,attribution_accuracy,attribution_nmi";

impl SliceMetrics {
    fn csv_row(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{}",
            self.semantic_group,
            self.corruption,
            self.severity,
            m.count,
            m.detection_accuracy,
            m.attribution_accuracy,
            m.attribution_nmi
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nmi_normalization: String,
    pub real_index: usize,
    pub overall: Metrics,
    pub slices: Vec<SliceMetrics>,
}

impl MetricsReport {
    pub fn from_records(records: &[EvalRecord], real_index: usize, corruption: Option<&EvalCorruption>) -> Result<Self> {
        let pairs = |seen: Option<bool>| -> Vec<(usize, usize)> {
            records
                .iter()
                .filter(|r| seen.is_none_or(|s| r.seen_semantic == s))
                .map(|r| (r.truth, r.predicted))
                .collect()
        };
        let overall = compute_metrics(&pairs(None), real_index)?;
        let (name, severity) = corruption.map_or(("none".to_string(), 0), |c| (c.kind.name().to_string(), c.severity));
        let mut slices = Vec::new();
        for (group, seen) in [("seen", true), ("unseen", false)] {
            let p = pairs(Some(seen));
            if !p.is_empty() {
                slices.push(SliceMetrics {
                    semantic_group: group.into(),
                    corruption: name.clone(),
                    severity,
                    metrics: compute_metrics(&p, real_index)?,
                });
            }
        }
        Ok(Self {
            nmi_normalization: NMI_NORMALIZATION.into(),
            real_index,
            overall,
            slices,
        })
    }

    pub fn slice(&self, group: &str) -> Option<&Metrics> {
        self.slices.iter().find(|s| s.semantic_group == group).map(|s| &s.metrics)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn slices_csv(&self) -> String {
        let mut out = format!("{SLICE_CSV_HEADER}\n");
        for s in &self.slices {
            out.push_str(&s.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Evaluates `split` (optionally corrupted) into a report.
pub fn evaluate<T: Scalar>(
    model: &AttributionModel<T>,
    data: &Dataset,
    split: Split,
    aug: &AugmentConfig,
    corruption: Option<&EvalCorruption>,
) -> Result<MetricsReport> {
    let indices = data.split_indices(split);
    let records = predict_records(model, data, &indices, aug, corruption)?;
    MetricsReport::from_records(&records, data.real_index(), corruption)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationEntry {
    pub kind: CorruptionKind,
    pub severity: u8,
    /// Whether the kind was exposed during training.
    pub seen_in_training: bool,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub clean: MetricsReport,
    pub entries: Vec<PerturbationEntry>,
    /// Population standard deviation across entries.
    pub detection_std: f64,
    pub attribution_std: f64,
}

fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

impl PerturbationReport {
    pub fn entry(&self, kind: CorruptionKind, severity: u8) -> Option<&PerturbationEntry> {
        self.entries.iter().find(|e| e.kind == kind && e.severity == severity)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Every slice of the clean pass and of each perturbation, one table.
    pub fn slices_csv(&self) -> String {
        let mut out = self.clean.slices_csv();
        for e in &self.entries {
            for s in &e.report.slices {
                out.push_str(&s.csv_row());
                out.push('\n');
            }
        }
        out
    }
}

/// Every kind in `bank` at severities 1..=5 over `split`.
pub fn per_perturbation_eval<T: Scalar>(
    model: &AttributionModel<T>,
    data: &Dataset,
    split: Split,
    bank: &[CorruptionKind],
    policy: &CorruptionPolicy,
    aug: &AugmentConfig,
    seed: u64,
) -> Result<PerturbationReport> {
    let clean = evaluate(model, data, split, aug, None)?;
    let mut entries = Vec::with_capacity(bank.len() * 5);
    for &kind in bank {
        for severity in 1..=5u8 {
            let c = EvalCorruption { kind, severity, seed };
            entries.push(PerturbationEntry {
                kind,
                severity,
                seen_in_training: policy.is_seen(kind),
                report: evaluate(model, data, split, aug, Some(&c))?,
            });
        }
    }
    let det: Vec<f64> = entries.iter().map(|e| e.report.overall.detection_accuracy).collect();
    let attr: Vec<f64> = entries.iter().map(|e| e.report.overall.attribution_accuracy).collect();
    Ok(PerturbationReport {
        clean,
        entries,
        detection_std: population_std(&det),
        attribution_std: population_std(&attr),
    })
}

/// Bounds `[lo, hi]` inside `[0, 1]` with `|bound - x| <= eps` exactly in f64.
fn ball_bounds(x: f64, eps: f64) -> (f64, f64) {
    let mut lo = (x - eps).max(0.0);
    while x - lo > eps {
        lo = lo.next_up();
    }
    let mut hi = (x + eps).min(1.0);
    while hi - x > eps {
        hi = hi.next_down();
    }
    (lo.min(x), hi.max(x))
}

/// Untargeted I-FGSM on the inference loss: `iterations` signed steps of
/// `epsilon / iterations`, projected onto the L∞ ball and `[0, 1]`. Stops as
/// soon as the prediction leaves `true_label`.
pub fn ifgsm_attack<T: Scalar>(
    model: &AttributionModel<T>,
    image: &Image,
    true_label: usize,
    epsilon: f64,
    iterations: usize,
) -> Result<Image> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if epsilon == 0.0 || iterations == 0 {
        return Ok(image.clone());
    }
    let bounds: Vec<(f64, f64)> = image.data().iter().map(|&x| ball_bounds(x, epsilon)).collect();
    let step = epsilon / iterations as f64;
    let mut adv = image.clone();
    for _ in 0..iterations {
        let x = adv.to_tensor::<T>();
        if model.predict(&x)?.source != true_label {
            break;
        }
        let (_, grad) = inference_loss_input_grad(model, &x, true_label)?;
        if !grad.all_finite() {
            return Err(Error::NonFinite("attack gradient".into()));
        }
        let g = Image::from_tensor(&grad)?;
        for ((a, &gv), &(lo, hi)) in adv.data_mut().iter_mut().zip(g.data()).zip(&bounds) {
            let sign = if gv > 0.0 {
                1.0
            } else if gv < 0.0 {
                -1.0
            } else {
                0.0
            };
            *a = (*a + step * sign).clamp(lo, hi);
        }
    }
    Ok(adv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub epsilon: f64,
    pub iterations: usize,
    pub count: usize,
    pub pre_attack_accuracy: f64,
    pub post_attack_accuracy: f64,
    pub attribution_error: f64,
    /// Largest observed `|adv - orig|`.
    pub max_linf: f64,
}

pub const ATTACK_CSV_HEADER: &str =
    "epsilon,iterations,count,pre_attack_accuracy,post_attack_accuracy,attribution_error,max_linf";

pub fn attack_csv(results: &[AttackResult]) -> String {
    let mut out = format!("{ATTACK_CSV_HEADER}\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epsilon, r.iterations, r.count, r.pre_attack_accuracy, r.post_attack_accuracy, r.attribution_error, r.max_linf
        );
    }
    out
}

/// Attacks each image of `indices` at every epsilon.
pub fn attack_sweep<T: Scalar>(
    model: &AttributionModel<T>,
    data: &Dataset,
    indices: &[usize],
    aug: &AugmentConfig,
    epsilons: &[f64],
    iterations: usize,
) -> Result<Vec<AttackResult>> {
    if indices.is_empty() {
        return Err(Error::Empty("no images to attack".into()));
    }
    let inputs: Vec<Image> = indices.iter().map(|&i| eval_input(data, i, aug, None)).collect::<Result<_>>()?;
    let labels: Vec<usize> = indices.iter().map(|&i| data.items[i].source_label).collect();
    let n = indices.len() as f64;
    let mut pre = 0usize;
    for (x, &y) in inputs.iter().zip(&labels) {
        pre += usize::from(model.predict(&x.to_tensor())?.source == y);
    }
    let mut out = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut post = 0usize;
        let mut max_linf = 0.0f64;
        for (x, &y) in inputs.iter().zip(&labels) {
            let adv = ifgsm_attack(model, x, y, eps, iterations)?;
            max_linf = adv.data().iter().zip(x.data()).fold(max_linf, |m, (a, b)| m.max((a - b).abs()));
            post += usize::from(model.predict(&adv.to_tensor())?.source == y);
        }
        let (pre_acc, post_acc) = (pre as f64 / n, post as f64 / n);
        out.push(AttackResult {
            epsilon: eps,
            iterations,
            count: indices.len(),
            pre_attack_accuracy: pre_acc,
            post_attack_accuracy: post_acc,
            attribution_error: pre_acc - post_acc,
            max_linf,
        });
    }
    Ok(out)
}

/// Heatmap in `[0, 1]` at input resolution; `flat` marks a degenerate map (all zero).
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub flat: bool,
}

/// GradCAM on the last spatial feature block for one target class.
pub fn gradcam_heatmap<T: Scalar>(model: &AttributionModel<T>, image: &Image, target_class: usize) -> Result<Heatmap> {
    let net = model.network();
    let block = net
        .last_spatial_boundary()
        .ok_or_else(|| Error::NoSpatialBlock("backbone pools straight from pixels".into()))?;
    let x: Tensor<T> = image.to_tensor();
    let trace = net.forward_range(&x, 0, net.depth())?;
    let z = trace.last().expect("nonempty trace").data().to_vec();
    let gz = final_logit_grad(model, &z, target_class)?;
    let mut scratch = net.zero_grads();
    let g = net.backward_range(&trace[block..], block, net.depth(), Tensor::vector(gz), &mut scratch);
    let a = &trace[block];
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let mut cam = vec![0.0f64; h * w];
    for ch in 0..c {
        let plane = ch * h * w..(ch + 1) * h * w;
        let alpha = g.data()[plane.clone()].iter().map(|v| v.as_f64()).sum::<f64>() / (h * w) as f64;
        for (m, v) in cam.iter_mut().zip(&a.data()[plane]) {
            *m += alpha * v.as_f64();
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let small = Image::from_fn(w, h, |x, y, _| cam[y * w + x]);
    let up = small.resize(image.width(), image.height());
    let values: Vec<f64> = up.data().chunks_exact(3).map(|p| p[0]).collect();
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi - lo > 1e-12 * hi.abs().max(1.0)) {
        return Ok(Heatmap {
            width: image.width(),
            height: image.height(),
            values: vec![0.0; values.len()],
            flat: true,
        });
    }
    Ok(Heatmap {
        width: image.width(),
        height: image.height(),
        values: values.iter().map(|v| (v - lo) / (hi - lo)).collect(),
        flat: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub id: String,
    pub source: String,
    pub semantic: String,
    pub z: Vec<f64>,
}

/// Embeddings of a split, ordered by id.
pub fn export_embeddings<T: Scalar>(
    model: &AttributionModel<T>,
    data: &Dataset,
    split: Split,
    aug: &AugmentConfig,
) -> Result<Vec<EmbeddingRow>> {
    let mut rows = data
        .split_indices(split)
        .into_iter()
        .map(|i| {
            let x = eval_input(data, i, aug, None)?;
            let z = model.embed(&x.to_tensor())?;
            let r = &data.manifest.records[i];
            Ok(EmbeddingRow {
                id: r.id.clone(),
                source: r.source.clone(),
                semantic: r.semantic.clone(),
                z: z.iter().map(|v| v.as_f64()).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(rows)
}

pub fn embeddings_csv(rows: &[EmbeddingRow]) -> String {
    let dim = rows.first().map_or(0, |r| r.z.len());
    let mut out = String::from("id,source,semantic");
    for i in 0..dim {
        let _ = write!(out, ",z{i}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{}", r.id, r.source, r.semantic);
        for v in &r.z {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Mean Euclidean distance between rows of the same source and of different sources.
pub fn intra_inter_distances(rows: &[EmbeddingRow]) -> (f64, f64) {
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let d = rows[i].z.iter().zip(&rows[j].z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if rows[i].source == rows[j].source {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    (intra / n_intra.max(1) as f64, inter / n_inter.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::nn::BackboneSpec;

    #[test]
    fn perfect_prediction() {
        let pairs: Vec<(usize, usize)> = [0, 1, 2, 3, 1].iter().map(|&y| (y, y)).collect();
        let m = compute_metrics(&pairs, 0).unwrap();
        assert_eq!((m.detection_accuracy, m.attribution_accuracy, m.attribution_nmi), (1.0, 1.0, 1.0));
    }

    #[test]
    fn constant_prediction_has_zero_nmi() {
        let m = compute_metrics(&[(0, 2), (1, 2), (2, 2), (3, 2)], 0).unwrap();
        assert_eq!(m.attribution_nmi, 0.0);
        assert_eq!(m.detection_accuracy, 0.75);
    }

    #[test]
    fn swapped_names_keep_nmi() {
        let m = compute_metrics(&[(0, 1), (0, 1), (1, 0), (1, 0)], 0).unwrap();
        assert_eq!(m.attribution_accuracy, 0.0);
        assert!((m.attribution_nmi - 1.0).abs() < 1e-15);
        assert!(compute_metrics(&[], 0).is_err());
    }

    #[test]
    fn ball_bounds_exact() {
        for &(x, e) in &[(0.3, 2.0 / 255.0), (0.999, 0.1), (0.0, 0.05), (0.1 + 0.2, 1.0 / 3.0)] {
            let (lo, hi) = ball_bounds(x, e);
            assert!(x - lo <= e && hi - x <= e && lo >= 0.0 && hi <= 1.0);
        }
    }

    fn toy_model() -> AttributionModel<f64> {
        let mut cfg = ModelConfig::tiny((0..3).map(|i| format!("c{i}")).collect(), 0, 8);
        cfg.backbone = BackboneSpec::Tiny {
            widths: [3, 4, 4, 5],
            hidden: 6,
            embed_dim: 5,
            activation: crate::nn::Activation::Silu,
        };
        AttributionModel::new(cfg, 3).unwrap()
    }

    #[test]
    fn attack_respects_ball() {
        let model = toy_model();
        let img = Image::from_fn(8, 8, |x, y, c| ((x + y * 3 + c) % 5) as f64 / 4.0);
        assert_eq!(ifgsm_attack(&model, &img, 1, 0.0, 20).unwrap(), img);
        let eps = 8.0 / 255.0;
        let adv = ifgsm_attack(&model, &img, 1, eps, 20).unwrap();
        for (a, b) in adv.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= eps && (0.0..=1.0).contains(a));
        }
        assert!(ifgsm_attack(&model, &img, 1, 1.5, 20).is_err());
    }

    #[test]
    fn attack_leaves_misclassified_images_alone() {
        let model = toy_model();
        let img = Image::from_fn(8, 8, |x, y, c| ((x * 2 + y + c) % 7) as f64 / 6.0);
        let predicted = model.predict(&img.to_tensor()).unwrap().source;
        let wrong = (predicted + 1) % 3;
        assert_eq!(ifgsm_attack(&model, &img, wrong, 8.0 / 255.0, 20).unwrap(), img);
    }

    #[test]
    fn gradcam_contract() {
        let model = toy_model();
        let img = Image::from_fn(8, 8, |x, y, c| ((x * y + c) % 7) as f64 / 6.0);
        let h = gradcam_heatmap(&model, &img, 2).unwrap();
        assert_eq!((h.width, h.height, h.values.len()), (8, 8, 64));
        assert!(h.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn gradcam_needs_spatial_block() {
        let mut cfg = toy_model().config().clone();
        cfg.backbone = BackboneSpec::PixelMlp { hidden: 4, embed_dim: 5 };
        let model = AttributionModel::<f64>::new(cfg, 1).unwrap();
        let img = Image::filled(8, 8, 0.5);
        assert!(matches!(gradcam_heatmap(&model, &img, 0), Err(Error::NoSpatialBlock(_))));
    }

    #[test]
    fn zero_heads_give_flat_heatmap() {
        let mut model = toy_model();
        for p in model.heads_mut().params_mut() {
            p.fill(0.0);
        }
        let img = Image::from_fn(8, 8, |x, _, _| x as f64 / 7.0);
        let h = gradcam_heatmap(&model, &img, 1).unwrap();
        assert!(h.flat && h.values.iter().all(|&v| v == 0.0));
    }
}
