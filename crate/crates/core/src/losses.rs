//! Compound objective: mixing-weighted real/fake detection loss plus gated
//! attribution cross-entropy, with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mix::MixSpec;
use crate::model::{softmax, AttributionModel, GatingMode, HeadOutput, LossMode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Floor applied to every probability before taking its logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Labels of the mixed samples together with their mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedTarget {
    pub source_labels: Vec<usize>,
    /// 0 for REAL, 1 for any synthetic source.
    pub pseudo_labels: Vec<u8>,
    pub weights: Vec<f64>,
}

impl MixedTarget {
    pub fn new(source_labels: Vec<usize>, mix: &MixSpec, real_index: usize) -> Result<Self> {
        if source_labels.len() != mix.len() {
            return Err(Error::Shape(format!(
                "{} labels but {} mixing weights",
                source_labels.len(),
                mix.len()
            )));
        }
        let pseudo_labels = source_labels.iter().map(|&y| u8::from(y != real_index)).collect();
        Ok(Self {
            source_labels,
            pseudo_labels,
            weights: mix.weights.clone(),
        })
    }

    /// Weight mass on REAL samples and on synthetic samples.
    fn real_fake_mass(&self) -> (f64, f64) {
        self.weights
            .iter()
            .zip(&self.pseudo_labels)
            .fold((0.0, 0.0), |(r, f), (&w, &y)| if y == 0 { (r + w, f) } else { (r, f + w) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_det: f64,
    pub l_attr: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    fn new(l_det: f64, l_attr: f64) -> Self {
        Self {
            l_det,
            l_attr,
            l_total: l_det + l_attr,
        }
    }
}

fn floored_ln<T: Scalar>(p: T) -> T {
    p.max(T::of(PROB_FLOOR)).ln()
}

fn check_probs<T: Scalar>(p_real: T, p_fake: T) -> Result<()> {
    let ok = |p: T| p >= T::zero() && p <= T::one();
    if !ok(p_real) || !ok(p_fake) || (p_real + p_fake - T::one()).abs() > T::of(1e-6) {
        return Err(Error::InvalidArgument(format!(
            "invalid detection probabilities ({p_real}, {p_fake})"
        )));
    }
    Ok(())
}

/// `-(sum_k w_k (1 - y*_k)) ln p_real - (sum_k w_k y*_k) ln p_fake / (|Y| - 1)`.
pub fn detection_loss<T: Scalar>(p_real: T, p_fake: T, target: &MixedTarget, num_classes: usize) -> Result<T> {
    check_probs(p_real, p_fake)?;
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    let (real_mass, fake_mass) = target.real_fake_mass();
    let fake_scale = 1.0 / (num_classes - 1) as f64;
    Ok(-T::of(real_mass) * floored_ln(p_real) - T::of(fake_scale * fake_mass) * floored_ln(p_fake))
}

/// `-sum_k w_k ln softmax(gated)[y_k]`.
pub fn attribution_loss<T: Scalar>(gated: &[T], target: &MixedTarget) -> Result<T> {
    if let Some(&y) = target.source_labels.iter().find(|&&y| y >= gated.len()) {
        return Err(Error::IndexOutOfRange {
            index: y,
            len: gated.len(),
        });
    }
    let q = softmax(gated);
    Ok(target
        .source_labels
        .iter()
        .zip(&target.weights)
        .map(|(&y, &w)| -T::of(w) * floored_ln(q[y]))
        .sum())
}

/// Gradients of the head-level loss.
#[derive(Debug, Clone)]
pub struct HeadGradients<T> {
    pub embedding: Vec<T>,
    /// `w_real, w_fake, w_attr, bias`.
    pub params: [Tensor<T>; 4],
}

/// Loss of one embedding under the model's objective, with gradients with
/// respect to the embedding and the head parameters.
pub fn head_loss<T: Scalar>(
    model: &AttributionModel<T>,
    z: &[T],
    target: &MixedTarget,
) -> Result<(LossBreakdown, HeadGradients<T>)> {
    head_loss_terms(model, z, target, true)
}

/// Cross-entropy of the inference-time logits alone (no detection term).
pub fn inference_head_loss<T: Scalar>(
    model: &AttributionModel<T>,
    z: &[T],
    target: &MixedTarget,
) -> Result<(LossBreakdown, HeadGradients<T>)> {
    head_loss_terms(model, z, target, false)
}

fn head_loss_terms<T: Scalar>(
    model: &AttributionModel<T>,
    z: &[T],
    target: &MixedTarget,
    with_detection: bool,
) -> Result<(LossBreakdown, HeadGradients<T>)> {
    let out = model.head_output(z)?;
    let cfg = model.config();
    let k = model.num_classes();
    let l_det = match cfg.loss {
        LossMode::Compound if with_detection => detection_loss(out.p_real, out.p_fake, target, k)?,
        _ => T::zero(),
    };
    let l_attr = attribution_loss(&out.final_logits, target)?;
    let breakdown = LossBreakdown::new(l_det.as_f64(), l_attr.as_f64());

    // d L_attr / d final_logits
    let q = softmax(&out.final_logits);
    let floor = T::of(PROB_FLOOR);
    let mut d_final = vec![T::zero(); k];
    for (&y, &w) in target.source_labels.iter().zip(&target.weights) {
        if w == 0.0 || q[y] < floor {
            continue;
        }
        let w = T::of(w);
        for (c, g) in d_final.iter_mut().enumerate() {
            let indicator = if c == y { T::one() } else { T::zero() };
            *g += w * (q[c] - indicator);
        }
    }

    let mut d_margin = T::zero();
    if with_detection && cfg.loss == LossMode::Compound {
        let (pr, pf) = (out.p_real, out.p_fake);
        let (real_mass, fake_mass) = target.real_fake_mass();
        if pr >= floor {
            d_margin -= T::of(real_mass) * pf;
        }
        if pf >= floor {
            d_margin += T::of(fake_mass / (k - 1) as f64) * pr;
        }
    }
    Ok((breakdown, backprop_final(model, &out, z, &d_final, d_margin)))
}

/// Pulls `d_final` (gradient at the final logits) plus a direct gradient on
/// the detection margin `z_real - z_fake` back to the embedding and heads.
fn backprop_final<T: Scalar>(
    model: &AttributionModel<T>,
    out: &HeadOutput<T>,
    z: &[T],
    d_final: &[T],
    mut d_margin: T,
) -> HeadGradients<T> {
    let cfg = model.config();
    let k = model.num_classes();
    let real = cfg.real_index;
    let HeadOutput { p_real, p_fake, logits, .. } = out;
    let (pr, pf) = (*p_real, *p_fake);
    let mut d_logits = vec![T::zero(); k];
    match (cfg.loss, cfg.gating) {
        (LossMode::CrossEntropy, _) => d_logits.copy_from_slice(d_final),
        (LossMode::Compound, GatingMode::Logit) => {
            let mut d_pr = T::zero();
            for c in 0..k {
                if c == real {
                    d_logits[c] = d_final[c] * pr;
                    d_pr += d_final[c] * logits[c];
                } else {
                    d_logits[c] = d_final[c] * pf;
                    d_pr -= d_final[c] * logits[c];
                }
            }
            d_margin += d_pr * pr * pf;
        }
        (LossMode::Compound, GatingMode::Probability) => {
            let fakes: Vec<usize> = (0..k).filter(|&c| c != real).collect();
            let r = softmax(&fakes.iter().map(|&c| logits[c]).collect::<Vec<_>>());
            let fake_total: T = fakes.iter().map(|&c| d_final[c]).sum();
            for (&c, &rc) in fakes.iter().zip(&r) {
                d_logits[c] = d_final[c] - rc * fake_total;
            }
            d_margin += d_final[real] * pf - pr * fake_total;
        }
    }

    let heads = model.heads();
    let d = heads.embed_dim();
    let mut g_z = vec![T::zero(); d];
    let mut g_wreal = Tensor::zeros(&[d]);
    let mut g_wfake = Tensor::zeros(&[d]);
    let mut g_wattr = Tensor::zeros(&[d, k]);
    for i in 0..d {
        let row = &heads.w_attr.data()[i * k..(i + 1) * k];
        let mut acc = d_margin * (heads.w_real.data()[i] - heads.w_fake.data()[i]);
        for (c, &w) in row.iter().enumerate() {
            acc += w * d_logits[c];
            g_wattr.data_mut()[i * k + c] = z[i] * d_logits[c];
        }
        g_z[i] = acc;
        g_wreal.data_mut()[i] = d_margin * z[i];
        g_wfake.data_mut()[i] = -d_margin * z[i];
    }
    HeadGradients {
        embedding: g_z,
        params: [g_wreal, g_wfake, g_wattr, Tensor::vector(d_logits)],
    }
}

/// Gradient of one final (inference-time) logit with respect to the embedding.
pub fn final_logit_grad<T: Scalar>(model: &AttributionModel<T>, z: &[T], class: usize) -> Result<Vec<T>> {
    let k = model.num_classes();
    if class >= k {
        return Err(Error::IndexOutOfRange { index: class, len: k });
    }
    let out = model.head_output(z)?;
    let mut d_final = vec![T::zero(); k];
    d_final[class] = T::one();
    Ok(backprop_final(model, &out, z, &d_final, T::zero()).embedding)
}

/// Mixed forward pass followed by both losses.
pub fn total_loss<T: Scalar>(
    model: &AttributionModel<T>,
    images: &[Tensor<T>],
    mix: &MixSpec,
    target: &MixedTarget,
) -> Result<LossBreakdown> {
    let z = model.forward_mixed(images, mix)?;
    Ok(head_loss(model, &z, target)?.0)
}

/// [`total_loss`] plus parameter gradients (accumulated into `grads`, laid out
/// like [`AttributionModel::params`]) and per-image input gradients.
pub fn total_loss_backward<T: Scalar>(
    model: &AttributionModel<T>,
    images: &[Tensor<T>],
    mix: &MixSpec,
    target: &MixedTarget,
    grads: &mut [Tensor<T>],
) -> Result<(LossBreakdown, Vec<Tensor<T>>)> {
    let trace = model.forward_mixed_traced(images, mix)?;
    let z = trace.embedding();
    let (loss, hg) = head_loss(model, &z, target)?;
    let n = grads.len();
    for (g, h) in grads[n - 4..].iter_mut().zip(&hg.params) {
        g.axpy(T::one(), h);
    }
    let input_grads = model.backward_mixed(&trace, &hg.embedding, grads);
    Ok((loss, input_grads))
}

/// Input gradient of the unmixed inference loss at `label`, as used by attacks.
pub fn inference_loss_input_grad<T: Scalar>(
    model: &AttributionModel<T>,
    image: &Tensor<T>,
    label: usize,
) -> Result<(T, Tensor<T>)> {
    let mix = MixSpec::identity(1);
    let target = MixedTarget::new(vec![label], &mix, model.real_index())?;
    let trace = model.forward_mixed_traced(std::slice::from_ref(image), &mix)?;
    let (loss, hg) = inference_head_loss(model, &trace.embedding(), &target)?;
    let mut scratch = model.zero_grads();
    let grad = model.backward_mixed(&trace, &hg.embedding, &mut scratch).remove(0);
    Ok((T::of(loss.l_total), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target(labels: &[usize], weights: &[f64]) -> MixedTarget {
        MixedTarget::new(labels.to_vec(), &MixSpec::new(0.4, weights.to_vec()).unwrap(), 0).unwrap()
    }

    #[test]
    fn pseudo_labels_follow_real_index() {
        let t = target(&[0, 3], &[0.5, 0.5]);
        assert_eq!(t.pseudo_labels, vec![0, 1]);
    }

    #[test]
    fn perfect_detection_has_zero_loss() {
        let reals = target(&[0, 0], &[0.3, 0.7]);
        assert_eq!(detection_loss(1.0f64, 0.0, &reals, 8).unwrap(), 0.0);
        let fakes = target(&[2, 5], &[0.3, 0.7]);
        assert_eq!(detection_loss(0.0f64, 1.0, &fakes, 8).unwrap(), 0.0);
    }

    #[test]
    fn worked_detection_values() {
        let reals = target(&[0, 0], &[0.5, 0.5]);
        let l = detection_loss(0.5f64, 0.5, &reals, 8).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let mixed = target(&[0, 3], &[0.5, 0.5]);
        let l = detection_loss(0.5f64, 0.5, &mixed, 8).unwrap();
        let expected = 0.5 * 2f64.ln() + 0.5 * 2f64.ln() / 7.0;
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 0.3961).abs() < 5e-5);
    }

    #[test]
    fn detection_errors() {
        let t = target(&[0, 1], &[0.5, 0.5]);
        assert!(detection_loss(0.7f64, 0.7, &t, 8).is_err());
        assert!(detection_loss(0.5f64, 0.5, &t, 1).is_err());
    }

    #[test]
    fn uniform_gated_gives_ln_k() {
        let t = target(&[3, 6], &[0.2, 0.8]);
        let l = attribution_loss(&[1.25f64; 8], &t).unwrap();
        assert!((l - 8f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn attribution_reduces_to_cross_entropy() {
        let g = [0.3f64, -1.2, 2.0];
        let t = target(&[2, 1], &[1.0, 0.0]);
        let lse = g.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!((attribution_loss(&g, &t).unwrap() - (lse - 2.0)).abs() < 1e-14);
        let confident = [0.0f64, 0.0, 200.0];
        assert!(attribution_loss(&confident, &t).unwrap() < 1e-12);
        assert!(attribution_loss(&g, &target(&[3, 1], &[1.0, 0.0])).is_err());
    }
}
