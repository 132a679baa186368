//! Mixing weights and the parameterless representation-mixing layer.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default concentration of the symmetric Beta/Dirichlet prior.
pub const DEFAULT_BETA: f64 = 0.4;

/// Mixing coefficients for one group of samples plus the concentration they were drawn with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub beta: f64,
    pub weights: Vec<f64>,
}

impl MixSpec {
    pub fn new(beta: f64, weights: Vec<f64>) -> Result<Self> {
        let spec = Self { beta, weights };
        spec.validate()?;
        Ok(spec)
    }

    /// Two-sample mix `(alpha, 1 - alpha)`.
    pub fn pair(alpha: f64) -> Result<Self> {
        Self::new(DEFAULT_BETA, vec![alpha, 1.0 - alpha])
    }

    /// Weights `(1, 0, ..., 0)`: the first sample passes through untouched.
    pub fn identity(n: usize) -> Self {
        let mut weights = vec![0.0; n.max(1)];
        weights[0] = 1.0;
        Self {
            beta: DEFAULT_BETA,
            weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if self.weights.is_empty() {
            return Err(Error::InvalidArgument("no mixing weights".into()));
        }
        if let Some(w) = self.weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::InvalidArgument(format!("mixing weight {w} outside [0, 1]")));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("mixing weights sum to {sum}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Draws `n` weights from the symmetric Dirichlet(beta, ..., beta); for
/// `n == 2` this is `alpha ~ Beta(beta, beta)` with weights `(alpha, 1 - alpha)`.
pub fn sample_mix_weights<R: Rng + ?Sized>(beta: f64, n: usize, rng: &mut R) -> Result<MixSpec> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples to mix, got {n}")));
    }
    let weights = if n == 2 {
        let alpha = Beta::new(beta, beta)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .sample(rng);
        vec![alpha, 1.0 - alpha]
    } else {
        let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        loop {
            let g: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
            let total: f64 = g.iter().sum();
            // all draws can underflow for tiny beta; redraw
            if total > 0.0 && total.is_finite() {
                let mut w: Vec<f64> = g.iter().map(|x| x / total).collect();
                // put the rounding residue on the last weight so the sum is 1
                let head: f64 = w[..n - 1].iter().sum();
                w[n - 1] = (1.0 - head).max(0.0);
                break w;
            }
        }
    };
    Ok(MixSpec { beta, weights })
}

/// Convex combination `sum_k w_k * features[k]`. Zero-weight terms are skipped,
/// so weights `(1, 0, ...)` return `features[0]` bit for bit.
pub fn repmix<T: Scalar>(features: &[Tensor<T>], mix: &MixSpec) -> Result<Tensor<T>> {
    if features.len() != mix.weights.len() {
        return Err(Error::Shape(format!(
            "{} feature maps but {} weights",
            features.len(),
            mix.weights.len()
        )));
    }
    let shape = features
        .first()
        .ok_or_else(|| Error::Empty("no feature maps to mix".into()))?
        .shape();
    if let Some(f) = features.iter().find(|f| f.shape() != shape) {
        return Err(Error::Shape(format!(
            "cannot mix {:?} with {:?}",
            shape,
            f.shape()
        )));
    }
    let mut out: Option<Tensor<T>> = None;
    for (f, &w) in features.iter().zip(&mix.weights) {
        if w == 0.0 {
            continue;
        }
        let w = T::of(w);
        match out.as_mut() {
            None => out = Some(if w == T::one() { f.clone() } else { f.map(|v| v * w) }),
            Some(acc) => acc.axpy(w, f),
        }
    }
    Ok(out.unwrap_or_else(|| Tensor::zeros(shape)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_bad_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_mix_weights(0.0, 2, &mut rng).is_err());
        assert!(sample_mix_weights(-1.0, 2, &mut rng).is_err());
        assert!(sample_mix_weights(0.4, 1, &mut rng).is_err());
    }

    #[test]
    fn paper_beta_pair_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = sample_mix_weights(0.4, 2, &mut rng).unwrap();
        assert_eq!(m.len(), 2);
        assert!(m.weights.iter().all(|w| (0.0..=1.0).contains(w)));
        assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let again = sample_mix_weights(0.4, 2, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn dirichlet_four_samples_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let m = sample_mix_weights(0.4, 4, &mut rng).unwrap();
            assert_eq!(m.len(), 4);
            m.validate().unwrap();
        }
    }

    #[test]
    fn beta_mean_is_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for beta in [0.4, 1.0, 3.0] {
            let n = 100_000;
            let mean = (0..n)
                .map(|_| sample_mix_weights(beta, 2, &mut rng).unwrap().weights[0])
                .sum::<f64>()
                / n as f64;
            assert!((mean - 0.5).abs() < 0.01, "beta {beta}: mean {mean}");
        }
    }

    #[test]
    fn worked_pair_example() {
        let a = Tensor::vector(vec![2.0, 0.0]);
        let b = Tensor::vector(vec![0.0, 4.0]);
        let u = repmix(&[a, b], &MixSpec::pair(0.25).unwrap()).unwrap();
        assert_eq!(u.data(), &[0.5, 3.0]);
    }

    #[test]
    fn mismatches_are_errors() {
        let a = Tensor::<f64>::vector(vec![1.0, 2.0]);
        let b = Tensor::<f64>::vector(vec![1.0]);
        assert!(matches!(
            repmix(&[a.clone(), b], &MixSpec::pair(0.5).unwrap()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            repmix(&[a], &MixSpec::pair(0.5).unwrap()),
            Err(Error::Shape(_))
        ));
    }
}
