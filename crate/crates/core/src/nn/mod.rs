//! Minimal feed-forward network with hand-written reverse-mode gradients.
//!
//! A [`Network`] is a flat list of [`Layer`]s. Forward passes return the full
//! activation trace so that backward passes, partial passes between seams and
//! GradCAM can all reuse it.

mod activation;
mod backbone;
mod conv;
mod linear;
mod pool;
mod residual;

pub use activation::Activation;
pub use backbone::{BackboneSpec, InsertionPoint};
pub use conv::Conv2d;
pub use linear::Linear;
pub use pool::{global_avg_pool, Pool, PoolKind};
pub use residual::{ChannelAffine, Residual};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Linear(Linear<T>),
    Act(Activation),
    Pool(Pool),
    GlobalAvgPool,
    Affine(ChannelAffine<T>),
    Residual(Box<Residual<T>>),
    /// Fixed `(x - mean) / std`; no parameters.
    Standardize { mean: f64, std: f64 },
}

impl<T: Scalar> Layer<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(c) => c.forward(x),
            Layer::Linear(l) => l.forward(x),
            Layer::Act(a) => Ok(a.forward(x)),
            Layer::Pool(p) => p.forward(x),
            Layer::GlobalAvgPool => global_avg_pool(x),
            Layer::Affine(a) => a.forward(x),
            Layer::Residual(r) => r.forward(x),
            Layer::Standardize { mean, std } => {
                let (m, inv) = (T::of(*mean), T::of(1.0 / std));
                Ok(x.map(|v| (v - m) * inv))
            }
        }
    }

    /// `grads` is this layer's slice of the parameter-gradient list.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        _y: &Tensor<T>,
        gy: &Tensor<T>,
        grads: &mut [Tensor<T>],
    ) -> Tensor<T> {
        match self {
            Layer::Conv(c) => c.backward(x, gy, grads),
            Layer::Linear(l) => l.backward(x, gy, grads),
            Layer::Act(a) => a.backward(x, gy),
            Layer::Pool(p) => p.backward(x, gy),
            Layer::GlobalAvgPool => pool::global_avg_pool_backward(x, gy),
            Layer::Affine(a) => a.backward(x, gy, grads),
            Layer::Residual(r) => r.backward(x, gy, grads),
            Layer::Standardize { std, .. } => {
                let inv = T::of(1.0 / std);
                gy.map(|g| g * inv)
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(_) | Layer::Linear(_) | Layer::Affine(_) => 2,
            Layer::Residual(r) => r.param_count(),
            _ => 0,
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv(c) => vec![&c.weight, &c.bias],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            Layer::Affine(a) => vec![&a.scale, &a.shift],
            Layer::Residual(r) => r.main.iter().chain(&r.shortcut).flat_map(Layer::params).collect(),
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Affine(a) => vec![&mut a.scale, &mut a.shift],
            Layer::Residual(r) => {
                let Residual { main, shortcut } = &mut **r;
                main.iter_mut()
                    .chain(shortcut.iter_mut())
                    .flat_map(Layer::params_mut)
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    /// True when the layer leaves `[C, H, W]` maps spatial.
    fn keeps_spatial(&self) -> bool {
        !matches!(self, Layer::GlobalAvgPool | Layer::Linear(_))
    }
}

/// Ordered stack of layers mapping a `[3, S, S]` image to the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
    offsets: Vec<usize>,
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        let offsets = residual::param_offsets(&layers);
        Self { layers, offsets }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Activation trace over `layers[from..to]`; `trace[0]` is `x`.
    pub fn forward_range(&self, x: &Tensor<T>, from: usize, to: usize) -> Result<Vec<Tensor<T>>> {
        let mut trace = Vec::with_capacity(to - from + 1);
        trace.push(x.clone());
        for layer in &self.layers[from..to] {
            let y = layer.forward(trace.last().expect("nonempty"))?;
            trace.push(y);
        }
        Ok(trace)
    }

    /// Backpropagates `g` (gradient at the output of `layers[to - 1]`) down to
    /// the input of `layers[from]`, accumulating into the network-wide `grads`.
    pub fn backward_range(
        &self,
        trace: &[Tensor<T>],
        from: usize,
        to: usize,
        mut g: Tensor<T>,
        grads: &mut [Tensor<T>],
    ) -> Tensor<T> {
        debug_assert_eq!(trace.len(), to - from + 1);
        for i in (from..to).rev() {
            let slot = &mut grads[self.offsets[i]..self.offsets[i + 1]];
            g = self.layers[i].backward(&trace[i - from], &trace[i - from + 1], &g, slot);
        }
        g
    }

    pub fn param_count(&self) -> usize {
        *self.offsets.last().expect("offsets nonempty")
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn zero_grads(&self) -> Vec<Tensor<T>> {
        self.params().into_iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    /// Index one past the last layer whose output is still a spatial map.
    pub fn last_spatial_boundary(&self) -> Option<usize> {
        let gap = self.layers.iter().position(|l| !l.keeps_spatial())?;
        let has_features = self.layers[..gap]
            .iter()
            .any(|l| matches!(l, Layer::Conv(_) | Layer::Residual(_)));
        has_features.then_some(gap)
    }

    pub fn check_seam(&self, seam: usize) -> Result<()> {
        if seam > self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "seam {seam} beyond network depth {}",
                self.layers.len()
            )));
        }
        Ok(())
    }
}
