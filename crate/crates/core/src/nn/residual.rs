use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::Layer;

/// Per-channel scale and shift. Stands in for batch normalisation with
/// frozen statistics, since every sample is forwarded independently.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAffine<T> {
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
}

impl<T: Scalar> ChannelAffine<T> {
    pub fn new(channels: usize) -> Self {
        let mut scale = Tensor::zeros(&[channels]);
        scale.fill(T::one());
        Self {
            scale,
            shift: Tensor::zeros(&[channels]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.scale.len();
        if x.shape().first() != Some(&c) {
            return Err(Error::Shape(format!(
                "affine expects {c} channels, got {:?}",
                x.shape()
            )));
        }
        let plane = x.len() / c;
        let mut y = x.clone();
        for (ch, p) in y.data_mut().chunks_exact_mut(plane).enumerate() {
            let (a, b) = (self.scale.data()[ch], self.shift.data()[ch]);
            p.iter_mut().for_each(|v| *v = a * *v + b);
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor<T>, gy: &Tensor<T>, grads: &mut [Tensor<T>]) -> Tensor<T> {
        let c = self.scale.len();
        let plane = x.len() / c;
        let mut gx = gy.clone();
        for ch in 0..c {
            let xs = &x.data()[ch * plane..(ch + 1) * plane];
            let gs = &gy.data()[ch * plane..(ch + 1) * plane];
            let mut ga = T::zero();
            let mut gb = T::zero();
            for (&xv, &g) in xs.iter().zip(gs) {
                ga += g * xv;
                gb += g;
            }
            grads[0].data_mut()[ch] += ga;
            grads[1].data_mut()[ch] += gb;
            let a = self.scale.data()[ch];
            gx.data_mut()[ch * plane..(ch + 1) * plane]
                .iter_mut()
                .for_each(|v| *v *= a);
        }
        gx
    }
}

/// Residual block `relu(main(x) + shortcut(x))`; an empty shortcut is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual<T> {
    pub main: Vec<Layer<T>>,
    pub shortcut: Vec<Layer<T>>,
}

fn run<T: Scalar>(layers: &[Layer<T>], x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let mut trace = vec![x.clone()];
    for layer in layers {
        let y = layer.forward(trace.last().expect("nonempty"))?;
        trace.push(y);
    }
    Ok(trace)
}

fn back<T: Scalar>(
    layers: &[Layer<T>],
    trace: &[Tensor<T>],
    mut g: Tensor<T>,
    grads: &mut [Tensor<T>],
) -> Tensor<T> {
    let offsets = param_offsets(layers);
    for (i, layer) in layers.iter().enumerate().rev() {
        let slot = &mut grads[offsets[i]..offsets[i + 1]];
        g = layer.backward(&trace[i], &trace[i + 1], &g, slot);
    }
    g
}

pub(crate) fn param_offsets<T: Scalar>(layers: &[Layer<T>]) -> Vec<usize> {
    let mut offsets = vec![0];
    for layer in layers {
        offsets.push(offsets.last().unwrap() + layer.param_count());
    }
    offsets
}

impl<T: Scalar> Residual<T> {
    fn pre_activation(&self, x: &Tensor<T>) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>, Tensor<T>)> {
        let main = run(&self.main, x)?;
        let short = run(&self.shortcut, x)?;
        let a = main.last().expect("nonempty");
        let b = short.last().expect("nonempty");
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "residual branches disagree: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut sum = a.clone();
        sum.axpy(T::one(), b);
        Ok((main, short, sum))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, _, sum) = self.pre_activation(x)?;
        Ok(sum.map(|v| v.max(T::zero())))
    }

    /// Recomputes the branch activations from `x`.
    pub fn backward(&self, x: &Tensor<T>, gy: &Tensor<T>, grads: &mut [Tensor<T>]) -> Tensor<T> {
        let (main, short, sum) = self.pre_activation(x).expect("forward succeeded before");
        let mut gs = gy.clone();
        for (g, &s) in gs.data_mut().iter_mut().zip(sum.data()) {
            if s <= T::zero() {
                *g = T::zero();
            }
        }
        let split = self.main.iter().map(Layer::param_count).sum::<usize>();
        let (gm, gsh) = grads.split_at_mut(split);
        let mut gx = back(&self.main, &main, gs.clone(), gm);
        let gx_short = back(&self.shortcut, &short, gs, gsh);
        gx.axpy(T::one(), &gx_short);
        gx
    }

    pub fn param_count(&self) -> usize {
        self.main
            .iter()
            .chain(&self.shortcut)
            .map(Layer::param_count)
            .sum()
    }
}
