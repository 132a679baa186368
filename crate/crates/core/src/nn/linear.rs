use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{dot, Tensor};

/// Fully connected layer `y = W x + b`, `W` stored `[out, in]`. Any input shape is flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("valid std");
        let w = (0..inputs * outputs)
            .map(|_| T::of(normal.sample(rng)))
            .collect();
        Self {
            weight: Tensor::from_vec(&[outputs, inputs], w).expect("sized"),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.inputs();
        if x.len() != n {
            return Err(Error::Shape(format!(
                "linear expects {n} inputs, got {:?}",
                x.shape()
            )));
        }
        let out = self
            .weight
            .data()
            .chunks_exact(n)
            .zip(self.bias.data())
            .map(|(row, &b)| dot(row, x.data()) + b)
            .collect();
        Ok(Tensor::vector(out))
    }

    pub fn backward(&self, x: &Tensor<T>, gy: &Tensor<T>, grads: &mut [Tensor<T>]) -> Tensor<T> {
        let n = self.inputs();
        let (gw_slot, gb_slot) = grads.split_at_mut(1);
        let gw = gw_slot[0].data_mut();
        let gb = gb_slot[0].data_mut();
        let mut gx = vec![T::zero(); n];
        for (o, &g) in gy.data().iter().enumerate() {
            gb[o] += g;
            if g == T::zero() {
                continue;
            }
            let row = &self.weight.data()[o * n..(o + 1) * n];
            let grow = &mut gw[o * n..(o + 1) * n];
            for ((gwv, &xv), (gxv, &wv)) in grow
                .iter_mut()
                .zip(x.data())
                .zip(gx.iter_mut().zip(row))
            {
                *gwv += g * xv;
                *gxv += g * wv;
            }
        }
        Tensor::from_vec(x.shape(), gx).expect("input shape")
    }
}
