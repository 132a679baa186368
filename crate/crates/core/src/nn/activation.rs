use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// `x * sigmoid(x)`; smooth, so finite-difference checks see no kinks.
    Silu,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl Activation {
    pub fn forward<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Relu => x.map(|v| v.max(T::zero())),
            Activation::Silu => x.map(|v| v * sigmoid(v)),
        }
    }

    pub fn backward<T: Scalar>(self, x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
        let mut gx = gy.clone();
        for (g, &v) in gx.data_mut().iter_mut().zip(x.data()) {
            *g *= match self {
                Activation::Relu => {
                    if v > T::zero() {
                        T::one()
                    } else {
                        T::zero()
                    }
                }
                Activation::Silu => {
                    let s = sigmoid(v);
                    s * (T::one() + v * (T::one() - s))
                }
            };
        }
        gx
    }
}
