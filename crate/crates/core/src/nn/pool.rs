use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Avg,
    Max,
}

/// Spatial pooling over `[C, H, W]`. Padding cells count as zero (avg) or are skipped (max).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool {
    pub kind: PoolKind,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Pool {
    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 3]> {
        if input.len() != 3 {
            return Err(Error::Shape(format!("pool expects [C, H, W], got {input:?}")));
        }
        let (h, w) = (input[1] + 2 * self.pad, input[2] + 2 * self.pad);
        if h < self.kernel || w < self.kernel {
            return Err(Error::Shape(format!(
                "input {input:?} smaller than pool kernel {}",
                self.kernel
            )));
        }
        Ok([
            input[0],
            (h - self.kernel) / self.stride + 1,
            (w - self.kernel) / self.stride + 1,
        ])
    }

    /// Input cells covered by output cell `(oy, ox)`.
    fn window(&self, oy: usize, ox: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        (0..k).flat_map(move |ky| (0..k).map(move |kx| (ky, kx))).filter_map(move |(ky, kx)| {
            let iy = (oy * s + ky).checked_sub(p)?;
            let ix = (ox * s + kx).checked_sub(p)?;
            (iy < h && ix < w).then_some((iy, ix))
        })
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [c, oh, ow] = self.output_shape(x.shape())?;
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let area = T::of((self.kernel * self.kernel) as f64);
        let mut out = Tensor::zeros(&[c, oh, ow]);
        let xd = x.data();
        let od = out.data_mut();
        for ch in 0..c {
            let plane = &xd[ch * h * w..(ch + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let cells = self.window(oy, ox, h, w).map(|(iy, ix)| plane[iy * w + ix]);
                    od[(ch * oh + oy) * ow + ox] = match self.kind {
                        PoolKind::Avg => cells.sum::<T>() / area,
                        PoolKind::Max => cells.fold(T::neg_infinity(), T::max),
                    };
                }
            }
        }
        Ok(out)
    }

    pub fn backward<T: Scalar>(&self, x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (oh, ow) = (gy.shape()[1], gy.shape()[2]);
        let area = T::of((self.kernel * self.kernel) as f64);
        let mut gx = Tensor::zeros(x.shape());
        let xd = x.data();
        let gxd = gx.data_mut();
        for ch in 0..c {
            let base = ch * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = gy.data()[(ch * oh + oy) * ow + ox];
                    match self.kind {
                        PoolKind::Avg => {
                            for (iy, ix) in self.window(oy, ox, h, w) {
                                gxd[base + iy * w + ix] += g / area;
                            }
                        }
                        PoolKind::Max => {
                            // first maximal cell takes the gradient
                            let mut best: Option<(usize, T)> = None;
                            for (iy, ix) in self.window(oy, ox, h, w) {
                                let v = xd[base + iy * w + ix];
                                if best.is_none_or(|(_, b)| v > b) {
                                    best = Some((iy * w + ix, v));
                                }
                            }
                            if let Some((idx, _)) = best {
                                gxd[base + idx] += g;
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if !x.is_spatial() {
        return Err(Error::Shape(format!(
            "global pooling expects [C, H, W], got {:?}",
            x.shape()
        )));
    }
    let hw = x.shape()[1] * x.shape()[2];
    let n = T::of(hw as f64);
    Ok(Tensor::vector(
        x.data()
            .chunks_exact(hw)
            .map(|p| p.iter().copied().sum::<T>() / n)
            .collect(),
    ))
}

pub fn global_avg_pool_backward<T: Scalar>(x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let hw = x.shape()[1] * x.shape()[2];
    let n = T::of(hw as f64);
    let mut gx = Tensor::zeros(x.shape());
    for (plane, &g) in gx.data_mut().chunks_exact_mut(hw).zip(gy.data()) {
        plane.iter_mut().for_each(|v| *v = g / n);
    }
    gx
}
