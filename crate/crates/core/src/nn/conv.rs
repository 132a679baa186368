use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 2-D convolution over `[C, H, W]` maps with square kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    /// He-normal initialised weights, zero bias.
    pub fn new<R: Rng>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
        let n = out_ch * in_ch * kernel * kernel;
        let w = (0..n).map(|_| T::of(normal.sample(rng))).collect();
        Self {
            weight: Tensor::from_vec(&[out_ch, in_ch, kernel, kernel], w).expect("sized"),
            bias: Tensor::zeros(&[out_ch]),
            stride,
            pad,
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.weight.shape();
        (s[0], s[1], s[2])
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 3]> {
        let (oc, ic, k) = self.dims();
        if input.len() != 3 || input[0] != ic {
            return Err(Error::Shape(format!(
                "conv expects [{ic}, H, W], got {input:?}"
            )));
        }
        let (h, w) = (input[1] + 2 * self.pad, input[2] + 2 * self.pad);
        if h < k || w < k {
            return Err(Error::Shape(format!("input {input:?} smaller than kernel {k}")));
        }
        Ok([oc, (h - k) / self.stride + 1, (w - k) / self.stride + 1])
    }

    /// Range of output columns whose tap `kx` lands inside `0..width`.
    fn valid_range(&self, kx: usize, width: usize, out_w: usize) -> (usize, usize) {
        let s = self.stride;
        // ix = ox*s + kx - pad in [0, width)
        let lo = if kx >= self.pad {
            0
        } else {
            (self.pad - kx).div_ceil(s)
        };
        let hi = if width + self.pad > kx {
            ((width + self.pad - kx - 1) / s + 1).min(out_w)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [oc, oh, ow] = self.output_shape(x.shape())?;
        let (_, ic, k) = self.dims();
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let xd = x.data();
        let wd = self.weight.data();
        let mut out = Tensor::zeros(&[oc, oh, ow]);
        let od = out.data_mut();
        let s = self.stride;
        for o in 0..oc {
            let plane = &mut od[o * oh * ow..(o + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = self.bias.data()[o]);
            for c in 0..ic {
                let xin = &xd[c * h * w..(c + 1) * h * w];
                for ky in 0..k {
                    let (oy_lo, oy_hi) = self.valid_range(ky, h, oh);
                    for kx in 0..k {
                        let wv = wd[((o * ic + c) * k + ky) * k + kx];
                        let (ox_lo, ox_hi) = self.valid_range(kx, w, ow);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - self.pad;
                            let row = &xin[iy * w..(iy + 1) * w];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                let off = kx as isize - self.pad as isize;
                                let src = &row[(ox_lo as isize + off) as usize
                                    ..(ox_hi as isize + off) as usize];
                                for (ov, &xv) in orow[ox_lo..ox_hi].iter_mut().zip(src) {
                                    *ov += wv * xv;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    orow[ox] += wv * row[ox * s + kx - self.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Accumulates weight/bias gradients into `grads` and returns the input gradient.
    pub fn backward(&self, x: &Tensor<T>, gy: &Tensor<T>, grads: &mut [Tensor<T>]) -> Tensor<T> {
        let (oc, ic, k) = self.dims();
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let (oh, ow) = (gy.shape()[1], gy.shape()[2]);
        let s = self.stride;
        let xd = x.data();
        let gd = gy.data();
        let wd = self.weight.data();
        let mut gx = Tensor::zeros(x.shape());
        let (gw_slot, gb_slot) = grads.split_at_mut(1);
        let gw = gw_slot[0].data_mut();
        let gb = gb_slot[0].data_mut();
        let gxd = gx.data_mut();
        for o in 0..oc {
            let gplane = &gd[o * oh * ow..(o + 1) * oh * ow];
            gb[o] += gplane.iter().copied().sum();
            for c in 0..ic {
                let xin = &xd[c * h * w..(c + 1) * h * w];
                let gxin = &mut gxd[c * h * w..(c + 1) * h * w];
                for ky in 0..k {
                    let (oy_lo, oy_hi) = self.valid_range(ky, h, oh);
                    for kx in 0..k {
                        let widx = ((o * ic + c) * k + ky) * k + kx;
                        let wv = wd[widx];
                        let (ox_lo, ox_hi) = self.valid_range(kx, w, ow);
                        let mut acc = T::zero();
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - self.pad;
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                let off = kx as isize - self.pad as isize;
                                let a = (ox_lo as isize + off) as usize;
                                let b = (ox_hi as isize + off) as usize;
                                let row = &xin[iy * w + a..iy * w + b];
                                let grow = &grow[ox_lo..ox_hi];
                                for (&g, &xv) in grow.iter().zip(row) {
                                    acc += g * xv;
                                }
                                let gxrow = &mut gxin[iy * w + a..iy * w + b];
                                for (gxv, &g) in gxrow.iter_mut().zip(grow) {
                                    *gxv += wv * g;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = ox * s + kx - self.pad;
                                    acc += grow[ox] * xin[iy * w + ix];
                                    gxin[iy * w + ix] += wv * grow[ox];
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
        gx
    }
}
