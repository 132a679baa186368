//! RGB images in `[0, 1]`, stored channels-last, and the resampling helpers the pipeline needs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    /// `height * width * 3`, row-major, RGB interleaved.
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{width}x{height} RGB image needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pixel data".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height * 3],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(x, y, c));
                }
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    /// Clamped read; coordinates outside the image repeat the border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, c: usize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y, c)
    }

    pub fn clip(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear sample at continuous pixel-centre coordinates, border-clamped.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(x0, y0, c);
        let b = self.get_clamped(x0 + 1, y0, c);
        let d = self.get_clamped(x0, y0 + 1, c);
        let e = self.get_clamped(x0 + 1, y0 + 1, c);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (d * (1.0 - fx) + e * fx) * fy
    }

    /// Bilinear resize with half-pixel centres; same size returns a copy.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Image::from_fn(width, height, |x, y, c| {
            self.sample_bilinear((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5, c)
        })
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Image> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Shape(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        Ok(Image::from_fn(width, height, |x, y, c| self.get(x0 + x, y0 + y, c)))
    }

    pub fn center_crop(&self, size: usize) -> Result<Image> {
        if size > self.width || size > self.height {
            return Err(Error::Shape(format!(
                "center crop {size} larger than {}x{}",
                self.width, self.height
            )));
        }
        self.crop((self.width - size) / 2, (self.height - size) / 2, size, size)
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.width, self.height, |x, y, c| self.get(self.width - 1 - x, y, c))
    }

    /// Convex combination of same-sized images.
    pub fn blend(images: &[&Image], weights: &[f64]) -> Result<Image> {
        let first = images.first().ok_or_else(|| Error::Empty("no images to blend".into()))?;
        if images.len() != weights.len() {
            return Err(Error::Shape("image/weight count mismatch".into()));
        }
        let mut out = Image::filled(first.width, first.height, 0.0);
        for (img, &w) in images.iter().zip(weights) {
            if img.width != first.width || img.height != first.height {
                return Err(Error::Shape("blended images differ in size".into()));
            }
            for (o, v) in out.data.iter_mut().zip(&img.data) {
                *o += w * v;
            }
        }
        Ok(out)
    }

    /// `[3, H, W]` tensor in the model's scalar type.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (w, h) = (self.width, self.height);
        let mut out = vec![T::zero(); 3 * w * h];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * w * h + i] = T::of(px[c]);
            }
        }
        Tensor::from_vec(&[3, h, w], out).expect("sized")
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Image> {
        let s = t.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::Shape(format!("expected [3, H, W], got {s:?}")));
        }
        let (h, w) = (s[1], s[2]);
        let d = t.data();
        Image::new(w, h, (0..w * h).flat_map(|i| (0..3).map(move |c| d[c * w * h + i].as_f64())).collect())
    }

    pub fn to_rgb8(&self) -> ::image::RgbImage {
        let bytes = self.data.iter().map(|&v| quantize(v)).collect();
        ::image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("sized buffer")
    }

    pub fn from_rgb8(img: &::image::RgbImage) -> Image {
        Image {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }

    /// 8-bit quantised copy; what a PNG round trip yields.
    pub fn quantized(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| quantize(v) as f64 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save_with_format(path, ::image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Image> {
        let img = ::image::open(path)?.to_rgb8();
        Ok(Image::from_rgb8(&img))
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`; infinite for identical inputs.
pub fn psnr(a: &Image, b: &Image) -> f64 {
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Single-channel map in `[0, 1]` saved as an 8-bit grayscale PNG.
pub fn save_gray_png(values: &[f64], width: usize, height: usize, path: &Path) -> Result<()> {
    let bytes = values.iter().map(|&v| quantize(v)).collect();
    let img = ::image::GrayImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| Error::Shape("heatmap size mismatch".into()))?;
    img.save_with_format(path, ::image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y, c| ((x * 7 + y * 3 + c * 11) % 17) as f64 / 16.0)
    }

    #[test]
    fn tensor_round_trip_is_exact() {
        let img = ramp(5, 4);
        let t = img.to_tensor::<f64>();
        assert_eq!(t.shape(), &[3, 4, 5]);
        assert_eq!(Image::from_tensor(&t).unwrap(), img);
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let img = ramp(6, 6);
        assert_eq!(img.resize(6, 6), img);
        let big = img.resize(12, 9);
        assert_eq!((big.width(), big.height()), (12, 9));
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = ramp(7, 3);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_horizontal().get(0, 1, 2), img.get(6, 1, 2));
    }

    #[test]
    fn crop_bounds() {
        let img = ramp(8, 8);
        assert!(img.crop(2, 2, 7, 7).is_err());
        let c = img.center_crop(4).unwrap();
        assert_eq!(c.get(0, 0, 0), img.get(2, 2, 0));
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let img = ramp(4, 4);
        assert!(psnr(&img, &img).is_infinite());
    }
}
