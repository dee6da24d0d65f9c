//! Depth maps and RGB buffers shared by every stage of the pipeline.

use crate::error::{Error, Result};
use crate::substrate::Tensor;

/// 2-D positive depth field in meters with a per-pixel validity mask.
///
/// Invalid pixels keep a value of 0.0 in memory and round-trip through disk
/// as a NaN sentinel (see `dataio`).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != height * width || valid.len() != height * width {
            return Err(Error::shape(format!(
                "depth map {height}x{width} needs {} values, got {} / {} mask",
                height * width,
                values.len(),
                valid.len()
            )));
        }
        Ok(DepthMap {
            height,
            width,
            values,
            valid,
        })
    }

    pub fn dense(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        let valid = vec![true; height * width];
        DepthMap::new(height, width, values, valid)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        DepthMap {
            height,
            width,
            values: vec![value; height * width],
            valid: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_mut(&mut self) -> &mut [bool] {
        &mut self.valid
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Mean over valid pixels.
    pub fn mean_valid(&self) -> Result<f32> {
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for (v, &m) in self.values.iter().zip(&self.valid) {
            if m {
                sum += *v as f64;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Degenerate("depth map has no valid pixels".into()));
        }
        Ok((sum / n as f64) as f32)
    }

    /// As a `[1, 1, H, W]` tensor. Invalid pixels carry their stored value
    /// (0.0 by convention); consumers must apply the mask.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![1, 1, self.height, self.width], self.values.clone())
            .expect("depth map shape")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if n != 1 || c != 1 {
            return Err(Error::shape(format!(
                "depth map tensor must be 1x1xHxW, got {:?}",
                t.shape()
            )));
        }
        DepthMap::dense(h, w, t.data().to_vec())
    }

    /// Integer-window crop.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<DepthMap> {
        if top + h > self.height || left + w > self.width {
            return Err(Error::shape(format!(
                "crop {top},{left} {h}x{w} outside {}x{}",
                self.height, self.width
            )));
        }
        let mut values = Vec::with_capacity(h * w);
        let mut valid = Vec::with_capacity(h * w);
        for y in 0..h {
            let base = (top + y) * self.width + left;
            values.extend_from_slice(&self.values[base..base + w]);
            valid.extend_from_slice(&self.valid[base..base + w]);
        }
        DepthMap::new(h, w, values, valid)
    }
}

/// Interleaved RGB float image, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    /// Row-major, 3 floats per pixel.
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "rgb image {height}x{width} needs {} floats, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(RgbImage {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        RgbImage {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let base = (y * self.width + x) * 3;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let base = (y * self.width + x) * 3;
        self.data[base..base + 3].copy_from_slice(&rgb);
    }

    /// As a `[1, 3, H, W]` planar tensor for model input.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let plane = self.height * self.width;
        let mut data = vec![0.0f32; 3 * plane];
        for p in 0..plane {
            for ch in 0..3 {
                data[ch * plane + p] = self.data[p * 3 + ch];
            }
        }
        Tensor::new(vec![1, 3, self.height, self.width], data).expect("rgb shape")
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<RgbImage> {
        if top + h > self.height || left + w > self.width {
            return Err(Error::shape(format!(
                "crop {top},{left} {h}x{w} outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            let base = ((top + y) * self.width + left) * 3;
            data.extend_from_slice(&self.data[base..base + w * 3]);
        }
        RgbImage::new(h, w, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_matches_direct_indexing() {
        let mut values = Vec::new();
        for y in 0..4 {
            for x in 0..6 {
                values.push((y * 10 + x) as f32);
            }
        }
        let dm = DepthMap::dense(4, 6, values).unwrap();
        let c = dm.crop(1, 2, 2, 3).unwrap();
        assert_eq!(c.values(), &[12.0, 13.0, 14.0, 22.0, 23.0, 24.0]);
    }

    #[test]
    fn tensor_roundtrip() {
        let dm = DepthMap::dense(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = dm.to_tensor();
        let back = DepthMap::from_tensor(&t).unwrap();
        assert_eq!(dm, back);
    }

    #[test]
    fn rgb_planar_layout() {
        let mut img = RgbImage::zeros(1, 2);
        img.set_pixel(0, 0, [0.1, 0.2, 0.3]);
        img.set_pixel(0, 1, [0.4, 0.5, 0.6]);
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[1, 3, 1, 2]);
        assert_eq!(t.data(), &[0.1, 0.4, 0.2, 0.5, 0.3, 0.6]);
    }
}
