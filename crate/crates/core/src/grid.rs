//! Plain 2-D grids: intensity images and binary masks.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major `height × width` grid of intensities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// Row-major `height × width` binary grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!("{} values for a {height}×{width} image", data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.width + c] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same(other.dims())?;
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn check_same(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.dims(), dims)));
        }
        Ok(())
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Affine rescale to `[0, 1]`; a constant image maps to zeros.
    pub fn min_max_normalized(&self) -> Self {
        let (lo, hi) = self.min_max();
        if !(hi > lo) {
            return Self::zeros(self.height, self.width);
        }
        self.map(|v| (v - lo) / (hi - lo))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.width, self.height, |r, c| self.get(c, r))
    }

    /// Bilinear sample at fractional `(row, col)`; points outside the grid read as zero.
    pub fn sample_bilinear(&self, row: f64, col: f64) -> f64 {
        let r0 = row.floor();
        let c0 = col.floor();
        let (fr, fc) = (row - r0, col - c0);
        let at = |r: f64, c: f64| -> f64 {
            if r < 0.0 || c < 0.0 || r >= self.height as f64 || c >= self.width as f64 {
                0.0
            } else {
                self.get(r as usize, c as usize)
            }
        };
        let top = at(r0, c0) * (1.0 - fc) + if fc > 0.0 { at(r0, c0 + 1.0) * fc } else { 0.0 };
        if fr == 0.0 {
            return top;
        }
        let bottom = at(r0 + 1.0, c0) * (1.0 - fc) + if fc > 0.0 { at(r0 + 1.0, c0 + 1.0) * fc } else { 0.0 };
        top * (1.0 - fr) + bottom * fr
    }

    /// Bilinear resize with half-pixel centre alignment and edge clamping.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        if (height, width) == self.dims() {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let clamp_at = |r: isize, c: isize| {
            let r = r.clamp(0, self.height as isize - 1) as usize;
            let c = c.clamp(0, self.width as isize - 1) as usize;
            self.get(r, c)
        };
        Self::from_fn(height, width, |r, c| {
            let y = ((r as f64 + 0.5) * sy - 0.5).max(0.0);
            let x = ((c as f64 + 0.5) * sx - 0.5).max(0.0);
            let (y0, x0) = (y.floor() as isize, x.floor() as isize);
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            let top = clamp_at(y0, x0) * (1.0 - fx) + clamp_at(y0, x0 + 1) * fx;
            let bot = clamp_at(y0 + 1, x0) * (1.0 - fx) + clamp_at(y0 + 1, x0 + 1) * fx;
            top * (1.0 - fy) + bot * fy
        })
    }

    /// Pixels strictly above `threshold`.
    pub fn threshold(&self, threshold: f64) -> Mask {
        Mask { height: self.height, width: self.width, data: self.data.iter().map(|&v| v > threshold).collect() }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!("{} values for a {height}×{width} mask", data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![true; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.width + c] = v;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn check_same(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.dims(), dims)));
        }
        Ok(())
    }

    pub fn and(&self, other: &Mask) -> Mask {
        assert_eq!(self.dims(), other.dims());
        Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect(),
        }
    }

    pub fn not(&self) -> Mask {
        Mask { height: self.height, width: self.width, data: self.data.iter().map(|&b| !b).collect() }
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn to_image(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        Self::from_fn(height, width, |r, c| {
            let rr = (((r as f64 + 0.5) * sy) as usize).min(self.height - 1);
            let cc = (((c as f64 + 0.5) * sx) as usize).min(self.width - 1);
            self.get(rr, cc)
        })
    }
}
