//! Shadow masks and the (shadow, shadow-free, mask) triplet.

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-pixel shadow membership in `[0, 1]`; `1` marks a shadow pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowMask {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ShadowMask {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(format!(
                "{} mask values for a {width}x{height} mask",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("mask value {v} outside [0, 1]")));
        }
        Ok(ShadowMask { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!((0.0..=1.0).contains(&value));
        ShadowMask {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(if f(x, y) { 1.0 } else { 0.0 });
            }
        }
        ShadowMask { width, height, values }
    }

    /// Binarize a grayscale image: `>= threshold` is shadow.
    pub fn from_gray(img: &GrayImage, threshold: u8) -> Self {
        ShadowMask {
            width: img.width() as usize,
            height: img.height() as usize,
            values: img
                .pixels()
                .map(|p| if p.0[0] >= threshold { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// `{0, 255}` grayscale rendering (values `>= 0.5` map to 255).
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.get(x as usize, y as usize);
            image::Luma([if v >= 0.5 { 255 } else { 0 }])
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
    #[inline]
    pub fn is_shadow(&self, x: usize, y: usize) -> bool {
        self.get(x, y) >= 0.5
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn ensure_binary(&self) -> Result<()> {
        match self.values.iter().find(|&&v| v != 0.0 && v != 1.0) {
            Some(v) => Err(Error::Validation(format!("mask is not binary (found {v})"))),
            None => Ok(()),
        }
    }

    pub fn shadow_pixels(&self) -> usize {
        self.values.iter().filter(|&&v| v >= 0.5).count()
    }

    /// `[1, 1, H, W]` tensor view used by the network.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, 1, self.height, self.width], self.values.clone()).expect("mask dims are consistent")
    }

    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Self> {
        if t.channels() != 1 {
            return Err(Error::shape(format!(
                "mask tensor must have one channel, got {}",
                t.channels()
            )));
        }
        ShadowMask::new(t.width(), t.height(), t.sample(n).to_vec())
    }
}

/// One scene captured with and without cast shadows plus its binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowTriplet {
    pub shadow: RgbImage,
    pub shadow_free: RgbImage,
    pub mask: ShadowMask,
}

impl ShadowTriplet {
    pub fn new(shadow: RgbImage, shadow_free: RgbImage, mask: ShadowMask) -> Result<Self> {
        let t = ShadowTriplet {
            shadow,
            shadow_free,
            mask,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn width(&self) -> usize {
        self.shadow.width() as usize
    }

    pub fn height(&self) -> usize {
        self.shadow.height() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.shadow.dimensions();
        if self.shadow_free.dimensions() != dims {
            return Err(Error::shape(format!(
                "shadow image is {:?} but shadow-free image is {:?}",
                dims,
                self.shadow_free.dimensions()
            )));
        }
        if (self.mask.width() as u32, self.mask.height() as u32) != dims {
            return Err(Error::shape(format!(
                "shadow image is {:?} but mask is {}x{}",
                dims,
                self.mask.width(),
                self.mask.height()
            )));
        }
        self.mask.ensure_binary()
    }
}
