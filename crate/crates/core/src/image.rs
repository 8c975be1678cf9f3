//! Single-channel real-valued images.
//!
//! Clean images nominally live in `[0, 1]`; speckled images may exceed 1.
//! Quantization to 8 bits only happens on export (see [`crate::io`]).

use crate::error::{Error, Result};

/// A row-major grid of non-negative, finite intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, checking the length, finiteness and sign invariants.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidImage(format!(
                "element {i} is {v}; intensities must be finite and non-negative"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Internal constructor for buffers the caller already knows are valid.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        debug_assert!(data.iter().all(|v| v.is_finite() && *v >= 0.0));
        Self {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Evaluates `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub(crate) fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(self.dims(), other.dims()));
        }
        Ok(())
    }

    /// The values an 8-bit export followed by a reload would produce.
    pub fn quantized(&self) -> Image {
        let data = self
            .data
            .iter()
            .map(|&v| f64::from(crate::io::quantize(v)) / 255.0)
            .collect();
        Image::from_raw(self.width, self.height, data)
    }

    /// Copies out the `w`×`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidParameter(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let start = y * self.width + x0;
            data.extend_from_slice(&self.data[start..start + w]);
        }
        Ok(Image::from_raw(w, h, data))
    }

    /// Applies `f` elementwise; the result is re-validated.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Image> {
        Image::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Every fully contained `patch`×`patch` window at the given stride, in
/// row-major scan order of the top-left corner.
pub fn extract_patches(img: &Image, patch: usize, stride: usize) -> Result<Vec<Image>> {
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    if patch == 0 || patch > img.width.min(img.height) {
        return Err(Error::PatchTooLarge {
            patch,
            width: img.width,
            height: img.height,
        });
    }
    let nx = (img.width - patch) / stride + 1;
    let ny = (img.height - patch) / stride + 1;
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            out.push(img.crop(i * stride, j * stride, patch, patch)?);
        }
    }
    Ok(out)
}
