//! Pixel-level preprocessing: luma conversion, Gaussian smoothing and
//! adaptive inverse thresholding.
//!
//! Every operation is a pure function of its inputs. Borders are handled by
//! edge replication for both the smoothing convolution and the local mean
//! used as the threshold surface.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImagingError {
    #[error("invalid image dimensions {width}x{height} for {len} samples")]
    Dimensions { width: usize, height: usize, len: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Single-channel 8-bit raster, row-major, 0 = black, 255 = white.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(ImagingError::Dimensions {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image filled with a constant value.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, ImagingError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Photometric negative, used for white-on-black targets.
    pub fn inverted(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| 255 - v).collect(),
        }
    }
}

/// Binary raster whose samples are restricted to {0, 255}; 255 is foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryImage {
    /// Builds a binary image, rejecting any sample outside {0, 255}.
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(ImagingError::Dimensions {
                width,
                height,
                len: data.len(),
            });
        }
        if data.iter().any(|&v| v != 0 && v != 255) {
            return Err(ImagingError::Parameter(
                "binary image samples must be 0 or 255".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds a binary image from a foreground predicate per pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(if f(x, y) { 255 } else { 0 });
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn is_foreground(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub sigma: f64,
    pub kernel_radius: usize,
}

impl Default for GaussianParams {
    fn default() -> Self {
        Self {
            sigma: 1.5,
            kernel_radius: 3,
        }
    }
}

impl GaussianParams {
    pub fn validate(&self) -> Result<(), ImagingError> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(ImagingError::Parameter(format!(
                "gaussian sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if self.kernel_radius < 1 {
            return Err(ImagingError::Parameter("kernel_radius must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    /// Neighborhood side is `2 * block_radius + 1`.
    pub block_radius: usize,
    /// Offset subtracted from the local mean.
    pub c: f64,
    /// Standard deviation of the Gaussian weighting over the neighborhood.
    pub weight_sigma: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self {
            block_radius: 15,
            c: 7.0,
            weight_sigma: 7.5,
        }
    }
}

impl ThresholdParams {
    pub fn validate(&self) -> Result<(), ImagingError> {
        if self.block_radius < 1 {
            return Err(ImagingError::Parameter("block_radius must be >= 1".into()));
        }
        if !(self.weight_sigma > 0.0) || !self.weight_sigma.is_finite() {
            return Err(ImagingError::Parameter(format!(
                "weight_sigma must be > 0, got {}",
                self.weight_sigma
            )));
        }
        if !self.c.is_finite() {
            return Err(ImagingError::Parameter("threshold offset c must be finite".into()));
        }
        Ok(())
    }
}

/// Normalized square Gaussian weight grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2 {
    radius: usize,
    weights: Vec<f64>,
}

impl Kernel2 {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Weight at integer offset `(dx, dy)` from the center.
    pub fn weight(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        assert!(dx.abs() <= r && dy.abs() <= r, "offset outside kernel");
        let side = self.side() as isize;
        self.weights[((dy + r) * side + (dx + r)) as usize]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Unnormalized isotropic Gaussian density `exp(-(x²+y²)/(2σ²)) / (2πσ²)`.
pub fn gaussian_density(x: f64, y: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    (-(x * x + y * y) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2)
}

pub fn gaussian_kernel(params: &GaussianParams) -> Result<Kernel2, ImagingError> {
    params.validate()?;
    let r = params.kernel_radius as isize;
    let mut weights = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    for dy in -r..=r {
        for dx in -r..=r {
            weights.push(gaussian_density(dx as f64, dy as f64, params.sigma));
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(Kernel2 {
        radius: params.kernel_radius,
        weights,
    })
}

/// Normalized 1-D Gaussian taps; the outer product of two copies equals the
/// normalized 2-D kernel, which is what lets convolution run separably.
fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Separable convolution with edge replication, in floating point.
pub(crate) fn convolve_separable(
    src: &[f64],
    width: usize,
    height: usize,
    taps: &[f64],
) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let w = width as isize;
    let h = height as isize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        let out = &mut tmp[y * width..(y + 1) * width];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let xx = (x + k as isize - r).clamp(0, w - 1) as usize;
                acc += t * row[xx];
            }
            out[x as usize] = acc;
        }
    }
    let mut dst = vec![0.0; src.len()];
    for y in 0..h {
        let out = &mut dst[(y as usize) * width..(y as usize + 1) * width];
        for (k, &t) in taps.iter().enumerate() {
            let yy = (y + k as isize - r).clamp(0, h - 1) as usize;
            let row = &tmp[yy * width..(yy + 1) * width];
            for (o, &v) in out.iter_mut().zip(row) {
                *o += t * v;
            }
        }
    }
    dst
}

/// Luma conversion with weights 0.299 / 0.587 / 0.114.
///
/// `rgb` holds interleaved R, G, B samples.
pub fn to_grayscale(width: usize, height: usize, rgb: &[u8]) -> Result<GrayImage, ImagingError> {
    if width == 0 || height == 0 || rgb.len() != width * height * 3 {
        return Err(ImagingError::Dimensions {
            width,
            height,
            len: rgb.len(),
        });
    }
    let data = rgb
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(width, height, data)
}

pub fn gaussian_smooth(img: &GrayImage, params: &GaussianParams) -> Result<GrayImage, ImagingError> {
    params.validate()?;
    let taps = gaussian_taps(params.sigma, params.kernel_radius);
    let src: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
    let out = convolve_separable(&src, img.width, img.height, &taps);
    let data = out
        .into_iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        data,
    })
}

/// Local threshold surface: Gaussian-weighted mean over the block.
pub fn local_weighted_mean(img: &GrayImage, params: &ThresholdParams) -> Result<Vec<f64>, ImagingError> {
    params.validate()?;
    let taps = gaussian_taps(params.weight_sigma, params.block_radius);
    let src: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
    Ok(convolve_separable(&src, img.width, img.height, &taps))
}

/// Inverse adaptive threshold: a pixel becomes background (0) when it is
/// brighter than the local mean minus `c`, foreground (255) otherwise.
pub fn adaptive_threshold_inv(
    img: &GrayImage,
    params: &ThresholdParams,
) -> Result<BinaryImage, ImagingError> {
    let mean = local_weighted_mean(img, params)?;
    let data = img
        .data
        .iter()
        .zip(&mean)
        .map(|(&src, &t)| if src as f64 > t - params.c { 0 } else { 255 })
        .collect();
    Ok(BinaryImage {
        width: img.width,
        height: img.height,
        data,
    })
}
