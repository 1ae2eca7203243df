use std::path::Path;

use ct_kit::imaging::to_grayscale;
use ct_kit::GrayImage;
use image::{DynamicImage, ImageFormat};

use crate::CliError;

/// Reads PNG, PGM or PPM. Color input is converted with the detector's luma
/// weights.
pub fn load_gray(path: &Path) -> Result<GrayImage, CliError> {
    let img = image::open(path).map_err(|e| CliError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = match img {
        DynamicImage::ImageLuma8(buf) => GrayImage::new(w, h, buf.into_raw()),
        other => to_grayscale(w, h, other.to_rgb8().as_raw()),
    };
    gray.map_err(|e| CliError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes an 8-bit grayscale image; the format follows the extension
/// (`.pgm` gives binary PGM, anything else PNG).
pub fn save_gray(img: &GrayImage, path: &Path) -> Result<(), CliError> {
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .expect("buffer matches dimensions");
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("pgm") => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    };
    buf.save_with_format(path, format).map_err(|e| CliError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn save_rgb(img: &image::RgbImage, path: &Path) -> Result<(), CliError> {
    img.save_with_format(path, ImageFormat::Png).map_err(|e| CliError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
