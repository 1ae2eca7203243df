//! End-to-end detection on one grayscale image.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::MarkerTemplate;
use crate::contours::{approx_polygon, filter_by_area, find_contours, shape_filter, ContourFilterParams};
use crate::decoder::{decode_marker, DecodeParams, DecodeStage, DecodedMarker};
use crate::ellipse::dot_from_contour;
use crate::grouping::{cluster_markers, DotCandidate, GroupingParams, KdTree2};
use crate::imaging::{adaptive_threshold_inv, gaussian_smooth, GaussianParams, GrayImage, ImagingError, ThresholdParams};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Every tunable of the detector as one flat record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub gaussian_sigma: f64,
    pub gaussian_kernel_radius: usize,
    pub threshold_block_radius: usize,
    pub threshold_c: f64,
    pub threshold_weight_sigma: f64,
    pub min_area_px: f64,
    pub max_area_fraction: f64,
    pub dp_epsilon_fraction: f64,
    pub min_sides: usize,
    pub max_axis_ratio: f64,
    pub max_fit_residual_px: f64,
    pub k_neighbors: usize,
    pub max_span_factor: f64,
    pub max_diameter_ratio: f64,
    pub collinearity_tol_deg: f64,
    pub mask_tol: f64,
    pub min_conditioning: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let g = GaussianParams::default();
        let t = ThresholdParams::default();
        let c = ContourFilterParams::default();
        let k = GroupingParams::default();
        let d = DecodeParams::default();
        Self {
            gaussian_sigma: g.sigma,
            gaussian_kernel_radius: g.kernel_radius,
            threshold_block_radius: t.block_radius,
            threshold_c: t.c,
            threshold_weight_sigma: t.weight_sigma,
            min_area_px: c.min_area_px,
            max_area_fraction: c.max_area_fraction,
            dp_epsilon_fraction: c.dp_epsilon_fraction,
            min_sides: c.min_sides,
            max_axis_ratio: c.max_axis_ratio,
            max_fit_residual_px: c.max_fit_residual_px,
            k_neighbors: k.k_neighbors,
            max_span_factor: k.max_span_factor,
            max_diameter_ratio: k.max_diameter_ratio,
            collinearity_tol_deg: d.collinearity_tol_deg,
            mask_tol: d.mask_tol,
            min_conditioning: d.min_conditioning,
        }
    }
}

impl PipelineConfig {
    pub fn gaussian(&self) -> GaussianParams {
        GaussianParams {
            sigma: self.gaussian_sigma,
            kernel_radius: self.gaussian_kernel_radius,
        }
    }

    pub fn threshold(&self) -> ThresholdParams {
        ThresholdParams {
            block_radius: self.threshold_block_radius,
            c: self.threshold_c,
            weight_sigma: self.threshold_weight_sigma,
        }
    }

    pub fn contour_filter(&self) -> ContourFilterParams {
        ContourFilterParams {
            min_area_px: self.min_area_px,
            max_area_fraction: self.max_area_fraction,
            dp_epsilon_fraction: self.dp_epsilon_fraction,
            min_sides: self.min_sides,
            max_axis_ratio: self.max_axis_ratio,
            max_fit_residual_px: self.max_fit_residual_px,
        }
    }

    pub fn grouping(&self) -> GroupingParams {
        GroupingParams {
            k_neighbors: self.k_neighbors,
            max_span_factor: self.max_span_factor,
            max_diameter_ratio: self.max_diameter_ratio,
        }
    }

    pub fn decode(&self) -> DecodeParams {
        DecodeParams {
            collinearity_tol_deg: self.collinearity_tol_deg,
            mask_tol: self.mask_tol,
            min_conditioning: self.min_conditioning,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: String| PipelineError::Config(e);
        self.gaussian().validate().map_err(|e| cfg(e.to_string()))?;
        self.threshold().validate().map_err(|e| cfg(e.to_string()))?;
        self.contour_filter().validate().map_err(|e| cfg(e.to_string()))?;
        self.grouping().validate().map_err(cfg)?;
        self.decode().validate().map_err(cfg)?;
        if self.k_neighbors + 1 != crate::grouping::MARKER_DOTS {
            return Err(cfg(format!(
                "k_neighbors must be {} for eight-dot markers",
                crate::grouping::MARKER_DOTS - 1
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Everything the detector found in one image.
#[derive(Debug, Clone, Default)]
pub struct Detection {
    pub markers: Vec<DecodedMarker>,
    pub dots: Vec<DotCandidate>,
    pub candidates: usize,
    /// Rejected candidates per decoder stage.
    pub stage_rejections: BTreeMap<&'static str, usize>,
}

impl Detection {
    pub fn rejected(&self) -> usize {
        self.stage_rejections.values().sum()
    }
}

/// Stages up to dot extraction: smoothing, inverse adaptive threshold,
/// border following, area and shape filters, ellipse fit.
pub fn extract_dots(img: &GrayImage, config: &PipelineConfig) -> Result<Vec<DotCandidate>, PipelineError> {
    config.validate()?;
    let smooth = gaussian_smooth(img, &config.gaussian())?;
    let bin = adaptive_threshold_inv(&smooth, &config.threshold())?;
    let filter = config.contour_filter();
    let area = (img.width() * img.height()) as f64;
    let contours = filter_by_area(find_contours(&bin), &filter, area);
    let mut dots = Vec::new();
    for (index, contour) in contours.iter().enumerate() {
        if contour.touches_border(img.width(), img.height()) {
            continue;
        }
        let eps = filter.dp_epsilon_fraction * contour.perimeter_px;
        let Ok(poly) = approx_polygon(contour, eps) else {
            continue;
        };
        if !shape_filter(&poly, &filter) {
            continue;
        }
        if let Ok(dot) = dot_from_contour(contour, index, &filter) {
            dots.push(dot);
        }
    }
    Ok(dots)
}

pub fn detect(
    img: &GrayImage,
    template: &MarkerTemplate,
    config: &PipelineConfig,
) -> Result<Detection, PipelineError> {
    let dots = extract_dots(img, config)?;
    let tree = KdTree2::from_dots(&dots);
    let candidates = cluster_markers(&dots, &tree, &config.grouping());
    let params = config.decode();
    let mut out = Detection {
        candidates: candidates.len(),
        ..Detection::default()
    };
    for cand in &candidates {
        let pts: Vec<_> = cand.dots.iter().map(|d| d.center).collect();
        match decode_marker(&pts, template, &params) {
            Ok(m) => out.markers.push(m),
            Err(e) => *out.stage_rejections.entry(e.stage().name()).or_default() += 1,
        }
    }
    out.dots = dots;
    Ok(out)
}

/// Names of all decoder stages in flow order.
pub fn stage_names() -> [&'static str; 6] {
    [
        DecodeStage::Input,
        DecodeStage::Center,
        DecodeStage::Axis,
        DecodeStage::Sides,
        DecodeStage::Homography,
        DecodeStage::Code,
    ]
    .map(DecodeStage::name)
}
