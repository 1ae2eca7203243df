//! Structured JSON output. Values are rounded when a report is built so
//! that serialization is stable and round-trips exactly.

use std::collections::BTreeMap;

use ct_kit::codebook::DotRole;
use ct_kit::{DecodedMarker, Detection, PipelineConfig, ValidationReport};
use serde::{Deserialize, Serialize};

pub const DETECTION_SCHEMA: &str = "ct-kit/detection-report/v1";
pub const VALIDATION_SCHEMA: &str = "ct-kit/codebook-validation/v1";
pub const TRUTH_SCHEMA: &str = "ct-kit/ground-truth/v1";
pub const BENCH_SCHEMA: &str = "ct-kit/bench-summary/v1";

pub fn round_to(v: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    let r = (v * s).round() / s;
    // Avoid "-0.0" in the output.
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCenter {
    pub label: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerReport {
    pub marker_id: u16,
    pub slots: [u8; 3],
    pub dots: Vec<LabeledCenter>,
    /// Image-from-template homography, row-major.
    pub homography: [f64; 9],
    pub max_residual_tpl: f64,
    pub orientation_deg: f64,
}

fn role_label(role: DotRole, code_rank: &mut usize) -> String {
    match role {
        DotRole::Slot(_) => {
            let label = ["slot_a", "slot_b", "slot_c"][*code_rank];
            *code_rank += 1;
            label.to_string()
        }
        other => other.to_string(),
    }
}

impl MarkerReport {
    pub fn from_decoded(m: &DecodedMarker) -> Self {
        let mut rank = 0;
        let dots = m
            .labeled_dots
            .iter()
            .map(|&(role, p)| LabeledCenter {
                label: role_label(role, &mut rank),
                x: round_to(p.x, 3),
                y: round_to(p.y, 3),
            })
            .collect();
        Self {
            marker_id: m.id,
            slots: m.codeword.slots(),
            dots,
            homography: m.homography_img_from_tpl.row_major().map(|v| round_to(v, 9)),
            max_residual_tpl: round_to(m.max_residual_tpl, 9),
            orientation_deg: round_to(m.orientation_deg, 3),
        }
    }

    pub fn center(&self, label: &str) -> Option<(f64, f64)> {
        self.dots.iter().find(|d| d.label == label).map(|d| (d.x, d.y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub path: String,
    pub width: usize,
    pub height: usize,
    pub dots_found: usize,
    pub candidates: usize,
    pub stage_rejections: usize,
    pub rejections_by_stage: BTreeMap<String, usize>,
    pub markers: Vec<MarkerReport>,
}

impl ImageReport {
    pub fn new(path: String, width: usize, height: usize, det: &Detection) -> Self {
        Self {
            path,
            width,
            height,
            dots_found: det.dots.len(),
            candidates: det.candidates,
            stage_rejections: det.rejected(),
            rejections_by_stage: det
                .stage_rejections
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            markers: det.markers.iter().map(MarkerReport::from_decoded).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub schema: String,
    pub template: String,
    pub invert: bool,
    pub parameters: PipelineConfig,
    pub images: Vec<ImageReport>,
}

impl DetectionReport {
    pub fn new(template: String, invert: bool, parameters: PipelineConfig, images: Vec<ImageReport>) -> Self {
        Self {
            schema: DETECTION_SCHEMA.to_string(),
            template,
            invert,
            parameters,
            images,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutput {
    pub schema: String,
    pub template: String,
    #[serde(flatten)]
    pub report: ValidationReport,
}
