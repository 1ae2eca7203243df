//! Detection and decoding of dot-distribution coded targets, plus a
//! synthetic renderer for ground-truth scenes.
//!
//! Processing runs in this order: [`imaging`] (smoothing, inverse adaptive
//! threshold), [`contours`] (border following, polygon filter), [`ellipse`]
//! (dot centers), [`grouping`] (eight-dot candidates), [`decoder`]
//! (identification, homography, code mask). [`pipeline`] wires them
//! together; [`synth`] renders test scenes.

pub mod codebook;
pub mod contours;
pub mod decoder;
pub mod ellipse;
pub mod geometry;
pub mod grouping;
pub mod imaging;
pub mod pipeline;
pub mod synth;

pub use codebook::{canonical_template, Codeword, DotRole, MarkerTemplate, ValidationReport};
pub use decoder::{decode_marker, DecodeParams, DecodedMarker, Homography};
pub use geometry::Point;
pub use imaging::GrayImage;
pub use pipeline::{detect, Detection, PipelineConfig};
pub use synth::{render, render_multi, GroundTruth, RenderParams, ScenePose};
