//! Synthetic marker scenes with exact ground truth.

use nalgebra::{Matrix3, Rotation2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{marker_dot_positions, Codeword, CodebookError, DotRole, MarkerTemplate};
use crate::decoder::Homography;
use crate::geometry::{apply_homography, Point};
use crate::imaging::{convolve_separable, GrayImage};

/// Boundary samples used to bound a projected disk.
const RIM_SAMPLES: usize = 48;
/// Projected dots must keep this many pixels clear of the image border.
const BORDER_MARGIN_PX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error("invalid pose: {0}")]
    Pose(String),
    #[error("invalid render parameters: {0}")]
    Params(String),
    #[error("marker {index} leaves the {width}x{height} image")]
    OutOfBounds {
        index: usize,
        width: usize,
        height: usize,
    },
    #[error("markers {0} and {1} are closer than one marker diameter")]
    Overlap(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenePose {
    pub tilt_deg: f64,
    pub roll_deg: f64,
    pub scale_px: f64,
    pub center_px: [f64; 2],
    pub perspective_strength: f64,
}

impl ScenePose {
    pub fn frontal(scale_px: f64, center_px: [f64; 2]) -> Self {
        Self {
            tilt_deg: 0.0,
            roll_deg: 0.0,
            scale_px,
            center_px,
            perspective_strength: 3.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Pose(m.to_string()));
        if !(0.0..75.0).contains(&self.tilt_deg) {
            return bad("tilt_deg must lie in [0, 75)");
        }
        if !(0.0..360.0).contains(&self.roll_deg) {
            return bad("roll_deg must lie in [0, 360)");
        }
        if !(self.scale_px > 0.0 && self.scale_px.is_finite()) {
            return bad("scale_px must be positive");
        }
        if !(self.perspective_strength > 0.0 && self.perspective_strength.is_finite()) {
            return bad("perspective_strength must be positive");
        }
        if !self.center_px.iter().all(|v| v.is_finite()) {
            return bad("center_px must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderParams {
    pub width: usize,
    pub height: usize,
    pub supersample: usize,
    pub noise_sigma: f64,
    pub blur_sigma_px: f64,
    pub background: f64,
    pub dot_intensity: f64,
    pub seed: u64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            width: 800,
            height: 600,
            supersample: 4,
            noise_sigma: 4.0,
            blur_sigma_px: 0.6,
            background: 235.0,
            dot_intensity: 25.0,
            seed: 0,
        }
    }
}

impl RenderParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Params(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return bad("image dimensions must be positive");
        }
        if self.supersample == 0 {
            return bad("supersample must be at least 1");
        }
        if !(self.noise_sigma >= 0.0) || !(self.blur_sigma_px >= 0.0) {
            return bad("noise_sigma and blur_sigma_px must be non-negative");
        }
        if !(0.0..=255.0).contains(&self.background) || !(0.0..=255.0).contains(&self.dot_intensity) {
            return bad("intensities must lie in [0, 255]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub role: DotRole,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub id: u16,
    pub pose: ScenePose,
    /// Image-from-template homography, row-major.
    pub homography: [f64; 9],
    /// Projected disk centers in template order: fixed dots then slots.
    pub dots: Vec<LabeledPoint>,
}

impl GroundTruth {
    pub fn center_of(&self, role: DotRole) -> Option<Point> {
        self.dots
            .iter()
            .find(|d| d.role == role)
            .map(|d| Point::new(d.x, d.y))
    }
}

/// Camera model: the marker plane is rolled in-plane, tilted about the
/// image x axis and viewed by a pinhole at distance `f · scale` with focal
/// length `f · scale`, so a frontal pose is a pure similarity.
pub fn pose_to_homography(pose: &ScenePose) -> Result<Homography, SynthError> {
    pose.validate()?;
    let f = pose.perspective_strength;
    let s = pose.scale_px;
    let (st, ct) = pose.tilt_deg.to_radians().sin_cos();
    let [cx, cy] = pose.center_px;
    let roll = Rotation2::new(pose.roll_deg.to_radians());
    let r = roll.matrix();
    let roll3 = Matrix3::new(r[(0, 0)], r[(0, 1)], 0.0, r[(1, 0)], r[(1, 1)], 0.0, 0.0, 0.0, 1.0);
    let tilt = Matrix3::new(
        f * s,
        cx * st,
        cx * f,
        0.0,
        f * s * ct + cy * st,
        cy * f,
        0.0,
        st,
        f,
    );
    Homography::new(tilt * roll3).ok_or_else(|| SynthError::Pose("singular homography".into()))
}

struct PlacedMarker {
    h: Matrix3<f64>,
    h_inv: Matrix3<f64>,
    dots: Vec<(DotRole, Point)>,
    truth: GroundTruth,
}

fn place(
    template: &MarkerTemplate,
    index: usize,
    id: u16,
    pose: &ScenePose,
    params: &RenderParams,
) -> Result<PlacedMarker, SynthError> {
    let codeword = Codeword::from_id(id)?;
    let hom = pose_to_homography(pose)?;
    let h = *hom.matrix();
    let h_inv = h
        .try_inverse()
        .ok_or_else(|| SynthError::Pose("singular homography".into()))?;
    let dots = marker_dot_positions(template, &codeword);
    let oob = SynthError::OutOfBounds {
        index,
        width: params.width,
        height: params.height,
    };
    let (w, ht) = (params.width as f64, params.height as f64);
    let mut projected = Vec::with_capacity(dots.len());
    for &(role, c) in &dots {
        for k in 0..RIM_SAMPLES {
            let t = k as f64 * std::f64::consts::TAU / RIM_SAMPLES as f64;
            let rim = c + nalgebra::Vector2::new(t.cos(), t.sin()) * template.dot_radius;
            let v = h * nalgebra::Vector3::new(rim.x, rim.y, 1.0);
            // Same sign as the marker center's w: no wrap through infinity.
            if v.z * h[(2, 2)] <= 0.0 {
                return Err(oob);
            }
            let (x, y) = (v.x / v.z, v.y / v.z);
            let m = BORDER_MARGIN_PX;
            if !(x >= m && y >= m && x <= w - 1.0 - m && y <= ht - 1.0 - m) {
                return Err(oob);
            }
        }
        let p = apply_homography(&h, c).ok_or(SynthError::OutOfBounds {
            index,
            width: params.width,
            height: params.height,
        })?;
        projected.push(LabeledPoint { role, x: p.x, y: p.y });
    }
    Ok(PlacedMarker {
        h,
        h_inv,
        dots,
        truth: GroundTruth {
            id,
            pose: *pose,
            homography: hom.row_major(),
            dots: projected,
        },
    })
}

/// Corners of the template bounds square projected into the image.
fn projected_bounds(template: &MarkerTemplate, h: &Matrix3<f64>) -> [Point; 4] {
    let [lo, hi] = template.bounds;
    [(lo, lo), (hi, lo), (hi, hi), (lo, hi)]
        .map(|(x, y)| apply_homography(h, Point::new(x, y)).unwrap_or(Point::new(f64::NAN, f64::NAN)))
}

fn polygon_distance(a: &[Point; 4], b: &[Point; 4]) -> f64 {
    use crate::geometry::point_segment_distance;
    let inside = |p: Point, q: &[Point; 4]| {
        let s: Vec<f64> = (0..4).map(|k| crate::geometry::cross(q[k], q[(k + 1) % 4], p)).collect();
        s.iter().all(|&v| v >= 0.0) || s.iter().all(|&v| v <= 0.0)
    };
    if a.iter().any(|&p| inside(p, b)) || b.iter().any(|&p| inside(p, a)) {
        return 0.0;
    }
    let mut d = f64::INFINITY;
    for (p, q) in [(a, b), (b, a)] {
        for &v in p.iter() {
            for k in 0..4 {
                d = d.min(point_segment_distance(v, q[k], q[(k + 1) % 4]));
            }
        }
    }
    d
}

/// Marker diameter: longest edge of the projected bounds square.
fn diameter(q: &[Point; 4]) -> f64 {
    (0..4).map(|k| (q[k] - q[(k + 1) % 4]).norm()).fold(0.0, f64::max)
}

fn rasterize(template: &MarkerTemplate, markers: &[PlacedMarker], params: &RenderParams) -> Vec<f64> {
    let (w, h) = (params.width, params.height);
    let mut img = vec![params.background; w * h];
    let ss = params.supersample;
    let n_sub = (ss * ss) as f64;
    let r2 = template.dot_radius * template.dot_radius;
    for m in markers {
        for &(_, c) in &m.dots {
            let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for k in 0..RIM_SAMPLES {
                let t = k as f64 * std::f64::consts::TAU / RIM_SAMPLES as f64;
                let rim = c + nalgebra::Vector2::new(t.cos(), t.sin()) * template.dot_radius;
                if let Some(p) = apply_homography(&m.h, rim) {
                    x0 = x0.min(p.x);
                    y0 = y0.min(p.y);
                    x1 = x1.max(p.x);
                    y1 = y1.max(p.y);
                }
            }
            let xa = (x0.floor() as isize - 1).max(0) as usize;
            let ya = (y0.floor() as isize - 1).max(0) as usize;
            let xb = ((x1.ceil() as isize + 1).max(0) as usize).min(w - 1);
            let yb = ((y1.ceil() as isize + 1).max(0) as usize).min(h - 1);
            for py in ya..=yb {
                for px in xa..=xb {
                    let mut hits = 0usize;
                    for sy in 0..ss {
                        for sx in 0..ss {
                            // Pixel (px, py) covers [px - 0.5, px + 0.5).
                            let u = px as f64 - 0.5 + (sx as f64 + 0.5) / ss as f64;
                            let v = py as f64 - 0.5 + (sy as f64 + 0.5) / ss as f64;
                            if let Some(t) = apply_homography(&m.h_inv, Point::new(u, v)) {
                                if (t - c).norm_squared() <= r2 {
                                    hits += 1;
                                }
                            }
                        }
                    }
                    if hits > 0 {
                        let cov = hits as f64 / n_sub;
                        let cell = &mut img[py * w + px];
                        *cell += (params.dot_intensity - params.background) * cov;
                    }
                }
            }
        }
    }
    img
}

fn finish(mut img: Vec<f64>, params: &RenderParams) -> GrayImage {
    let (w, h) = (params.width, params.height);
    if params.blur_sigma_px > 0.0 {
        let radius = (3.0 * params.blur_sigma_px).ceil() as isize;
        let mut taps: Vec<f64> = (-radius..=radius)
            .map(|d| (-((d * d) as f64) / (2.0 * params.blur_sigma_px.powi(2))).exp())
            .collect();
        let total: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= total);
        img = convolve_separable(&img, w, h, &taps);
    }
    if params.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let normal = Normal::new(0.0, params.noise_sigma).expect("sigma validated");
        img.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    let data = img.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    GrayImage::new(w, h, data).expect("dimensions validated")
}

pub fn render(
    template: &MarkerTemplate,
    id: u16,
    pose: &ScenePose,
    params: &RenderParams,
) -> Result<(GrayImage, GroundTruth), SynthError> {
    let (img, mut truths) = render_multi(template, &[(id, *pose)], params)?;
    Ok((img, truths.remove(0)))
}

/// Composites several markers on one panel. Projected bounds squares must
/// stay at least one marker diameter apart.
pub fn render_multi(
    template: &MarkerTemplate,
    markers: &[(u16, ScenePose)],
    params: &RenderParams,
) -> Result<(GrayImage, Vec<GroundTruth>), SynthError> {
    params.validate()?;
    let placed = markers
        .iter()
        .enumerate()
        .map(|(i, (id, pose))| place(template, i, *id, pose, params))
        .collect::<Result<Vec<_>, _>>()?;
    let quads: Vec<[Point; 4]> = placed.iter().map(|m| projected_bounds(template, &m.h)).collect();
    for i in 0..quads.len() {
        for j in i + 1..quads.len() {
            let need = diameter(&quads[i]).max(diameter(&quads[j]));
            if !(polygon_distance(&quads[i], &quads[j]) >= need) {
                return Err(SynthError::Overlap(i, j));
            }
        }
    }
    let img = finish(rasterize(template, &placed, params), params);
    Ok((img, placed.into_iter().map(|m| m.truth).collect()))
}
