//! Outer-border extraction from binary images and the geometric filters that
//! keep plausible dot outlines.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{point_segment_distance, Point};
use crate::imaging::BinaryImage;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContourError {
    #[error("contour has {0} points, at least 4 are required")]
    Degenerate(usize),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Integer pixel coordinate (x right, y down).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub x: i32,
    pub y: i32,
}

impl Pixel {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn to_point(self) -> Point {
        Point::new(self.x as f64, self.y as f64)
    }
}

/// Closed outer boundary of one 8-connected foreground component.
///
/// Points run counter-clockwise as displayed (y axis pointing down), which
/// makes [`signed_area`] non-positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub points: Vec<Pixel>,
    pub area_px: f64,
    pub perimeter_px: f64,
}

impl Contour {
    pub fn from_points(points: Vec<Pixel>) -> Self {
        let area_px = signed_area(&points).abs();
        let perimeter_px = closed_length(&points);
        Self {
            points,
            area_px,
            perimeter_px,
        }
    }

    pub fn touches_border(&self, width: usize, height: usize) -> bool {
        let (w, h) = (width as i32, height as i32);
        self.points
            .iter()
            .any(|p| p.x <= 0 || p.y <= 0 || p.x >= w - 1 || p.y >= h - 1)
    }
}

/// Shoelace sum `½ Σ (x_i y_{i+1} − x_{i+1} y_i)` over the closed polygon.
pub fn signed_area(points: &[Pixel]) -> f64 {
    if points.len() < 3 {
        return 0.0;
    }
    let mut acc: i64 = 0;
    for (i, p) in points.iter().enumerate() {
        let q = points[(i + 1) % points.len()];
        acc += p.x as i64 * q.y as i64 - q.x as i64 * p.y as i64;
    }
    acc as f64 / 2.0
}

fn closed_length(points: &[Pixel]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    (0..points.len())
        .map(|i| {
            let p = points[i].to_point();
            let q = points[(i + 1) % points.len()].to_point();
            (q - p).norm()
        })
        .sum()
}

/// Neighbor offsets ordered counter-clockwise as displayed, starting east.
const DIRS: [(i32, i32); 8] = [
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];
const WEST: usize = 4;

fn dir_index(from: Pixel, to: Pixel) -> usize {
    let d = (to.x - from.x, to.y - from.y);
    DIRS.iter().position(|&o| o == d).expect("pixels are 8-adjacent")
}

/// Every outer border of every 8-connected foreground component, each traced
/// once. Components are visited in raster order of their top-left pixel;
/// holes are not reported.
pub fn find_contours(bin: &BinaryImage) -> Vec<Contour> {
    let (w, h) = (bin.width() as i32, bin.height() as i32);
    let fg = |p: Pixel| p.x >= 0 && p.y >= 0 && p.x < w && p.y < h && bin.is_foreground(p.x as usize, p.y as usize);

    let mut labelled = vec![false; bin.width() * bin.height()];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let idx = (y * w + x) as usize;
            if labelled[idx] || !bin.is_foreground(x as usize, y as usize) {
                continue;
            }
            // Flood-fill marks the component so it is traced only once.
            labelled[idx] = true;
            stack.push(Pixel::new(x, y));
            while let Some(p) = stack.pop() {
                for &(dx, dy) in &DIRS {
                    let q = Pixel::new(p.x + dx, p.y + dy);
                    if fg(q) {
                        let qi = (q.y * w + q.x) as usize;
                        if !labelled[qi] {
                            labelled[qi] = true;
                            stack.push(q);
                        }
                    }
                }
            }
            out.push(Contour::from_points(trace_outer_border(Pixel::new(x, y), &fg)));
        }
    }
    out
}

/// Border following from a start pixel whose west neighbor is background.
fn trace_outer_border(start: Pixel, fg: &impl Fn(Pixel) -> bool) -> Vec<Pixel> {
    let step = |p: Pixel, d: usize| Pixel::new(p.x + DIRS[d].0, p.y + DIRS[d].1);

    // Clockwise search from the west neighbor finds the last border pixel.
    let last = (0..8)
        .map(|k| (WEST + 8 - k) % 8)
        .map(|d| step(start, d))
        .find(|&q| fg(q));
    let Some(last) = last else {
        return vec![start];
    };

    let mut points = Vec::new();
    let mut prev = last;
    let mut cur = start;
    loop {
        let base = dir_index(cur, prev);
        let next = (1..=8)
            .map(|k| step(cur, (base + k) % 8))
            .find(|&q| fg(q))
            .expect("component has at least two pixels");
        points.push(cur);
        if next == start && cur == last {
            break;
        }
        prev = cur;
        cur = next;
    }
    points
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourFilterParams {
    pub min_area_px: f64,
    /// Upper area bound as a fraction of the image area.
    pub max_area_fraction: f64,
    /// Douglas-Peucker tolerance as a fraction of the contour perimeter.
    pub dp_epsilon_fraction: f64,
    pub min_sides: usize,
    pub max_axis_ratio: f64,
    /// Mean radial residual gate applied after the ellipse fit.
    pub max_fit_residual_px: f64,
}

impl Default for ContourFilterParams {
    fn default() -> Self {
        Self {
            min_area_px: 16.0,
            max_area_fraction: 0.01,
            dp_epsilon_fraction: 0.015,
            min_sides: 6,
            max_axis_ratio: 4.0,
            max_fit_residual_px: 0.75,
        }
    }
}

impl ContourFilterParams {
    pub fn validate(&self) -> Result<(), ContourError> {
        let bad = |what: &str| Err(ContourError::Parameter(what.to_string()));
        if !(self.min_area_px > 0.0) {
            return bad("min_area_px must be > 0");
        }
        if !(self.max_area_fraction > 0.0 && self.max_area_fraction < 1.0) {
            return bad("max_area_fraction must lie in (0, 1)");
        }
        if !(self.dp_epsilon_fraction > 0.0 && self.dp_epsilon_fraction < 0.5) {
            return bad("dp_epsilon_fraction must lie in (0, 0.5)");
        }
        if self.min_sides < 3 {
            return bad("min_sides must be >= 3");
        }
        if !(self.max_axis_ratio >= 1.0) {
            return bad("max_axis_ratio must be >= 1");
        }
        if !(self.max_fit_residual_px > 0.0) {
            return bad("max_fit_residual_px must be > 0");
        }
        Ok(())
    }
}

pub fn filter_by_area(
    contours: Vec<Contour>,
    params: &ContourFilterParams,
    image_area: f64,
) -> Vec<Contour> {
    let max_area = params.max_area_fraction * image_area;
    contours
        .into_iter()
        .filter(|c| c.area_px >= params.min_area_px && c.area_px <= max_area)
        .collect()
}

/// Douglas-Peucker simplification of a closed contour.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonApprox {
    pub vertices: Vec<Pixel>,
    /// Positions of the vertices in the source contour, ascending.
    pub indices: Vec<usize>,
    /// Largest distance of any source point to the simplified polygon.
    pub max_deviation_px: f64,
}

/// Indices kept by Douglas-Peucker on an open polyline (endpoints included).
///
/// Deviation is measured to the chord segment, so every dropped point ends up
/// within `epsilon` of the simplified polyline.
pub fn simplify_polyline(points: &[Point], epsilon: f64) -> Vec<usize> {
    match points.len() {
        0 => return Vec::new(),
        1 => return vec![0],
        _ => {}
    }
    let mut keep = vec![false; points.len()];
    keep[0] = true;
    keep[points.len() - 1] = true;
    let mut stack = vec![(0, points.len() - 1)];
    while let Some((a, b)) = stack.pop() {
        if b <= a + 1 {
            continue;
        }
        let (mut worst, mut worst_d) = (a, -1.0);
        for i in a + 1..b {
            let d = point_segment_distance(points[i], points[a], points[b]);
            if d > worst_d {
                worst = i;
                worst_d = d;
            }
        }
        if worst_d > epsilon {
            keep[worst] = true;
            stack.push((a, worst));
            stack.push((worst, b));
        }
    }
    keep.iter()
        .enumerate()
        .filter_map(|(i, &k)| k.then_some(i))
        .collect()
}

fn farthest_from(points: &[Point], from: usize) -> usize {
    let origin = points[from];
    let mut best = from;
    let mut best_d = -1.0;
    for (i, p) in points.iter().enumerate() {
        let d = (p - origin).norm_squared();
        if d > best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Closed-curve Douglas-Peucker: seed with an approximately diametral pair,
/// then simplify the two chains between the seeds.
pub fn approx_polygon(contour: &Contour, epsilon_px: f64) -> Result<PolygonApprox, ContourError> {
    if !(epsilon_px > 0.0) {
        return Err(ContourError::Parameter(format!(
            "epsilon must be > 0, got {epsilon_px}"
        )));
    }
    let n = contour.points.len();
    if n < 4 {
        return Err(ContourError::Degenerate(n));
    }
    let pts: Vec<Point> = contour.points.iter().map(|p| p.to_point()).collect();
    let far = farthest_from(&pts, 0);
    let seed_b = farthest_from(&pts, far);
    let (s0, s1) = if far < seed_b { (far, seed_b) } else { (seed_b, far) };
    if s0 == s1 {
        // Every point coincides.
        return Err(ContourError::Degenerate(1));
    }

    let mut kept = Vec::new();
    for chain in [
        (s0..=s1).collect::<Vec<_>>(),
        (s1..n).chain(0..=s0).collect::<Vec<_>>(),
    ] {
        let chain_pts: Vec<Point> = chain.iter().map(|&i| pts[i]).collect();
        kept.extend(simplify_polyline(&chain_pts, epsilon_px).into_iter().map(|k| chain[k]));
    }
    kept.sort_unstable();
    kept.dedup();

    let verts: Vec<Point> = kept.iter().map(|&i| pts[i]).collect();
    let max_deviation_px = pts
        .iter()
        .map(|&p| distance_to_closed_polygon(p, &verts))
        .fold(0.0, f64::max);
    Ok(PolygonApprox {
        vertices: kept.iter().map(|&i| contour.points[i]).collect(),
        indices: kept,
        max_deviation_px,
    })
}

/// Distance from `p` to the nearest edge of a closed polygon.
pub fn distance_to_closed_polygon(p: Point, verts: &[Point]) -> f64 {
    match verts.len() {
        0 => f64::INFINITY,
        1 => (p - verts[0]).norm(),
        n => (0..n)
            .map(|i| point_segment_distance(p, verts[i], verts[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Turns whose vertex lies at most this far from the chord of its neighbors
/// count as straight: single-pixel lattice steps.
pub const LATTICE_TOL_PX: f64 = 1.0;

/// Keeps convex polygons with at least `min_sides` vertices. Collinear
/// vertices and turns within [`LATTICE_TOL_PX`] do not break convexity.
pub fn shape_filter(poly: &PolygonApprox, params: &ContourFilterParams) -> bool {
    is_convex_with_sides(&poly.vertices, params.min_sides)
}

pub(crate) fn is_convex_with_sides(verts: &[Pixel], min_sides: usize) -> bool {
    let n = verts.len();
    if n < 3 || n < min_sides {
        return false;
    }
    let mut sign = 0i64;
    for i in 0..n {
        let a = verts[i];
        let b = verts[(i + 1) % n];
        let c = verts[(i + 2) % n];
        let cross = (b.x - a.x) as i64 * (c.y - b.y) as i64 - (b.y - a.y) as i64 * (c.x - b.x) as i64;
        let chord = (((c.x - a.x) as f64).powi(2) + ((c.y - a.y) as f64).powi(2)).sqrt();
        if chord > 0.0 && cross.abs() as f64 <= LATTICE_TOL_PX * chord {
            continue;
        }
        if cross != 0 {
            if sign != 0 && cross.signum() != sign {
                return false;
            }
            sign = cross.signum();
        }
    }
    true
}
