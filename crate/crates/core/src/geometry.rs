//! Small planar helpers shared by the pipeline stages.

use nalgebra::{Matrix3, Point2, Vector3};

pub type Point = Point2<f64>;

/// Euclidean distance from `p` to the closed segment `[a, b]`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// z-component of `(b − a) × (c − a)`.
pub fn cross(a: Point, b: Point, c: Point) -> f64 {
    let u = b - a;
    let v = c - a;
    u.x * v.y - u.y * v.x
}

/// Applies a projective map; `None` when the point lands at infinity.
pub fn apply_homography(h: &Matrix3<f64>, p: Point) -> Option<Point> {
    let v = h * Vector3::new(p.x, p.y, 1.0);
    if v.z.abs() < f64::EPSILON * (v.x.abs() + v.y.abs()).max(1.0) {
        return None;
    }
    Some(Point::new(v.x / v.z, v.y / v.z))
}

/// Translation to the centroid followed by isotropic scaling so that the
/// RMS distance from the origin becomes √2. Returns the 3×3 transform.
pub fn isotropic_normalization(points: &[Point]) -> Option<Matrix3<f64>> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    let (mx, my) = (sx / n, sy / n);
    let ms = points
        .iter()
        .map(|p| (p.x - mx).powi(2) + (p.y - my).powi(2))
        .sum::<f64>()
        / n;
    if !(ms > 0.0) || !ms.is_finite() {
        return None;
    }
    let s = (2.0 / ms).sqrt();
    Some(Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distance_cases() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(10.0, 0.0);
        assert_eq!(point_segment_distance(Point::new(5.0, 3.0), a, b), 3.0);
        assert_eq!(point_segment_distance(Point::new(-3.0, 4.0), a, b), 5.0);
        assert_eq!(point_segment_distance(Point::new(1.0, 1.0), a, a), 2f64.sqrt());
    }

    #[test]
    fn normalization_hits_target_rms() {
        let pts = [Point::new(10.0, 3.0), Point::new(-4.0, 7.0), Point::new(2.0, 2.0)];
        let t = isotropic_normalization(&pts).unwrap();
        let mapped: Vec<Point> = pts.iter().map(|&p| apply_homography(&t, p).unwrap()).collect();
        let cx: f64 = mapped.iter().map(|p| p.x).sum::<f64>() / 3.0;
        let rms = (mapped.iter().map(|p| p.coords.norm_squared()).sum::<f64>() / 3.0).sqrt();
        assert!(cx.abs() < 1e-12);
        assert!((rms - 2f64.sqrt()).abs() < 1e-12);
        assert!(isotropic_normalization(&[Point::new(1.0, 1.0); 3]).is_none());
    }
}
