//! Direct least-squares ellipse fitting and conic geometry.
//!
//! The fit minimizes the algebraic error `Σ (aᵀ d_i)²` over conic
//! coefficients `a` subject to `4AC − B² = 1`, which guarantees an ellipse.
//! The scatter matrix is split into quadratic and linear blocks so the
//! linear part can be eliminated and only a 3×3 eigenproblem remains.
//! Points are centered and scaled to RMS radius √2 before fitting.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contours::{Contour, ContourFilterParams};
use crate::geometry::{isotropic_normalization, Point};
use crate::grouping::DotCandidate;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("insufficient data: need at least 5 points, got {0}")]
    InsufficientData(usize),
    #[error("degenerate point scatter (collinear or coincident points)")]
    Degenerate,
    #[error("conic is not an ellipse")]
    NotAnEllipse,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DotError {
    #[error("ellipse fit failed: {0}")]
    Fit(#[from] FitError),
    #[error("axis ratio {0:.2} exceeds limit")]
    AxisRatio(f64),
    #[error("mean radial residual {0:.3} px exceeds limit")]
    Residual(f64),
}

/// General conic `A x² + B xy + C y² + D x + E y + F = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl Conic {
    pub fn new(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> Self {
        Self { a, b, c, d, e, f }
    }

    /// Symmetric matrix `Q` with `[x y 1] Q [x y 1]ᵀ` equal to the conic.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.a,
            self.b / 2.0,
            self.d / 2.0,
            self.b / 2.0,
            self.c,
            self.e / 2.0,
            self.d / 2.0,
            self.e / 2.0,
            self.f,
        )
    }

    pub fn from_matrix(q: &Matrix3<f64>) -> Self {
        Self::new(
            q[(0, 0)],
            q[(0, 1)] + q[(1, 0)],
            q[(1, 1)],
            q[(0, 2)] + q[(2, 0)],
            q[(1, 2)] + q[(2, 1)],
            q[(2, 2)],
        )
    }

    /// `B² − 4AC`; negative for ellipses.
    pub fn discriminant(&self) -> f64 {
        self.b * self.b - 4.0 * self.a * self.c
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.a * x * x + self.b * x * y + self.c * y * y + self.d * x + self.e * y + self.f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseGeom {
    pub center: Point,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Direction of the major axis, radians in `[0, π)`.
    pub angle: f64,
}

impl EllipseGeom {
    pub fn axis_ratio(&self) -> f64 {
        self.semi_major / self.semi_minor
    }

    /// Distance from `p` to the ellipse measured along the ray from the center.
    pub fn radial_residual(&self, p: Point) -> f64 {
        let d = p - self.center;
        let r = d.norm();
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (d.x * c + d.y * s, -d.x * s + d.y * c);
        let (a, b) = (self.semi_major, self.semi_minor);
        if r == 0.0 {
            return b;
        }
        let (cu, sv) = (u / r, v / r);
        let re = a * b / ((b * cu).powi(2) + (a * sv).powi(2)).sqrt();
        (r - re).abs()
    }

    /// Point on the ellipse at parameter `t`.
    pub fn point_at(&self, t: f64) -> Point {
        let (s, c) = self.angle.sin_cos();
        let (x, y) = (self.semi_major * t.cos(), self.semi_minor * t.sin());
        Point::new(self.center.x + x * c - y * s, self.center.y + x * s + y * c)
    }
}

/// Inverse of the 3×3 constraint block of `4AC − B²`.
fn constraint_inverse() -> Matrix3<f64> {
    Matrix3::new(0.0, 0.0, 0.5, 0.0, -1.0, 0.0, 0.5, 0.0, 0.0)
}

pub fn fit_ellipse(points: &[Point]) -> Result<Conic, FitError> {
    if points.len() < 5 {
        return Err(FitError::InsufficientData(points.len()));
    }
    let norm = isotropic_normalization(points).ok_or(FitError::Degenerate)?;
    let (s, tx, ty) = (norm[(0, 0)], norm[(0, 2)], norm[(1, 2)]);

    let mut s1 = Matrix3::zeros();
    let mut s2 = Matrix3::zeros();
    let mut s3 = Matrix3::zeros();
    for p in points {
        let (x, y) = (s * p.x + tx, s * p.y + ty);
        let quad = Vector3::new(x * x, x * y, y * y);
        let lin = Vector3::new(x, y, 1.0);
        s1 += quad * quad.transpose();
        s2 += quad * lin.transpose();
        s3 += lin * lin.transpose();
    }

    // After normalization the linear scatter has unit-scale entries, so an
    // absolute gate on its 2×2 spatial block detects collinear input.
    let n = points.len() as f64;
    let spatial = s3.fixed_view::<2, 2>(0, 0) / n;
    let spatial_min = spatial.symmetric_eigenvalues().min();
    if spatial_min < 1e-10 {
        return Err(FitError::Degenerate);
    }
    let s3_inv = s3.try_inverse().ok_or(FitError::Degenerate)?;
    let elim = -s3_inv * s2.transpose();
    let reduced = s1 + s2 * elim;
    let reduced = (reduced + reduced.transpose()) * 0.5;
    let pencil = constraint_inverse() * reduced;

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in pencil.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-9 * (1.0 + lambda.re.abs()) {
            continue;
        }
        let shifted = pencil - Matrix3::identity() * lambda.re;
        let svd = shifted.svd(false, true);
        let Some(v_t) = svd.v_t else { continue };
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("three singular values");
        let a1: Vector3<f64> = v_t.row(imin).transpose();
        let constraint = 4.0 * a1[0] * a1[2] - a1[1] * a1[1];
        if constraint <= 0.0 {
            continue;
        }
        let cost = (a1.transpose() * reduced * a1)[0] / constraint;
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, a1));
        }
    }
    let (_, a1) = best.ok_or(FitError::NotAnEllipse)?;
    let a2 = elim * a1;
    let local = Conic::new(a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]);

    // Map back to image coordinates: Q = Tᵀ Q' T.
    let q = norm.transpose() * local.to_matrix() * norm;
    let q = q / q.abs().max();
    Ok(Conic::from_matrix(&q))
}

pub fn conic_to_geom(conic: &Conic) -> Result<EllipseGeom, FitError> {
    let Conic { a, b, c, d, e, f } = *conic;
    let det = 4.0 * a * c - b * b;
    if !(det > 0.0) {
        return Err(FitError::NotAnEllipse);
    }
    let scale = a.abs().max(b.abs()).max(c.abs());
    if det < 1e-14 * scale * scale {
        return Err(FitError::Degenerate);
    }
    let cx = (b * e - 2.0 * c * d) / det;
    let cy = (b * d - 2.0 * a * e) / det;
    let f0 = f + (d * cx + e * cy) / 2.0;

    let mean = (a + c) / 2.0;
    let spread = (((a - c) / 2.0).powi(2) + (b / 2.0).powi(2)).sqrt();
    let (l_max, l_min) = (mean + spread, mean - spread);
    let (r1, r2) = (-f0 / l_max, -f0 / l_min);
    if !(r1 > 0.0 && r2 > 0.0) || !r1.is_finite() || !r2.is_finite() {
        return Err(FitError::NotAnEllipse);
    }
    // theta0 points along the eigenvector of l_max.
    let theta0 = 0.5 * b.atan2(a - c);
    let (semi_major, semi_minor, angle) = if r1 >= r2 {
        (r1.sqrt(), r2.sqrt(), theta0)
    } else {
        (r2.sqrt(), r1.sqrt(), theta0 + std::f64::consts::FRAC_PI_2)
    };
    Ok(EllipseGeom {
        center: Point::new(cx, cy),
        semi_major,
        semi_minor,
        angle: angle.rem_euclid(std::f64::consts::PI),
    })
}

/// Fits the full contour point set and applies the axis-ratio and residual
/// gates.
pub fn dot_from_contour(
    contour: &Contour,
    source_index: usize,
    params: &ContourFilterParams,
) -> Result<DotCandidate, DotError> {
    let pts: Vec<Point> = contour.points.iter().map(|p| p.to_point()).collect();
    let geom = conic_to_geom(&fit_ellipse(&pts)?)?;
    let ratio = geom.axis_ratio();
    if ratio > params.max_axis_ratio {
        return Err(DotError::AxisRatio(ratio));
    }
    let residual = pts.iter().map(|&p| geom.radial_residual(p)).sum::<f64>() / pts.len() as f64;
    if residual > params.max_fit_residual_px {
        return Err(DotError::Residual(residual));
    }
    Ok(DotCandidate {
        center: geom.center,
        mean_diameter_px: geom.semi_major + geom.semi_minor,
        source_contour_index: source_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contours::{find_contours, Pixel};
    use crate::imaging::BinaryImage;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ellipse_points(cx: f64, cy: f64, a: f64, b: f64, angle: f64, n: usize, phase: f64) -> Vec<Point> {
        let g = EllipseGeom {
            center: Point::new(cx, cy),
            semi_major: a,
            semi_minor: b,
            angle,
        };
        (0..n)
            .map(|i| g.point_at(phase + i as f64 * std::f64::consts::TAU / n as f64))
            .collect()
    }

    fn fit_geom(pts: &[Point]) -> EllipseGeom {
        conic_to_geom(&fit_ellipse(pts).unwrap()).unwrap()
    }

    #[test]
    fn exact_circle_center() {
        let pts = ellipse_points(10.0, 20.0, 5.0, 5.0, 0.0, 12, 0.1);
        let g = fit_geom(&pts);
        assert!((g.center - Point::new(10.0, 20.0)).norm() < 1e-6);
        assert!((g.semi_major - 5.0).abs() < 1e-6 && (g.semi_minor - 5.0).abs() < 1e-6);
    }

    #[test]
    fn exact_ellipse_geometry() {
        let pts = ellipse_points(-3.0, 7.5, 9.0, 4.0, 2.2, 17, 0.3);
        let g = fit_geom(&pts);
        assert!((g.center - Point::new(-3.0, 7.5)).norm() < 1e-9);
        assert!((g.semi_major - 9.0).abs() < 1e-9);
        assert!((g.semi_minor - 4.0).abs() < 1e-9);
        assert!((g.angle - 2.2).abs() < 1e-9);
    }

    #[test]
    fn too_few_points() {
        let pts = ellipse_points(0.0, 0.0, 2.0, 1.0, 0.0, 4, 0.0);
        assert_eq!(fit_ellipse(&pts), Err(FitError::InsufficientData(4)));
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts: Vec<Point> = (0..10).map(|i| Point::new(i as f64, 2.0 * i as f64 + 1.0)).collect();
        assert_eq!(fit_ellipse(&pts), Err(FitError::Degenerate));
        let same = vec![Point::new(3.0, 3.0); 8];
        assert_eq!(fit_ellipse(&same), Err(FitError::Degenerate));
    }

    #[test]
    fn conic_geometry_examples() {
        let g = conic_to_geom(&Conic::new(1.0, 0.0, 1.0, 0.0, 0.0, -1.0)).unwrap();
        assert_eq!(g.center, Point::new(0.0, 0.0));
        assert_eq!((g.semi_major, g.semi_minor), (1.0, 1.0));

        let g = conic_to_geom(&Conic::new(1.0, 0.0, 1.0, -4.0, -6.0, 12.0)).unwrap();
        assert!((g.center - Point::new(2.0, 3.0)).norm() < 1e-12);
        assert!((g.semi_major - 1.0).abs() < 1e-12);

        assert_eq!(
            conic_to_geom(&Conic::new(1.0, 0.0, -1.0, 0.0, 0.0, -1.0)),
            Err(FitError::NotAnEllipse)
        );
        // Imaginary ellipse x² + y² + 1 = 0.
        assert_eq!(
            conic_to_geom(&Conic::new(1.0, 0.0, 1.0, 0.0, 0.0, 1.0)),
            Err(FitError::NotAnEllipse)
        );
    }

    #[test]
    fn noisy_center_95th_percentile() {
        let mut errors: Vec<f64> = (0..100u64)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let pts: Vec<Point> = ellipse_points(50.0, 50.0, 20.0, 10.0, 30f64.to_radians(), 40, 0.0)
                    .into_iter()
                    .map(|p| Point::new(p.x + rng.random_range(-0.5..=0.5), p.y + rng.random_range(-0.5..=0.5)))
                    .collect();
                (fit_geom(&pts).center - Point::new(50.0, 50.0)).norm()
            })
            .collect();
        errors.sort_by(f64::total_cmp);
        let p95 = errors[94];
        assert!(p95 < 0.25, "95th percentile center error {p95}");
    }

    #[test]
    fn thin_rectangle_rejected_by_ratio() {
        let bin = BinaryImage::from_fn(50, 20, |x, y| (10..40).contains(&x) && (8..11).contains(&y));
        let c = &find_contours(&bin)[0];
        let err = dot_from_contour(c, 0, &ContourFilterParams::default()).unwrap_err();
        assert!(matches!(err, DotError::AxisRatio(r) if r > 4.0), "{err:?}");
    }

    #[test]
    fn digital_disk_accepted() {
        let (cx, cy, r) = (15.3, 14.6, 6.0);
        let bin = BinaryImage::from_fn(32, 32, |x, y| {
            (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r
        });
        let c = &find_contours(&bin)[0];
        let dot = dot_from_contour(c, 3, &ContourFilterParams::default()).unwrap();
        assert!((dot.center - Point::new(cx, cy)).norm() < 0.5);
        assert_eq!(dot.source_contour_index, 3);
        assert!(dot.mean_diameter_px > 9.0 && dot.mean_diameter_px < 13.0);
    }

    #[test]
    fn square_outline_rejected_by_residual_when_forced() {
        let mut pts = Vec::new();
        for i in 0..40 {
            pts.push(Pixel::new(i, 0));
            pts.push(Pixel::new(39, i));
            pts.push(Pixel::new(39 - i, 39));
            pts.push(Pixel::new(0, 39 - i));
        }
        pts.sort();
        pts.dedup();
        let c = Contour::from_points(pts);
        assert!(matches!(
            dot_from_contour(&c, 0, &ContourFilterParams::default()),
            Err(DotError::Residual(_))
        ));
    }

    fn arb_ellipse() -> impl Strategy<Value = (f64, f64, f64, f64, f64)> {
        (-100.0f64..100.0, -100.0f64..100.0, 2.0f64..30.0, 0.3f64..1.0, 0.0f64..3.14)
            .prop_map(|(x, y, a, ratio, t)| (x, y, a, a * ratio, t))
    }

    proptest! {
        #[test]
        fn translation_equivariance((x, y, a, b, t) in arb_ellipse(), dx in -500.0f64..500.0, dy in -500.0f64..500.0) {
            let pts = ellipse_points(x, y, a, b, t, 20, 0.2);
            let moved: Vec<Point> = pts.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect();
            let g0 = fit_geom(&pts);
            let g1 = fit_geom(&moved);
            prop_assert!((g1.center.x - g0.center.x - dx).abs() < 1e-9);
            prop_assert!((g1.center.y - g0.center.y - dy).abs() < 1e-9);
        }

        #[test]
        fn rotation_equivariance((x, y, a, b, t) in arb_ellipse(), rot in 0.0f64..6.28) {
            let pts = ellipse_points(x, y, a, b, t, 20, 0.2);
            let (s, c) = rot.sin_cos();
            let turn = |p: &Point| Point::new(c * p.x - s * p.y, s * p.x + c * p.y);
            let g0 = fit_geom(&pts);
            let g1 = fit_geom(&pts.iter().map(turn).collect::<Vec<_>>());
            prop_assert!((g1.center - turn(&g0.center)).norm() < 1e-9);
        }

        #[test]
        fn scale_equivariance((x, y, a, b, t) in arb_ellipse(), k in 0.1f64..20.0) {
            let pts = ellipse_points(x, y, a, b, t, 20, 0.2);
            let g0 = fit_geom(&pts);
            let g1 = fit_geom(&pts.iter().map(|p| Point::new(k * p.x, k * p.y)).collect::<Vec<_>>());
            prop_assert!((g1.center - g0.center * k).norm() < 1e-9);
            prop_assert!((g1.semi_major - k * g0.semi_major).abs() < 1e-9);
            prop_assert!((g1.semi_minor - k * g0.semi_minor).abs() < 1e-9);
        }

        #[test]
        fn permutation_invariance((x, y, a, b, t) in arb_ellipse(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Point> = ellipse_points(x, y, a, b, t, 25, 0.0)
                .into_iter()
                .map(|p| Point::new(p.x + rng.random_range(-0.3..0.3), p.y + rng.random_range(-0.3..0.3)))
                .collect();
            let mut shuffled = pts.clone();
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            let g0 = fit_geom(&pts);
            let g1 = fit_geom(&shuffled);
            prop_assert!((g1.center - g0.center).norm() < 1e-8);
        }
    }
}
