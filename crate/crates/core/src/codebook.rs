//! Marker layout, codeword ranking and the brute-force check that the
//! decoder's identification rules hold for every codeword.
//!
//! A marker carries eight dots: five fixed dots (`x0`, `x1`, `x3`, `x4`,
//! `x5`) shared by every marker, and three dots chosen from 22 code slots.
//! The codeword id is the lexicographic rank of the sorted slot triple.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{cross, Point};

/// Number of code slots in a template.
pub const SLOT_COUNT: usize = 22;
/// Number of distinct codewords, C(22, 3).
pub const CODEWORD_COUNT: u16 = 1540;

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("invalid codeword slots {0:?}")]
    InvalidSlots([u8; 3]),
    #[error("codeword id {0} out of range 0..1540")]
    IdOutOfRange(u32),
    #[error("malformed template: {0}")]
    Template(String),
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Role of a dot within a marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DotRole {
    X0,
    X1,
    X3,
    X4,
    X5,
    Slot(u8),
}

impl fmt::Display for DotRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DotRole::X0 => f.write_str("x0"),
            DotRole::X1 => f.write_str("x1"),
            DotRole::X3 => f.write_str("x3"),
            DotRole::X4 => f.write_str("x4"),
            DotRole::X5 => f.write_str("x5"),
            DotRole::Slot(k) => write!(f, "slot{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedDots {
    pub x0: [f64; 2],
    pub x1: [f64; 2],
    pub x3: [f64; 2],
    pub x4: [f64; 2],
    pub x5: [f64; 2],
}

/// Canonical marker geometry in unitless template coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerTemplate {
    pub dot_radius: f64,
    /// Square `[lo, hi]²` enclosing every dot disk.
    pub bounds: [f64; 2],
    pub fixed: FixedDots,
    pub code_slots: Vec<[f64; 2]>,
}

fn pt(a: [f64; 2]) -> Point {
    Point::new(a[0], a[1])
}

/// Slot positions of the canonical layout, positive-y half first.
const CANONICAL_SLOTS: [[f64; 2]; SLOT_COUNT] = [
    [0.121, 0.784], [0.299, 0.900], [0.322, 0.720], [0.373, 0.243],
    [0.419, 0.487], [0.462, 0.821], [0.513, 0.343], [0.566, 0.577],
    [0.615, 0.742], [0.662, 0.434], [0.738, 0.592], [0.009, -0.854],
    [0.188, -0.881], [0.226, -0.712], [0.367, -0.811], [0.380, -0.635],
    [0.522, -0.735], [0.537, -0.561], [0.547, -0.388], [0.680, -0.657],
    [0.691, -0.484], [0.834, -0.580],
];

/// The canonical layout used by default everywhere.
pub fn canonical_template() -> MarkerTemplate {
    MarkerTemplate {
        dot_radius: 0.04,
        bounds: [-0.95, 0.95],
        fixed: FixedDots {
            x0: [0.0, 0.0],
            x1: [-0.894, 0.0],
            x3: [0.351, 0.0],
            x4: [-0.829, 0.448],
            x5: [-0.694, -0.346],
        },
        code_slots: CANONICAL_SLOTS.to_vec(),
    }
}

impl MarkerTemplate {
    pub fn x0(&self) -> Point {
        pt(self.fixed.x0)
    }
    pub fn x1(&self) -> Point {
        pt(self.fixed.x1)
    }
    pub fn x3(&self) -> Point {
        pt(self.fixed.x3)
    }
    pub fn x4(&self) -> Point {
        pt(self.fixed.x4)
    }
    pub fn x5(&self) -> Point {
        pt(self.fixed.x5)
    }

    pub fn slot(&self, k: usize) -> Point {
        pt(self.code_slots[k])
    }

    pub fn position(&self, role: DotRole) -> Point {
        match role {
            DotRole::X0 => self.x0(),
            DotRole::X1 => self.x1(),
            DotRole::X3 => self.x3(),
            DotRole::X4 => self.x4(),
            DotRole::X5 => self.x5(),
            DotRole::Slot(k) => self.slot(k as usize),
        }
    }

    /// Fixed dots in the order x0, x1, x3, x4, x5.
    pub fn fixed_points(&self) -> [(DotRole, Point); 5] {
        [
            (DotRole::X0, self.x0()),
            (DotRole::X1, self.x1()),
            (DotRole::X3, self.x3()),
            (DotRole::X4, self.x4()),
            (DotRole::X5, self.x5()),
        ]
    }

    /// Structural checks every usable template must pass: axis geometry,
    /// side dots on opposite sides, 22 finite slots, dots inside bounds.
    pub fn check_structure(&self) -> Result<(), CodebookError> {
        let bad = |m: String| Err(CodebookError::Template(m));
        if self.code_slots.len() != SLOT_COUNT {
            return bad(format!("expected {SLOT_COUNT} code slots, found {}", self.code_slots.len()));
        }
        if !(self.dot_radius > 0.0) || !(self.bounds[0] < self.bounds[1]) {
            return bad("dot_radius must be > 0 and bounds ascending".into());
        }
        let all: Vec<Point> = self
            .fixed_points()
            .iter()
            .map(|&(_, p)| p)
            .chain((0..SLOT_COUNT).map(|k| self.slot(k)))
            .collect();
        if all.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return bad("coordinates must be finite".into());
        }
        let (lo, hi) = (self.bounds[0] + self.dot_radius, self.bounds[1] - self.dot_radius);
        if all.iter().any(|p| p.x < lo || p.x > hi || p.y < lo || p.y > hi) {
            return bad("a dot disk extends outside the bounds".into());
        }
        let (x0, x1, x3) = (self.x0(), self.x1(), self.x3());
        let axis = x3 - x1;
        if cross(x1, x3, x0).abs() > 1e-12 * axis.norm_squared() {
            return bad("x1, x0 and x3 are not collinear".into());
        }
        if (x1 - x0).dot(&(x3 - x0)) >= 0.0 {
            return bad("x0 does not lie strictly between x1 and x3".into());
        }
        if (x1 - x0).norm() <= (x3 - x0).norm() {
            return bad("|x1 - x0| must exceed |x3 - x0|".into());
        }
        let s4 = cross(x1, x3, self.x4());
        let s5 = cross(x1, x3, self.x5());
        if !(s4 > 0.0 && s5 < 0.0) {
            return bad("x4 must lie on the positive side of the x1->x3 line and x5 on the negative side".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("template serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, CodebookError> {
        let t: Self = toml::from_str(text).map_err(|e| CodebookError::Template(e.to_string()))?;
        t.check_structure()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, CodebookError> {
        let text = std::fs::read_to_string(path).map_err(|source| CodebookError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }
}

/// Three distinct code slots, stored sorted, with their rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Codeword {
    slots: [u8; 3],
    id: u16,
}

fn choose(n: u32, k: u32) -> u32 {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

impl Codeword {
    pub fn from_slots(slots: [u8; 3]) -> Result<Self, CodebookError> {
        let id = rank(slots)?;
        let mut sorted = slots;
        sorted.sort_unstable();
        Ok(Self { slots: sorted, id })
    }

    pub fn from_id(id: u16) -> Result<Self, CodebookError> {
        Ok(Self {
            slots: unrank(id)?,
            id,
        })
    }

    pub fn slots(&self) -> [u8; 3] {
        self.slots
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    /// All 1540 codewords in id order.
    pub fn all() -> impl Iterator<Item = Codeword> {
        (0..CODEWORD_COUNT).map(|id| Codeword::from_id(id).expect("id in range"))
    }
}

/// Lexicographic rank of the sorted triple among all C(22, 3) triples.
pub fn rank(slots: [u8; 3]) -> Result<u16, CodebookError> {
    let mut s = slots;
    s.sort_unstable();
    if s[0] == s[1] || s[1] == s[2] || s[2] as usize >= SLOT_COUNT {
        return Err(CodebookError::InvalidSlots(slots));
    }
    let n = SLOT_COUNT as u32;
    let (a, b, c) = (s[0] as u32, s[1] as u32, s[2] as u32);
    let mut r = 0;
    // Triples whose first element is smaller than a.
    for i in 0..a {
        r += choose(n - 1 - i, 2);
    }
    // Same first element, smaller second element.
    for j in a + 1..b {
        r += n - 1 - j;
    }
    r += c - b - 1;
    Ok(r as u16)
}

pub fn unrank(id: u16) -> Result<[u8; 3], CodebookError> {
    if id >= CODEWORD_COUNT {
        return Err(CodebookError::IdOutOfRange(id as u32));
    }
    let n = SLOT_COUNT as u32;
    let mut r = id as u32;
    let mut a = 0;
    while r >= choose(n - 1 - a, 2) {
        r -= choose(n - 1 - a, 2);
        a += 1;
    }
    let mut b = a + 1;
    while r >= n - 1 - b {
        r -= n - 1 - b;
        b += 1;
    }
    let c = b + 1 + r;
    Ok([a as u8, b as u8, c as u8])
}

/// The five fixed dots followed by the codeword's three slots.
pub fn marker_dot_positions(template: &MarkerTemplate, codeword: &Codeword) -> Vec<(DotRole, Point)> {
    let mut out: Vec<(DotRole, Point)> = template.fixed_points().to_vec();
    out.extend(
        codeword
            .slots()
            .iter()
            .map(|&k| (DotRole::Slot(k), template.slot(k as usize))),
    );
    out
}

/// Margins of the decoder's identification rules, minimized over every
/// codeword.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub codewords_checked: usize,
    pub collinearity_tol_deg: f64,
    /// Second-smallest minus smallest total distance, with x0 required to
    /// be the smallest (negative when another dot wins).
    pub center_margin: f64,
    /// Smallest deviation from collinearity of any straddling pair other
    /// than (x1, x3).
    pub axis_margin_deg: f64,
    /// Nearest code slot distance to x1 over the farther of x4, x5.
    pub x1_gap_ratio: f64,
    pub min_separation: f64,
    pub center_failures: usize,
    pub axis_failures: usize,
    pub side_failures: usize,
    pub pass: bool,
}

/// Angle in degrees between `u` and `v`.
pub(crate) fn angle_between_deg(u: nalgebra::Vector2<f64>, v: nalgebra::Vector2<f64>) -> f64 {
    let c = u.x * v.y - u.y * v.x;
    c.abs().atan2(u.dot(&v)).to_degrees()
}

pub fn validate_codebook(template: &MarkerTemplate, collinearity_tol_deg: f64) -> ValidationReport {
    let mut center_margin = f64::INFINITY;
    let mut axis_margin = f64::INFINITY;
    let mut min_sep = f64::INFINITY;
    let (mut center_failures, mut axis_failures, mut side_failures) = (0, 0, 0);
    let x0 = template.x0();

    for cw in Codeword::all() {
        let dots = marker_dot_positions(template, &cw);
        let pts: Vec<Point> = dots.iter().map(|d| d.1).collect();

        // Lowest total distance must single out x0 (index 0).
        let totals: Vec<f64> = pts
            .iter()
            .map(|p| pts.iter().map(|q| (p - q).norm()).sum())
            .collect();
        let rival = totals[1..].iter().copied().fold(f64::INFINITY, f64::min);
        let margin = rival - totals[0];
        if margin <= 0.0 {
            center_failures += 1;
        }
        center_margin = center_margin.min(margin);

        // Straddling pairs: only (x1, x3) may be collinear with x0.
        let mut runner_up = f64::INFINITY;
        for i in 1..8 {
            for j in i + 1..8 {
                let (u, w) = (pts[i] - x0, pts[j] - x0);
                if u.dot(&w) >= 0.0 || (i, j) == (1, 2) {
                    continue;
                }
                runner_up = runner_up.min(angle_between_deg(u, -w));
            }
        }
        if runner_up <= angle_between_deg(pts[1] - x0, x0 - pts[2]) {
            axis_failures += 1;
        }
        axis_margin = axis_margin.min(runner_up);

        // x4 and x5 must be the two dots nearest to x1 among the remainder.
        let x1 = pts[1];
        let mut rest: Vec<(f64, usize)> = (3..8).map(|k| ((pts[k] - x1).norm(), k)).collect();
        rest.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut nearest = [rest[0].1, rest[1].1];
        nearest.sort_unstable();
        if nearest != [3, 4] || rest[1].0 == rest[2].0 {
            side_failures += 1;
        }

        for i in 0..8 {
            for j in i + 1..8 {
                min_sep = min_sep.min((pts[i] - pts[j]).norm());
            }
        }
    }

    let x1 = template.x1();
    let nearest_slot = (0..SLOT_COUNT)
        .map(|k| (template.slot(k) - x1).norm())
        .fold(f64::INFINITY, f64::min);
    let side_reach = (template.x4() - x1).norm().max((template.x5() - x1).norm());
    let x1_gap_ratio = nearest_slot / side_reach;

    let pass = center_margin > 0.0
        && axis_margin >= 2.0 * collinearity_tol_deg
        && x1_gap_ratio > 1.15
        && min_sep > 2.0 * template.dot_radius
        && center_failures == 0
        && axis_failures == 0
        && side_failures == 0;
    ValidationReport {
        codewords_checked: CODEWORD_COUNT as usize,
        collinearity_tol_deg,
        center_margin,
        axis_margin_deg: axis_margin,
        x1_gap_ratio,
        min_separation: min_sep,
        center_failures,
        axis_failures,
        side_failures,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enumerated() -> Vec<[u8; 3]> {
        let mut out = Vec::new();
        for a in 0..22u8 {
            for b in a + 1..22 {
                for c in b + 1..22 {
                    out.push([a, b, c]);
                }
            }
        }
        out
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank([0, 1, 2]).unwrap(), 0);
        assert_eq!(rank([0, 1, 3]).unwrap(), 1);
        assert_eq!(rank([19, 20, 21]).unwrap(), 1539);
        assert_eq!(rank([2, 0, 1]).unwrap(), 0);
        assert_eq!(unrank(0).unwrap(), [0, 1, 2]);
        assert_eq!(unrank(1539).unwrap(), [19, 20, 21]);
    }

    #[test]
    fn rank_matches_enumeration_order() {
        let all = enumerated();
        assert_eq!(all.len(), CODEWORD_COUNT as usize);
        for (i, t) in all.iter().enumerate() {
            assert_eq!(rank(*t).unwrap() as usize, i);
            assert_eq!(unrank(i as u16).unwrap(), *t);
        }
    }

    #[test]
    fn rank_rejects_bad_input() {
        assert!(matches!(rank([1, 1, 2]), Err(CodebookError::InvalidSlots(_))));
        assert!(matches!(rank([0, 5, 22]), Err(CodebookError::InvalidSlots(_))));
        assert!(matches!(unrank(1540), Err(CodebookError::IdOutOfRange(1540))));
    }

    #[test]
    fn marker_positions_are_eight_distinct_dots() {
        let t = canonical_template();
        let first = marker_dot_positions(&t, &Codeword::from_id(0).unwrap());
        let roles: Vec<DotRole> = first.iter().map(|d| d.0).collect();
        assert_eq!(
            roles,
            [
                DotRole::X0,
                DotRole::X1,
                DotRole::X3,
                DotRole::X4,
                DotRole::X5,
                DotRole::Slot(0),
                DotRole::Slot(1),
                DotRole::Slot(2)
            ]
        );
        let last = marker_dot_positions(&t, &Codeword::from_id(1539).unwrap());
        assert_eq!(last[5..].iter().map(|d| d.0).collect::<Vec<_>>(), [DotRole::Slot(19), DotRole::Slot(20), DotRole::Slot(21)]);
        for cw in Codeword::all() {
            let dots = marker_dot_positions(&t, &cw);
            assert_eq!(dots.len(), 8);
            for i in 0..8 {
                for j in i + 1..8 {
                    assert!((dots[i].1 - dots[j].1).norm() > 2.0 * t.dot_radius);
                }
            }
        }
    }

    #[test]
    fn canonical_structure() {
        let t = canonical_template();
        t.check_structure().unwrap();
        assert!((t.x1() - t.x0()).norm() > (t.x3() - t.x0()).norm());
        assert_eq!(t.x1().y, 0.0);
        assert_eq!(t.x3().y, 0.0);
    }

    #[test]
    fn no_slot_near_the_axis_direction() {
        let t = canonical_template();
        for k in 0..SLOT_COUNT {
            let d = t.slot(k) - t.x0();
            let off_axis = d.y.abs().atan2(d.x.abs()).to_degrees();
            assert!(off_axis > 1.5, "slot {k} is {off_axis}° off the axis");
        }
    }

    #[test]
    fn template_toml_round_trip() {
        let t = canonical_template();
        let text = t.to_toml();
        assert_eq!(MarkerTemplate::from_toml(&text).unwrap(), t);
    }

    #[test]
    fn structure_violations_are_reported() {
        let mut t = canonical_template();
        t.fixed.x3 = [t.fixed.x3[0], 0.01];
        assert!(matches!(t.check_structure(), Err(CodebookError::Template(_))));
        let mut t = canonical_template();
        t.fixed.x5 = [t.fixed.x5[0], -t.fixed.x5[1]];
        assert!(t.check_structure().is_err());
        let mut t = canonical_template();
        t.code_slots.pop();
        assert!(t.check_structure().is_err());
        let mut t = canonical_template();
        std::mem::swap(&mut t.fixed.x1, &mut t.fixed.x3);
        assert!(t.check_structure().is_err());
        assert!(MarkerTemplate::from_toml("dot_radius = 1").is_err());
    }

    /// Independent margin computation: per codeword, sort all totals and
    /// compare the two smallest, or report a negative margin when x0 is not
    /// first.
    fn oracle_center_margin(t: &MarkerTemplate) -> f64 {
        let mut worst = f64::INFINITY;
        for s in enumerated() {
            let mut pts = vec![t.x0(), t.x1(), t.x3(), t.x4(), t.x5()];
            pts.extend(s.iter().map(|&k| t.slot(k as usize)));
            let mut totals: Vec<(f64, usize)> = (0..8)
                .map(|i| ((0..8).map(|j| (pts[i] - pts[j]).norm()).sum::<f64>(), i))
                .collect();
            totals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let m = if totals[0].1 == 0 {
                totals[1].0 - totals[0].0
            } else {
                totals[0].0 - totals.iter().find(|x| x.1 == 0).unwrap().0
            };
            worst = worst.min(m);
        }
        worst
    }

    #[test]
    fn canonical_template_validates() {
        let t = canonical_template();
        let r = validate_codebook(&t, 1.5);
        assert!(r.pass, "{r:?}");
        assert_eq!(r.codewords_checked, 1540);
        assert!((r.center_margin - oracle_center_margin(&t)).abs() < 1e-12);
        assert!(r.center_margin > 0.1);
        assert!(r.axis_margin_deg >= 4.0);
        assert!(r.x1_gap_ratio >= 1.2);
        assert!(r.min_separation >= 0.12);
    }

    #[test]
    fn slot_on_axis_fails_axis_rule() {
        let mut t = canonical_template();
        t.code_slots[0] = [0.5, 0.0];
        let r = validate_codebook(&t, 1.5);
        assert!(!r.pass);
        assert!(r.axis_margin_deg < 1e-9);
        assert!(r.axis_failures > 0);
    }

    #[test]
    fn wide_tolerance_fails() {
        let r = validate_codebook(&canonical_template(), 10.0);
        assert!(!r.pass);
        assert!(r.axis_margin_deg < 20.0);
    }

    #[test]
    fn side_dot_pulled_to_center_breaks_center_rule() {
        let mut t = canonical_template();
        // A side dot next to x0 wins the lowest-total rule for some codes.
        t.fixed.x4 = [-0.1, 0.12];
        let r = validate_codebook(&t, 1.5);
        assert!(!r.pass);
        assert!(r.center_margin < 0.0 && r.center_failures > 0);
        assert!((r.center_margin - oracle_center_margin(&t)).abs() < 1e-12);
    }

    #[test]
    fn crowded_x1_fails_gap_rule() {
        let mut t = canonical_template();
        let x1 = t.x1();
        t.code_slots[5] = [x1.x + 0.15, x1.y + 0.02];
        let r = validate_codebook(&t, 1.5);
        assert!(!r.pass);
        assert!(r.x1_gap_ratio < 1.0);
        assert!(r.side_failures > 0);
    }
}
