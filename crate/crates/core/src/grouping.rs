//! Grouping of dot centers into 8-dot marker candidates.
//!
//! A static 2-D k-d tree answers the nearest-neighbor queries. Every dot
//! proposes itself plus its seven nearest neighbors as a candidate; cheap
//! size gates prune obvious misfits and the decoder validates the rest.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::geometry::Point;

/// Dots per marker.
pub const MARKER_DOTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DotCandidate {
    pub center: Point,
    pub mean_diameter_px: f64,
    pub source_contour_index: usize,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    point: usize,
    axis: u8,
    split: f64,
}

/// Static 2-D k-d tree. Nodes are stored in implicit in-order layout: the
/// median of `nodes[lo..hi]` sits at `(lo + hi) / 2`.
#[derive(Debug, Clone)]
pub struct KdTree2 {
    points: Vec<Point>,
    nodes: Vec<Node>,
}

/// Result of a k-nearest query.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors {
    /// `(index, distance)` pairs, ascending by distance then index.
    pub items: Vec<(usize, f64)>,
    /// Fewer than `k` points were indexed.
    pub short: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn coord(p: &Point, axis: u8) -> f64 {
    if axis == 0 {
        p.x
    } else {
        p.y
    }
}

impl KdTree2 {
    pub fn new(points: Vec<Point>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = vec![
            Node {
                point: 0,
                axis: 0,
                split: 0.0
            };
            points.len()
        ];
        Self::build(&points, &mut order, &mut nodes, 0, 0);
        Self { points, nodes }
    }

    pub fn from_dots(dots: &[DotCandidate]) -> Self {
        Self::new(dots.iter().map(|d| d.center).collect())
    }

    fn build(points: &[Point], order: &mut [usize], nodes: &mut [Node], offset: usize, depth: usize) {
        if order.is_empty() {
            return;
        }
        let axis = (depth % 2) as u8;
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            coord(&points[a], axis)
                .total_cmp(&coord(&points[b], axis))
                .then(a.cmp(&b))
        });
        let point = order[mid];
        nodes[offset + mid] = Node {
            point,
            axis,
            split: coord(&points[point], axis),
        };
        let (left, right) = order.split_at_mut(mid);
        Self::build(points, left, nodes, offset, depth + 1);
        Self::build(points, &mut right[1..], nodes, offset + mid + 1, depth + 1);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> Point {
        self.points[index]
    }

    /// The `k` nearest indexed points; ties are broken by lower index.
    pub fn knn(&self, query: Point, k: usize) -> Neighbors {
        assert!(k >= 1, "k must be at least 1");
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, self.nodes.len(), query, k, &mut heap);
        let mut items: Vec<Candidate> = heap.into_vec();
        items.sort();
        Neighbors {
            items: items.iter().map(|c| (c.index, c.dist2.sqrt())).collect(),
            short: self.points.len() < k,
        }
    }

    fn knn_rec(&self, lo: usize, hi: usize, q: Point, k: usize, heap: &mut BinaryHeap<Candidate>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let node = self.nodes[mid];
        let cand = Candidate {
            dist2: (self.points[node.point] - q).norm_squared(),
            index: node.point,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().expect("heap is full") {
            heap.pop();
            heap.push(cand);
        }
        let diff = coord(&q, node.axis) - node.split;
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_rec(near.0, near.1, q, k, heap);
        // `<=` keeps equal-distance points on the far side reachable for the
        // index tie-break.
        if heap.len() < k || diff * diff <= heap.peek().expect("non-empty").dist2 {
            self.knn_rec(far.0, far.1, q, k, heap);
        }
    }

    /// Every indexed point within `radius` (inclusive), ascending by distance
    /// then index.
    pub fn within_radius(&self, query: Point, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.radius_rec(0, self.nodes.len(), query, radius * radius, &mut out);
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }

    fn radius_rec(&self, lo: usize, hi: usize, q: Point, r2: f64, out: &mut Vec<(f64, usize)>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let node = self.nodes[mid];
        let d2 = (self.points[node.point] - q).norm_squared();
        if d2 <= r2 {
            out.push((d2, node.point));
        }
        let diff = coord(&q, node.axis) - node.split;
        if diff <= 0.0 || diff * diff <= r2 {
            self.radius_rec(lo, mid, q, r2, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.radius_rec(mid + 1, hi, q, r2, out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupingParams {
    /// Neighbors gathered around each seed dot.
    pub k_neighbors: usize,
    /// Group span bound in multiples of the median dot diameter.
    pub max_span_factor: f64,
    /// Bound on largest / smallest dot diameter within a group.
    pub max_diameter_ratio: f64,
}

impl Default for GroupingParams {
    fn default() -> Self {
        Self {
            k_neighbors: 7,
            max_span_factor: 40.0,
            max_diameter_ratio: 3.0,
        }
    }
}

impl GroupingParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.k_neighbors == 0 {
            return Err("k_neighbors must be positive".into());
        }
        if !(self.max_span_factor > 0.0) || !(self.max_diameter_ratio > 0.0) {
            return Err("grouping gates must be positive".into());
        }
        Ok(())
    }
}

/// Eight dots that may form one marker.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerCandidate {
    pub dots: Vec<DotCandidate>,
    /// Sorted indices of the member dots in the input dot list.
    pub canonical_key: Vec<usize>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// One candidate per seed dot: the seed plus its `k_neighbors` nearest
/// neighbors, kept when the group has exactly eight members and passes the
/// span and diameter-ratio gates. Output order follows the first seed that
/// produced each group.
pub fn cluster_markers(
    dots: &[DotCandidate],
    tree: &KdTree2,
    params: &GroupingParams,
) -> Vec<MarkerCandidate> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (seed, dot) in dots.iter().enumerate() {
        let nn = tree.knn(dot.center, params.k_neighbors + 1);
        let mut members: Vec<usize> = nn.items.iter().map(|&(i, _)| i).collect();
        if !members.contains(&seed) {
            // Duplicate centers can push the seed out of its own query.
            members.pop();
            members.push(seed);
        }
        if members.len() != MARKER_DOTS {
            continue;
        }
        members.sort_unstable();

        let group: Vec<DotCandidate> = members.iter().map(|&i| dots[i]).collect();
        let mut diameters: Vec<f64> = group.iter().map(|d| d.mean_diameter_px).collect();
        let med = median(&mut diameters);
        let (dmin, dmax) = (diameters[0], diameters[MARKER_DOTS - 1]);
        if !(dmin > 0.0) || dmax / dmin > params.max_diameter_ratio {
            continue;
        }
        let span = group
            .iter()
            .enumerate()
            .flat_map(|(i, a)| group[i + 1..].iter().map(move |b| (a.center - b.center).norm()))
            .fold(0.0, f64::max);
        if span > params.max_span_factor * med {
            continue;
        }
        if seen.insert(members.clone()) {
            out.push(MarkerCandidate {
                dots: group,
                canonical_key: members,
            });
        }
    }
    out
}
