//! Seeded synthetic batches and detection scoring.

use std::collections::BTreeMap;
use std::time::Instant;

use ct_kit::codebook::{DotRole, CODEWORD_COUNT};
use ct_kit::pipeline::detect;
use ct_kit::synth::{render_multi, GroundTruth, RenderParams, ScenePose, SynthError};
use ct_kit::{MarkerTemplate, PipelineConfig, Point};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::report::BENCH_SCHEMA;

pub const SCENE_WIDTH: usize = 800;
pub const SCENE_HEIGHT: usize = 600;
/// A decoded x0 within this fraction of the marker scale of the true x0
/// counts as a detection of that marker.
pub const MATCH_TOL_SCALE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Frontal,
    Oblique,
    Blank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub kind: SceneKind,
    pub index: usize,
    pub markers: Vec<(u16, ScenePose)>,
    pub render: RenderParams,
}

fn random_pose(rng: &mut ChaCha8Rng, tilt: (f64, f64), scale: (f64, f64)) -> ScenePose {
    let tilt_deg = if tilt.1 > tilt.0 { rng.random_range(tilt.0..tilt.1) } else { tilt.0 };
    ScenePose {
        tilt_deg,
        roll_deg: rng.random_range(0.0..360.0),
        scale_px: rng.random_range(scale.0..scale.1),
        center_px: [
            SCENE_WIDTH as f64 / 2.0 + rng.random_range(-10.0..10.0),
            SCENE_HEIGHT as f64 / 2.0 + rng.random_range(-10.0..10.0),
        ],
        perspective_strength: 3.0,
    }
}

/// One marker per image: random id, roll and scale in `scale_range`, tilt
/// uniform in `tilt_range`.
pub fn single_marker_scenes(
    kind: SceneKind,
    count: usize,
    tilt_range: (f64, f64),
    scale_range: (f64, f64),
    seed: u64,
) -> Vec<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|index| {
            let id = rng.random_range(0..CODEWORD_COUNT);
            let pose = random_pose(&mut rng, tilt_range, scale_range);
            Scene {
                kind,
                index,
                markers: vec![(id, pose)],
                render: RenderParams {
                    width: SCENE_WIDTH,
                    height: SCENE_HEIGHT,
                    seed: rng.next_u64(),
                    ..RenderParams::default()
                },
            }
        })
        .collect()
}

pub fn blank_scenes(count: usize, seed: u64) -> Vec<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|index| Scene {
            kind: SceneKind::Blank,
            index,
            markers: Vec::new(),
            render: RenderParams {
                width: SCENE_WIDTH,
                height: SCENE_HEIGHT,
                seed: rng.next_u64(),
                ..RenderParams::default()
            },
        })
        .collect()
}

/// Near-frontal markers with distinct random ids centered in a `cols` by
/// `rows` grid of equal cells.
pub fn grid_scene(
    width: usize,
    height: usize,
    cols: usize,
    rows: usize,
    scale_px: f64,
    max_tilt_roll_deg: f64,
    seed: u64,
) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cw, ch) = (width as f64 / cols as f64, height as f64 / rows as f64);
    let mut markers: Vec<(u16, ScenePose)> = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            let mut id = rng.random_range(0..CODEWORD_COUNT);
            while markers.iter().any(|m| m.0 == id) {
                id = rng.random_range(0..CODEWORD_COUNT);
            }
            let pose = ScenePose {
                tilt_deg: rng.random_range(0.0..=max_tilt_roll_deg),
                roll_deg: rng.random_range(0.0..=max_tilt_roll_deg),
                scale_px,
                center_px: [(c as f64 + 0.5) * cw, (r as f64 + 0.5) * ch],
                perspective_strength: 3.0,
            };
            markers.push((id, pose));
        }
    }
    Scene {
        kind: SceneKind::Frontal,
        index: 0,
        markers,
        render: RenderParams {
            width,
            height,
            seed: rng.next_u64(),
            ..RenderParams::default()
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerOutcome {
    pub truth_id: u16,
    pub tilt_deg: f64,
    pub detected: bool,
    pub decoded_id: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOutcome {
    pub kind: SceneKind,
    pub index: usize,
    pub markers: Vec<MarkerOutcome>,
    pub false_positives: usize,
    pub seconds: f64,
}

/// Pairs decoded markers with ground truth by x0 position.
pub fn score(truths: &[GroundTruth], decoded: &[(u16, Point)]) -> (Vec<MarkerOutcome>, usize) {
    let mut used = vec![false; decoded.len()];
    let outcomes = truths
        .iter()
        .map(|t| {
            let x0 = t.center_of(DotRole::X0).expect("truth carries x0");
            let tol = MATCH_TOL_SCALE * t.pose.scale_px;
            let mut hit: Option<u16> = None;
            for (k, &(id, p)) in decoded.iter().enumerate() {
                if (p - x0).norm() <= tol {
                    used[k] = true;
                    // Prefer a correct decode if several candidates land here.
                    if hit.is_none() || id == t.id {
                        hit = Some(id);
                    }
                }
            }
            MarkerOutcome {
                truth_id: t.id,
                tilt_deg: t.pose.tilt_deg,
                detected: hit.is_some(),
                decoded_id: hit,
            }
        })
        .collect();
    let false_positives = used.iter().filter(|u| !**u).count();
    (outcomes, false_positives)
}

pub fn run_scene(
    scene: &Scene,
    template: &MarkerTemplate,
    config: &PipelineConfig,
) -> Result<SceneOutcome, SynthError> {
    let (img, truths) = render_multi(template, &scene.markers, &scene.render)?;
    let start = Instant::now();
    let det = detect(&img, template, config).expect("config validated by caller");
    let seconds = start.elapsed().as_secs_f64();
    let decoded: Vec<(u16, Point)> = det.markers.iter().map(|m| (m.id, m.labeled_dots[0].1)).collect();
    let (markers, false_positives) = score(&truths, &decoded);
    Ok(SceneOutcome {
        kind: scene.kind,
        index: scene.index,
        markers,
        false_positives,
        seconds,
    })
}

pub fn run_scenes(
    scenes: &[Scene],
    template: &MarkerTemplate,
    config: &PipelineConfig,
) -> Result<Vec<SceneOutcome>, SynthError> {
    scenes.par_iter().map(|s| run_scene(s, template, config)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub markers: usize,
    pub detected: usize,
    pub correct: usize,
    pub detection_rate: f64,
    pub decode_accuracy: f64,
}

impl RateSummary {
    fn add(&mut self, m: &MarkerOutcome) {
        self.markers += 1;
        if m.detected {
            self.detected += 1;
            if m.decoded_id == Some(m.truth_id) {
                self.correct += 1;
            }
        }
    }

    fn finish(mut self) -> Self {
        self.detection_rate = ratio(self.detected, self.markers);
        self.decode_accuracy = ratio(self.correct, self.detected);
        self
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub schema: String,
    pub seed: u64,
    pub frontal: RateSummary,
    pub oblique: RateSummary,
    pub overall: RateSummary,
    pub false_positives: usize,
    /// Keyed by the lower edge of each 5° tilt bin.
    pub per_tilt: BTreeMap<String, RateSummary>,
    pub mean_seconds_per_image: f64,
}

pub fn summarize(seed: u64, outcomes: &[SceneOutcome]) -> BenchSummary {
    let (mut frontal, mut oblique, mut overall) = Default::default();
    let mut per_tilt: BTreeMap<String, RateSummary> = BTreeMap::new();
    let mut false_positives = 0;
    for o in outcomes {
        false_positives += o.false_positives;
        for m in &o.markers {
            match o.kind {
                SceneKind::Frontal => RateSummary::add(&mut frontal, m),
                SceneKind::Oblique => RateSummary::add(&mut oblique, m),
                SceneKind::Blank => {}
            }
            RateSummary::add(&mut overall, m);
            let bin = (m.tilt_deg / 5.0).floor() * 5.0;
            per_tilt.entry(format!("{bin:02.0}")).or_default().add(m);
        }
    }
    let secs: f64 = outcomes.iter().map(|o| o.seconds).sum();
    BenchSummary {
        schema: BENCH_SCHEMA.to_string(),
        seed,
        frontal: RateSummary::finish(frontal),
        oblique: RateSummary::finish(oblique),
        overall: RateSummary::finish(overall),
        false_positives,
        per_tilt: per_tilt.into_iter().map(|(k, v)| (k, v.finish())).collect(),
        mean_seconds_per_image: if outcomes.is_empty() { 0.0 } else { secs / outcomes.len() as f64 },
    }
}

#[derive(Debug, Serialize)]
struct CsvRow {
    kind: SceneKind,
    index: usize,
    truth_id: Option<u16>,
    tilt_deg: String,
    detected: bool,
    decoded_id: Option<u16>,
    correct: bool,
    false_positives: usize,
}

pub fn write_csv<W: std::io::Write>(out: W, outcomes: &[SceneOutcome]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for o in outcomes {
        if o.markers.is_empty() {
            w.serialize(CsvRow {
                kind: o.kind,
                index: o.index,
                truth_id: None,
                tilt_deg: String::new(),
                detected: false,
                decoded_id: None,
                correct: false,
                false_positives: o.false_positives,
            })?;
        }
        for m in &o.markers {
            w.serialize(CsvRow {
                kind: o.kind,
                index: o.index,
                truth_id: Some(m.truth_id),
                tilt_deg: format!("{:.3}", m.tilt_deg),
                detected: m.detected,
                decoded_id: m.decoded_id,
                correct: m.decoded_id == Some(m.truth_id),
                false_positives: o.false_positives,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
