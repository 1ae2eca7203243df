//! Command implementations behind the `ct-kit` binary.

pub mod bench;
pub mod io;
pub mod overlay;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ct_kit::codebook::{validate_codebook, CODEWORD_COUNT};
use ct_kit::pipeline::{detect, PipelineError};
use ct_kit::synth::{render, RenderParams, ScenePose, SynthError};
use ct_kit::{canonical_template, MarkerTemplate, PipelineConfig};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{blank_scenes, run_scenes, single_marker_scenes, summarize, SceneKind};
use crate::report::{
    round_to, DetectionReport, ImageReport, LabeledCenter, ValidationOutput, TRUTH_SCHEMA,
    VALIDATION_SCHEMA,
};

pub const THREADS_ENV: &str = "CT_KIT_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read image {path}: {message}")]
    Image { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config {path}: {source}")]
    Config { path: String, source: PipelineError },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Template(#[from] ct_kit::codebook::CodebookError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid {THREADS_ENV}: {0}")]
    Threads(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "ct-kit", version, about = "Detect, decode and synthesize dot-distribution coded targets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect and decode markers in one or more images.
    Detect(DetectArgs),
    /// Render synthetic marker images with ground truth.
    Generate(GenerateArgs),
    /// Measure detection rate and decode accuracy on seeded synthetic batches.
    Bench(BenchArgs),
    /// Brute-force check of the identification rules over all codewords.
    ValidateCodebook(ValidateArgs),
    /// Print the canonical marker template.
    Template,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Input images (PNG, PGM or PPM).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Pipeline configuration (TOML, flat keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Treat bright dots on a dark ground as foreground.
    #[arg(long)]
    pub invert: bool,
    /// Marker template (TOML); defaults to the canonical layout.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Directory for annotated PNG overlays.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Codeword id; random per image when omitted.
    #[arg(long)]
    pub id: Option<u32>,
    #[arg(long, default_value_t = 0.0)]
    pub tilt: f64,
    #[arg(long, default_value_t = 0.0)]
    pub roll: f64,
    #[arg(long, default_value_t = 120.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 4.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub template: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 200)]
    pub frontal_count: usize,
    #[arg(long, default_value_t = 200)]
    pub oblique_count: usize,
    /// Oblique tilt range in degrees, as `lo,hi`.
    #[arg(long, default_value = "50,65", value_parser = parse_range)]
    pub tilt_range: (f64, f64),
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Blank noisy panels used to count false positives.
    #[arg(long, default_value_t = 0)]
    pub blank_count: usize,
    /// Per-marker CSV table; stdout summary only when omitted.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Summary JSON path; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub template: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Collinearity tolerance in degrees.
    #[arg(long, default_value_t = 1.5)]
    pub tolerance: f64,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if !(lo <= hi) {
        return Err("range must satisfy lo <= hi".into());
    }
    Ok((lo, hi))
}

/// Worker pool sized by `CT_KIT_THREADS` when set.
pub fn worker_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Threads(v.clone()))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Threads(e.to_string()))
}

pub fn load_template(path: Option<&Path>) -> Result<(MarkerTemplate, String), CliError> {
    match path {
        Some(p) => Ok((MarkerTemplate::load(p)?, p.display().to_string())),
        None => Ok((canonical_template(), "canonical".to_string())),
    }
}

pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    let Some(p) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = fs::read_to_string(p).map_err(io_err(p))?;
    PipelineConfig::from_toml(&text).map_err(|source| CliError::Config {
        path: p.display().to_string(),
        source,
    })
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(io_err(p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn cmd_detect(args: &DetectArgs) -> Result<DetectionReport, CliError> {
    let config = load_config(args.config.as_deref())?;
    let (template, template_name) = load_template(args.template.as_deref())?;
    if let Some(dir) = &args.overlay {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let pool = worker_pool()?;
    // Indexed collect keeps report order equal to input order.
    let images: Vec<ImageReport> = pool.install(|| {
        args.inputs
            .par_iter()
            .map(|path| -> Result<ImageReport, CliError> {
                let mut img = io::load_gray(path)?;
                if args.invert {
                    img = img.inverted();
                }
                let det = detect(&img, &template, &config)?;
                if let Some(dir) = &args.overlay {
                    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
                    let centers: Vec<_> = det.dots.iter().map(|d| d.center).collect();
                    let drawn = overlay::draw(&img, &centers, &det.markers);
                    io::save_rgb(&drawn, &dir.join(format!("{stem}_overlay.png")))?;
                }
                Ok(ImageReport::new(path.display().to_string(), img.width(), img.height(), &det))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let report = DetectionReport::new(template_name, args.invert, config, images);
    write_or_print(args.output.as_deref(), &report.to_json())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub schema: String,
    pub image: String,
    pub id: u16,
    pub slots: [u8; 3],
    pub pose: ScenePose,
    /// Image-from-template homography, row-major.
    pub homography: [f64; 9],
    pub dots: Vec<LabeledCenter>,
}

/// Renders `count` images; returns the written image paths.
pub fn cmd_generate(args: &GenerateArgs) -> Result<Vec<PathBuf>, CliError> {
    if let Some(id) = args.id {
        if id >= CODEWORD_COUNT as u32 {
            return Err(CliError::Argument(format!("id {id} outside 0..{CODEWORD_COUNT}")));
        }
    }
    if !(args.noise >= 0.0) {
        return Err(CliError::Argument("noise must be non-negative".into()));
    }
    let (template, _) = load_template(args.template.as_deref())?;
    fs::create_dir_all(&args.out_dir).map_err(io_err(&args.out_dir))?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let roll = args.roll.rem_euclid(360.0);
    let mut written = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let id = match args.id {
            Some(id) => id as u16,
            None => rng.random_range(0..CODEWORD_COUNT),
        };
        let params = RenderParams {
            noise_sigma: args.noise,
            seed: rng.next_u64(),
            ..RenderParams::default()
        };
        let pose = ScenePose {
            tilt_deg: args.tilt,
            roll_deg: roll,
            scale_px: args.scale,
            center_px: [params.width as f64 / 2.0, params.height as f64 / 2.0],
            perspective_strength: 3.0,
        };
        let (img, truth) = render(&template, id, &pose, &params)?;
        let stem = format!(
            "ct_{i:04}_id{id:04}_tilt{:.1}_roll{:.1}_scale{:.1}",
            args.tilt, roll, args.scale
        );
        let img_path = args.out_dir.join(format!("{stem}.png"));
        io::save_gray(&img, &img_path)?;
        let record = TruthRecord {
            schema: TRUTH_SCHEMA.to_string(),
            image: format!("{stem}.png"),
            id,
            slots: ct_kit::Codeword::from_id(id)?.slots(),
            pose,
            homography: truth.homography.map(|v| round_to(v, 9)),
            dots: truth
                .dots
                .iter()
                .map(|d| LabeledCenter {
                    label: d.role.to_string(),
                    x: round_to(d.x, 6),
                    y: round_to(d.y, 6),
                })
                .collect(),
        };
        let truth_path = args.out_dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&record).expect("truth serializes") + "\n";
        fs::write(&truth_path, text).map_err(io_err(&truth_path))?;
        written.push(img_path);
    }
    Ok(written)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<bench::BenchSummary, CliError> {
    let config = load_config(args.config.as_deref())?;
    config.validate()?;
    let (template, _) = load_template(args.template.as_deref())?;
    // Independent streams per batch so changing one count leaves the other
    // batches unchanged.
    let mut scenes = single_marker_scenes(SceneKind::Frontal, args.frontal_count, (0.0, 15.0), (100.0, 160.0), args.seed);
    scenes.extend(single_marker_scenes(
        SceneKind::Oblique,
        args.oblique_count,
        args.tilt_range,
        (100.0, 160.0),
        args.seed ^ 0x9e37_79b9_7f4a_7c15,
    ));
    scenes.extend(blank_scenes(args.blank_count, args.seed ^ 0x5851_f42d_4c95_7f2d));
    let pool = worker_pool()?;
    let outcomes = pool.install(|| run_scenes(&scenes, &template, &config))?;
    if let Some(p) = &args.csv {
        let f = fs::File::create(p).map_err(io_err(p))?;
        bench::write_csv(f, &outcomes)?;
    }
    let summary = summarize(args.seed, &outcomes);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    write_or_print(args.output.as_deref(), &text)?;
    Ok(summary)
}

pub fn cmd_validate_codebook(args: &ValidateArgs) -> Result<ValidationOutput, CliError> {
    if !(args.tolerance > 0.0) {
        return Err(CliError::Argument("tolerance must be positive".into()));
    }
    let (template, name) = load_template(args.template.as_deref())?;
    let out = ValidationOutput {
        schema: VALIDATION_SCHEMA.to_string(),
        template: name,
        report: validate_codebook(&template, args.tolerance),
    };
    let text = serde_json::to_string_pretty(&out).expect("report serializes") + "\n";
    write_or_print(args.output.as_deref(), &text)?;
    Ok(out)
}
