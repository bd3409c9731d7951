//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 when the arguments or inputs are invalid,
//! 1 when a well-formed run fails.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::align::{
    align_videos, AlignConfig, SpatialKind, SpatialModel, DEFAULT_RANSAC_ITERATIONS,
};
use crate::cluster::{cluster_collection, ClusterConfig};
use crate::detect::{detect_action, DetectConfig, DEFAULT_KNN, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::needle::{describe_video, write_field, NeedleParams};
use crate::significance::{DEFAULT_CODEBOOK_K, DEFAULT_QUOTA, DEFAULT_SAMPLE_FRACTION};
use crate::synth::{self, Background, MotionScript, Pattern};
use crate::video::{load_video_auto, save_video, Video};

#[derive(Debug, Parser)]
#[command(
    name = "tneedle",
    version,
    about = "Temporal self-similarity descriptors for video alignment, detection and clustering"
)]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic video or a ready-made scenario.
    Synth(SynthArgs),
    /// Compute the descriptor field of a video.
    Describe(DescribeArgs),
    /// Find the temporal and spatial alignment of two videos.
    Align(AlignArgs),
    /// Find occurrences of a query action in a reference video.
    Detect(DetectArgs),
    /// Cluster the videos listed in a manifest.
    Cluster(ClusterArgs),
}

#[derive(Debug, Args)]
struct NeedleArgs {
    #[arg(long, default_value_t = 3)]
    gamma: usize,
    #[arg(long, default_value_t = 3)]
    scales: usize,
    #[arg(long, default_value_t = 1)]
    patch_radius: usize,
    #[arg(long, default_value_t = 0.3)]
    noise_percentile: f64,
}

impl NeedleArgs {
    fn params(&self) -> Result<NeedleParams> {
        let p = NeedleParams {
            patch_radius: self.patch_radius,
            gamma: self.gamma,
            scales: self.scales,
            noise_percentile: self.noise_percentile,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Args)]
struct CodebookArgs {
    #[arg(long, default_value_t = DEFAULT_CODEBOOK_K)]
    codebook_k: usize,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_FRACTION)]
    sample_fraction: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scenario {
    /// One actor from the motion flags.
    Single,
    /// Gesture query, two-embedding reference and control.
    Detection,
    /// Two labelled categories plus a manifest.
    Collection,
    /// Wide view and a 3x zoom into its centre.
    Zoom,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackgroundArg {
    Flat,
    Gradient,
    Textured,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "single")]
    scenario: Scenario,
    #[arg(long, default_value = "oscillating-dot")]
    pattern: String,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    frames: usize,
    #[arg(long, default_value_t = 8)]
    period: usize,
    #[arg(long, default_value_t = 4.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 1.0)]
    speed_ratio: f64,
    #[arg(long, value_enum, default_value = "flat")]
    background: BackgroundArg,
    #[arg(long, default_value_t = 0.9)]
    intensity: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Render the mixed multi-actor scene instead of a single actor.
    #[arg(long)]
    mixed: bool,
    /// Delay the output by this many frames (may be fractional).
    #[arg(long, allow_hyphen_values = true)]
    shift: Option<f64>,
    /// Videos per category for the collection scenario.
    #[arg(long, default_value_t = 6)]
    per_category: usize,
    /// Output file for `single`, output directory otherwise.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DescribeArgs {
    video: PathBuf,
    #[command(flatten)]
    needle: NeedleArgs,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SpatialArg {
    Affine,
    Fundamental,
}

#[derive(Debug, Args)]
struct AlignArgs {
    query: PathBuf,
    reference: PathBuf,
    #[command(flatten)]
    needle: NeedleArgs,
    #[command(flatten)]
    codebook: CodebookArgs,
    #[arg(long, default_value_t = DEFAULT_QUOTA)]
    quota: usize,
    #[arg(long = "ransac-iters", default_value_t = DEFAULT_RANSAC_ITERATIONS)]
    ransac_iters: usize,
    /// Candidate shifts as `lo:hi`, inclusive.
    #[arg(long, allow_hyphen_values = true)]
    range: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    #[arg(long)]
    no_subframe: bool,
    #[arg(long, value_enum, default_value = "affine")]
    spatial: SpatialArg,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    query: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[command(flatten)]
    needle: NeedleArgs,
    #[command(flatten)]
    codebook: CodebookArgs,
    #[arg(long, default_value_t = DEFAULT_QUOTA)]
    quota: usize,
    #[arg(long, default_value_t = DEFAULT_KNN)]
    knn: usize,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    /// Text file with one video path per line; relative paths are taken
    /// from the manifest's directory.
    manifest: PathBuf,
    #[command(flatten)]
    needle: NeedleArgs,
    #[command(flatten)]
    codebook: CodebookArgs,
    #[arg(long, default_value_t = 2)]
    clusters: usize,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::InvalidArgument("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start {n} threads: {e}")))?
            .install(|| dispatch(cli)),
        None => dispatch(cli),
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth_cmd(a, cli.seed),
        Command::Describe(a) => describe_cmd(a),
        Command::Align(a) => align_cmd(a, cli.seed),
        Command::Detect(a) => detect_cmd(a, cli.seed),
        Command::Cluster(a) => cluster_cmd(a, cli.seed),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn write_json(dir: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    write_text(&dir.join("result.json"), &text)
}

fn load(path: &Path) -> Result<Video> {
    if !path.exists() {
        return Err(Error::InvalidArgument(format!(
            "{} does not exist",
            path.display()
        )));
    }
    load_video_auto(path)
}

fn params_json(p: &NeedleParams) -> Value {
    json!({
        "patch_radius": p.patch_radius,
        "gamma": p.gamma,
        "scales": p.scales,
        "noise_percentile": p.noise_percentile,
    })
}

fn synth_cmd(a: &SynthArgs, seed: u64) -> Result<()> {
    match a.scenario {
        Scenario::Single => {
            let background = match a.background {
                BackgroundArg::Flat => Background::Flat,
                BackgroundArg::Gradient => Background::Gradient,
                BackgroundArg::Textured => Background::Textured(seed),
            };
            let mut v = if a.mixed {
                let scene = synth::mixed_scene(a.width, a.height, background).with_noise(a.noise);
                synth::render(&scene, a.width, a.height, a.frames, seed)?
            } else {
                let script = MotionScript {
                    pattern: a.pattern.parse::<Pattern>()?,
                    period: a.period,
                    amplitude: a.amplitude,
                    speed_ratio: a.speed_ratio,
                    background,
                    foreground_intensity: a.intensity,
                    noise_sigma: a.noise,
                };
                script.validate()?;
                synth::generate(&script, a.width, a.height, a.frames, seed)?
            };
            if let Some(dt) = a.shift {
                v = synth::shift_time(&v, dt)?.video;
            }
            if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            save_video(&v, &a.out)
        }
        Scenario::Detection => {
            create_dir(&a.out)?;
            let s = synth::detection_scenario(seed)?;
            save_video(&s.query, a.out.join("query.y8"))?;
            save_video(&s.reference, a.out.join("reference.y8"))?;
            save_video(&s.control, a.out.join("control.y8"))?;
            write_json(&a.out, &json!({ "centers": s.centers }))
        }
        Scenario::Zoom => {
            create_dir(&a.out)?;
            let s = synth::zoom_scenario(seed)?;
            save_video(&s.zoomed, a.out.join("zoomed.y8"))?;
            save_video(&s.wide, a.out.join("wide.y8"))?;
            write_json(
                &a.out,
                &json!({ "zoomed_to_wide": s.zoomed_to_wide.params }),
            )
        }
        Scenario::Collection => {
            create_dir(&a.out)?;
            let (videos, labels) = synth::category_collection(a.per_category, seed)?;
            let mut manifest = String::new();
            for (i, v) in videos.iter().enumerate() {
                let name = format!("video_{i:02}.y8");
                save_video(v, a.out.join(&name))?;
                let _ = writeln!(manifest, "{name}");
            }
            write_text(&a.out.join("manifest.txt"), &manifest)?;
            write_json(&a.out, &json!({ "labels": labels }))
        }
    }
}

fn describe_cmd(a: &DescribeArgs) -> Result<()> {
    let params = a.needle.params()?;
    let v = load(&a.video)?;
    let field = describe_video(&v, &params)?;
    create_dir(&a.out)?;
    let path = a.out.join("descriptors.bin");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_field(&field, &mut w).map_err(|e| Error::io(&path, e))?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    let r = field.region();
    write_json(
        &a.out,
        &json!({
            "video": [v.width(), v.height(), v.frame_count()],
            "params": params_json(&params),
            "descriptor_len": field.dim(),
            "noise_floor": field.noise_floor(),
            "valid_region": { "x": [r.x0, r.x1], "y": [r.y0, r.y1], "t": [r.t0, r.t1] },
            "descriptors": field.len(),
            "nonzero": field.nonzero_count(),
        }),
    )
}

fn parse_range(s: &str) -> Result<RangeInclusive<i64>> {
    let bad = || Error::InvalidArgument(format!("range {s:?} is not of the form lo:hi"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: i64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: i64 = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(Error::InvalidArgument(format!("range {s:?} is empty")));
    }
    Ok(lo..=hi)
}

fn align_cmd(a: &AlignArgs, seed: u64) -> Result<()> {
    let cfg = AlignConfig {
        needle: a.needle.params()?,
        codebook_k: a.codebook.codebook_k,
        sample_fraction: a.codebook.sample_fraction,
        quota: a.quota,
        ransac_iterations: a.ransac_iters,
        rate_ratio: a.rate,
        range: a.range.as_deref().map(parse_range).transpose()?,
        subframe: !a.no_subframe,
        spatial: match a.spatial {
            SpatialArg::Affine => SpatialKind::Affine,
            SpatialArg::Fundamental => SpatialKind::Fundamental,
        },
        seed,
    };
    let (q, r) = (load(&a.query)?, load(&a.reference)?);
    let res = align_videos(&q, &r, &cfg)?;
    create_dir(&a.out)?;
    let spatial = match &res.spatial {
        SpatialModel::Affine(t) => json!({ "kind": "affine", "params": t.params }),
        SpatialModel::Fundamental(f) => json!({ "kind": "fundamental", "matrix": f.entries() }),
    };
    write_json(
        &a.out,
        &json!({
            "rate_ratio": res.temporal.rate_ratio,
            "shift": res.temporal.shift,
            "integer_shift": res.integer_shift,
            "alpha": res.alpha,
            "spatial": spatial,
            "spatial_score": res.score,
            "matches": res.matches.len(),
            "params": params_json(&cfg.needle),
            "seed": seed,
        }),
    )?;
    let mut csv = String::from("shift,error\n");
    for (s, e) in &res.temporal.error_curve {
        let _ = writeln!(csv, "{s},{e}");
    }
    write_text(&a.out.join("error_curve.csv"), &csv)
}

fn detect_cmd(a: &DetectArgs, seed: u64) -> Result<()> {
    let cfg = DetectConfig {
        needle: a.needle.params()?,
        codebook_k: a.codebook.codebook_k,
        sample_fraction: a.codebook.sample_fraction,
        quota: a.quota,
        knn: a.knn,
        window: a.window,
        seed,
    };
    let (q, r) = (load(&a.query)?, load(&a.reference)?);
    let res = detect_action(&q, &r, &cfg)?;
    create_dir(&a.out)?;
    let detections: Vec<Value> = res
        .detections
        .iter()
        .map(|d| json!({ "frame": d.frame, "score": d.score }))
        .collect();
    write_json(
        &a.out,
        &json!({
            "query_center": res.query_center,
            "detections": detections,
            "knn": cfg.knn,
            "window": cfg.window,
            "params": params_json(&cfg.needle),
            "seed": seed,
        }),
    )?;
    let mut csv = String::from("frame,raw,smoothed\n");
    for (i, (raw, sm)) in res.curve.raw.iter().zip(&res.curve.smoothed).enumerate() {
        let _ = writeln!(csv, "{i},{raw},{sm}");
    }
    write_text(&a.out.join("score_curve.csv"), &csv)
}

fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "manifest {} lists no videos",
            path.display()
        )));
    }
    Ok(entries)
}

fn cluster_cmd(a: &ClusterArgs, seed: u64) -> Result<()> {
    let cfg = ClusterConfig {
        needle: a.needle.params()?,
        codebook_k: a.codebook.codebook_k,
        sample_fraction: a.codebook.sample_fraction,
        clusters: a.clusters,
        iterations: a.iterations,
        seed,
        ..ClusterConfig::default()
    };
    if !a.manifest.exists() {
        return Err(Error::InvalidArgument(format!(
            "{} does not exist",
            a.manifest.display()
        )));
    }
    let paths = read_manifest(&a.manifest)?;
    let videos: Vec<Video> = paths.iter().map(|p| load(p)).collect::<Result<_>>()?;
    let res = cluster_collection(&videos, &cfg)?;
    create_dir(&a.out)?;
    let items: Vec<Value> = paths
        .iter()
        .zip(&res.labels)
        .map(|(p, l)| json!({ "video": p.display().to_string(), "label": l }))
        .collect();
    write_json(
        &a.out,
        &json!({
            "clusters": cfg.clusters,
            "iterations": res.iterations,
            "labels": items,
            "params": params_json(&cfg.needle),
            "seed": seed,
        }),
    )?;
    let mut csv = String::new();
    for row in &res.affinity {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(csv, "{}", cells.join(","));
    }
    write_text(&a.out.join("affinity.csv"), &csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("-20:20").unwrap(), -20..=20);
        assert_eq!(parse_range(" 3 : 3 ").unwrap(), 3..=3);
        assert!(parse_range("5:1").is_err());
        assert!(parse_range("5").is_err());
        assert!(parse_range("a:b").is_err());
    }

    #[test]
    fn exit_codes_for_bad_arguments() {
        assert_eq!(run(["tneedle", "nonsense"]), 2);
        assert_eq!(run(["tneedle", "describe", "/definitely/missing.y8"]), 2);
        assert_eq!(run(["tneedle", "describe", "x.y8", "--gamma", "0"]), 2);
        assert_eq!(run(["tneedle", "--help"]), 0);
    }
}
