use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semmap::dataset::{load_sequence, save_sequence, ClassPalette};
use semmap::export;
use semmap::geometry::KeyframePose;
use semmap::gt_fusion::{self, ExclusionReason, FusionConfig};
use semmap::metrics;
use semmap::photometric::{self, PhotometricConfig};
use semmap::pipeline::{self, RunConfig, RunMode};
use semmap::synth::{self, SceneKind, SynthOptions};
use semmap::tcl::TclConfig;
use semmap::{Error, Result};

#[derive(Parser)]
#[command(
    name = "semmap",
    version,
    about = "Temporally consistent semantic labels for sparse VO maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label every point of a sequence and export the semantic map.
    Run(RunArgs),
    /// Score label files against ground-truth assignments.
    Eval(EvalArgs),
    /// Fuse LiDAR and 2D ground truth into per-point assignments.
    FuseGt(FuseArgs),
    /// Write a synthetic sequence directory.
    Synth(SynthArgs),
    /// Print the photometric energy of a sequence.
    Energy(EnergyArgs),
    /// Concatenate PLY maps after applying one rigid transform each.
    Merge(MergeArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    sequence: PathBuf,
    #[arg(long, default_value = "tcl-stereo")]
    mode: RunMode,
    #[arg(long, default_value_t = 3.0)]
    dist_min: f64,
    #[arg(long, default_value_t = 7)]
    window: usize,
    /// Comma-separated class names to keep in the map.
    #[arg(long, value_delimiter = ',')]
    filter: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Defaults to labels.txt next to --out.
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Label file; repeat together with --gt to pool several sequences.
    #[arg(long, required = true)]
    labels: Vec<PathBuf>,
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    #[arg(long)]
    palette: PathBuf,
    /// Count unlabeled points as false negatives.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value = "metrics.txt")]
    metrics_out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    sequence: PathBuf,
    #[arg(long, default_value = "gt_assignments.txt")]
    out: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    max_range: f64,
    #[arg(long, default_value_t = 2.0)]
    radius_px: f64,
    #[arg(long, default_value_t = 0.1)]
    depth_tol: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "street")]
    scene: SceneKind,
    #[arg(long, default_value_t = 20)]
    keyframes: usize,
    #[arg(long, default_value_t = 1000)]
    points_per_kf: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// LiDAR grid stride in pixels.
    #[arg(long, default_value_t = 2)]
    lidar_stride: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnergyArgs {
    #[arg(long)]
    sequence: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Huber threshold; 0 disables the robust cost.
    #[arg(long, default_value_t = 0.0)]
    huber: f64,
    /// First keyframe position of the window.
    #[arg(long, default_value_t = 0)]
    first: usize,
    /// Window length; defaults to the rest of the sequence.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long)]
    out: PathBuf,
    /// One row-major 3x4 transform per input, one per line.
    #[arg(long)]
    transforms: Option<PathBuf>,
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
        Command::FuseGt(a) => fuse_gt(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Energy(a) => energy(a),
        Command::Merge(a) => merge(a),
    }
}

fn run(a: RunArgs) -> Result<()> {
    let ds = load_sequence(&a.sequence)?;
    let cfg = RunConfig {
        mode: a.mode,
        tcl: TclConfig {
            dist_min: a.dist_min,
            window: a.window,
            ..TclConfig::default()
        },
        filter: a.filter,
        out: a.out,
        labels_out: a.labels_out,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = a.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let summary = pool.install(|| pipeline::run(&ds, &cfg))?;
    println!(
        "{} points, {} unlabeled, {} exported to {}; labels in {}",
        summary.points,
        summary.unlabeled,
        summary.exported,
        summary.map_path.display(),
        summary.labels_path.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if a.labels.len() != a.gt.len() {
        return Err(Error::Config(format!(
            "{} --labels files but {} --gt files",
            a.labels.len(),
            a.gt.len()
        )));
    }
    let palette = ClassPalette::load(&a.palette)?;
    let pairs: Vec<(PathBuf, PathBuf)> = a.labels.into_iter().zip(a.gt).collect();
    let cm = pipeline::evaluate_files(&pairs, &palette, a.strict)?;
    print!("{}", metrics::report(&cm, &palette));
    pipeline::write_file(&a.metrics_out, &metrics::metrics_text(&cm, &palette))
}

fn fuse_gt(a: FuseArgs) -> Result<()> {
    let ds = load_sequence(&a.sequence)?;
    let cfg = FusionConfig {
        max_range: a.max_range,
        radius_px: a.radius_px,
        depth_tol_rel: a.depth_tol,
        ..FusionConfig::default()
    };
    let gt = gt_fusion::fuse(&ds, &cfg)?;
    pipeline::write_file(&a.out, &pipeline::gt_text(&ds, &gt))?;
    print!("{} points, {} labeled", gt.len(), gt.labeled());
    for r in ExclusionReason::ALL {
        print!(", {} {r}", gt.count(r));
    }
    println!();
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let opts = SynthOptions {
        lidar_stride: Some(a.lidar_stride),
        ..SynthOptions::default()
    };
    let out = synth::stock_sequence(a.scene, a.keyframes, a.points_per_kf, a.noise, a.seed, opts)?;
    save_sequence(&out.dataset, &a.out)?;
    println!(
        "wrote {} keyframes, {} points to {}",
        out.dataset.keyframes.len(),
        out.dataset.point_count(),
        a.out.display()
    );
    Ok(())
}

fn energy(a: EnergyArgs) -> Result<()> {
    let ds = load_sequence(&a.sequence)?;
    let n = ds.keyframes.len();
    let end = a.count.map_or(n, |c| a.first.saturating_add(c).min(n));
    let frames: Vec<usize> = (a.first..end).collect();
    let cfg = PhotometricConfig {
        lambda: a.lambda,
        huber_delta: a.huber,
        ..PhotometricConfig::default()
    };
    let report = photometric::window_energy(&ds, &frames, &cfg)?;
    println!("E {:.6}", report.total);
    println!("residuals {}", report.residuals);
    for f in &report.frames {
        println!(
            "kf {} temporal {:.6} stereo {:.6}",
            f.keyframe_id, f.temporal, f.stereo
        );
    }
    Ok(())
}

fn read_transforms(path: &Path) -> Result<Vec<KeyframePose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let file = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let values: Vec<f64> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_error(&file, n + 1, "invalid number"))?;
            let values: [f64; 12] = values
                .try_into()
                .map_err(|_| parse_error(&file, n + 1, "expected 12 fields"))?;
            KeyframePose::from_row_major(&values)
        })
        .collect()
}

fn parse_error(file: &str, line: usize, message: &str) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        message: message.to_string(),
    }
}

fn merge(a: MergeArgs) -> Result<()> {
    let clouds = a
        .inputs
        .iter()
        .map(|p| export::read_ply(p))
        .collect::<Result<Vec<_>>>()?;
    let transforms = match &a.transforms {
        Some(p) => read_transforms(p)?,
        None => vec![KeyframePose::identity(); clouds.len()],
    };
    let merged = export::merge(&clouds, &transforms)?;
    export::export_ply(&merged, &a.out, None)?;
    println!("{} points written to {}", merged.len(), a.out.display());
    Ok(())
}
