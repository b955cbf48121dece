use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use breathwarp::io::{read_field, read_volume, write_field, write_volume};
use breathwarp::kspace::{effective_dims, undersample_volume};
use breathwarp::metrics::{compare_fields, compare_images, SsimParams};
use breathwarp::phantom::{generate_phantom, PhantomSpec};
use breathwarp::pipeline::{run_pipeline, InputSource, PipelineConfig};
use breathwarp::{apply_deformation, register, Interpolation, Mask3, RegistrationParams};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Breathing-motion models from k-space-undersampled volumes.
#[derive(Parser, Debug)]
#[command(name = "breathwarp", version, about)]
struct Cli {
    /// Worker threads (default: all cores). Use 1 for bit-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Phantom generator seed; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log level filter, e.g. warn, info, debug.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic two-phase phantom with its ground-truth field.
    Phantom(PhantomArgs),
    /// Keep the centre of every slice's k-space and zero-fill the rest.
    Undersample(UndersampleArgs),
    /// Register a moving volume onto a fixed volume.
    Register(RegisterArgs),
    /// Pull a volume back through a displacement field.
    Warp(WarpArgs),
    /// Pearson, error percentage, MSE and SSIM between two volumes.
    CompareImages(CompareImagesArgs),
    /// Hausdorff distance, sup error and error percentage between two fields.
    CompareFields(CompareFieldsArgs),
    /// Run the full undersampling sweep and write report.csv / report.json.
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Raw,
    Nii,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Raw => "raw",
            Format::Nii => "nii",
        }
    }
}

#[derive(Args, Debug)]
struct PhantomArgs {
    /// JSON phantom settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, default_value = "phantom")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "raw")]
    format: Format,
    #[arg(long, num_args = 3, value_names = ["NX", "NY", "NZ"])]
    dims: Option<Vec<usize>>,
    #[arg(long, num_args = 3, value_names = ["SX", "SY", "SZ"])]
    spacing: Option<Vec<f64>>,
    /// Peak superior-inferior displacement in mm.
    #[arg(long)]
    amplitude: Option<f64>,
    /// Peak anterior expansion in mm.
    #[arg(long)]
    ap_amplitude: Option<f64>,
    /// Noise standard deviation as a fraction of the intensity range.
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default)]
struct UndersampleConfig {
    fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct UndersampleArgs {
    /// JSON with a `fraction` entry.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    /// Retained fraction of each slice's k-space, in (0, 1].
    #[arg(long, short)]
    fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct RegisterArgs {
    /// JSON registration parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long)]
    moving: PathBuf,
    /// Fixed-to-moving pull-back field.
    #[arg(long, short)]
    output: PathBuf,
    /// Moving-to-fixed field.
    #[arg(long)]
    inverse: Option<PathBuf>,
    /// Metric trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    cc_radius: Option<usize>,
    #[arg(long)]
    spline_spacing: Option<f64>,
    #[arg(long)]
    levels: Option<usize>,
    /// Iterations per level, coarse to fine.
    #[arg(long, value_delimiter = ',')]
    iterations: Option<Vec<usize>>,
    /// Largest displacement per update in mm.
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default)]
struct WarpConfig {
    interpolation: Option<Interpolation>,
}

#[derive(Args, Debug)]
struct WarpArgs {
    /// JSON with an `interpolation` entry.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    field: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    /// trilinear or cubic (default cubic).
    #[arg(long)]
    interpolation: Option<Interpolation>,
}

#[derive(Args, Debug)]
struct CompareImagesArgs {
    /// JSON SSIM parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// SSIM Gaussian window sigma in voxels.
    #[arg(long)]
    sigma: Option<f64>,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default)]
struct CompareFieldsConfig {
    mask: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareFieldsArgs {
    /// JSON with an optional `mask` path.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Binary volume restricting the comparison (voxels above 0.5).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// JSON pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    output_dir: Option<PathBuf>,
    /// k-space fractions, starting with 1.0.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// Iterations per registration level, coarse to fine.
    #[arg(long, value_delimiter = ',')]
    iterations: Option<Vec<usize>>,
    /// Recompute every registration instead of reusing cached ones.
    #[arg(long)]
    no_cache: bool,
    /// Write 0 for the seconds column.
    #[arg(long)]
    no_timing: bool,
    /// Also write fields and deformed volumes.
    #[arg(long)]
    export_fields: bool,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn emit<T: Serialize>(value: &T, output: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match output {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn to3<T: Copy>(v: &[T]) -> [T; 3] {
    [v[0], v[1], v[2]]
}

fn phantom(args: &PhantomArgs, seed: Option<u64>) -> Result<()> {
    let mut spec: PhantomSpec = load_config(args.config.as_deref())?;
    if let Some(d) = &args.dims {
        spec.dims = to3(d);
    }
    if let Some(s) = &args.spacing {
        spec.spacing = to3(s);
    }
    if let Some(a) = args.amplitude {
        spec.amplitude_mm = a;
    }
    if let Some(a) = args.ap_amplitude {
        spec.ap_amplitude_mm = a;
    }
    if let Some(n) = args.noise {
        spec.noise_sigma = n;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let pair = generate_phantom(&spec)?;
    fs::create_dir_all(&args.out)?;
    let ext = args.format.ext();
    write_volume(&pair.tp1, args.out.join(format!("tp1.{ext}")))?;
    write_volume(&pair.tp2, args.out.join(format!("tp2.{ext}")))?;
    write_field(&pair.gt_field, args.out.join(format!("gt_field.{ext}")))?;
    write_volume(&pair.body_mask.to_volume(), args.out.join(format!("body_mask.{ext}")))?;
    fs::write(
        args.out.join("phantom.json"),
        serde_json::to_string_pretty(&spec)? + "\n",
    )?;
    log::info!("phantom written to {}", args.out.display());
    Ok(())
}

fn undersample(args: &UndersampleArgs) -> Result<()> {
    let cfg: UndersampleConfig = load_config(args.config.as_deref())?;
    let Some(fraction) = args.fraction.or(cfg.fraction) else {
        bail!("a fraction is required (--fraction or config)");
    };
    let vol = read_volume(&args.input)?;
    let low = undersample_volume(&vol, fraction)?;
    let g = vol.grid();
    let eff = effective_dims(fraction, [g.dims[0], g.dims[1]])?;
    write_volume(&low, &args.output)?;
    log::info!(
        "fraction {fraction}: effective in-plane resolution {}x{}",
        eff[0],
        eff[1]
    );
    Ok(())
}

fn register_cmd(args: &RegisterArgs) -> Result<()> {
    let mut params: RegistrationParams = load_config(args.config.as_deref())?;
    if let Some(r) = args.cc_radius {
        params.cc_radius = r;
    }
    if let Some(s) = args.spline_spacing {
        params.spline_spacing_mm = s;
    }
    if let Some(it) = &args.iterations {
        params.iterations = it.clone();
        params.levels = it.len();
    }
    if let Some(l) = args.levels {
        params.levels = l;
    }
    if let Some(s) = args.step {
        params.step_mm = Some(s);
    }
    let fixed = read_volume(&args.fixed)?;
    let moving = read_volume(&args.moving)?;
    let result = register(&fixed, &moving, &params)?;
    write_field(&result.field_fwd, &args.output)?;
    if let Some(p) = &args.inverse {
        write_field(&result.field_inv, p)?;
    }
    if let Some(p) = &args.trace {
        result.write_trace_csv(p)?;
    }
    log::info!(
        "final score {:.6}, converged per level {:?}",
        result.metric_trace.last().map_or(f64::NAN, |t| t.score),
        result.converged
    );
    Ok(())
}

fn warp(args: &WarpArgs) -> Result<()> {
    let cfg: WarpConfig = load_config(args.config.as_deref())?;
    let mode = args
        .interpolation
        .or(cfg.interpolation)
        .unwrap_or(Interpolation::CubicBspline);
    let vol = read_volume(&args.input)?;
    let field = read_field(&args.field)?;
    write_volume(&apply_deformation(&vol, &field, mode), &args.output)?;
    Ok(())
}

fn compare_images_cmd(args: &CompareImagesArgs) -> Result<()> {
    let mut params: SsimParams = load_config(args.config.as_deref())?;
    if let Some(s) = args.sigma {
        params.sigma_vox = s;
    }
    let test = read_volume(&args.test)?;
    let reference = read_volume(&args.reference)?;
    emit(&compare_images(&test, &reference, &params)?, args.output.as_deref())
}

fn compare_fields_cmd(args: &CompareFieldsArgs) -> Result<()> {
    let cfg: CompareFieldsConfig = load_config(args.config.as_deref())?;
    let test = read_field(&args.test)?;
    let reference = read_field(&args.reference)?;
    let mask = match args.mask.as_ref().or(cfg.mask.as_ref()) {
        Some(p) => Some(Mask3::from_volume(&read_volume(p)?)),
        None => None,
    };
    emit(
        &compare_fields(&test, &reference, mask.as_ref())?,
        args.output.as_deref(),
    )
}

fn pipeline(args: &PipelineArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg: PipelineConfig = load_config(args.config.as_deref())?;
    if let Some(d) = &args.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(f) = &args.fractions {
        cfg.fractions = f.clone();
    }
    if let Some(it) = &args.iterations {
        cfg.registration.iterations = it.clone();
        cfg.registration.levels = it.len();
    }
    if args.no_cache {
        cfg.use_cache = false;
    }
    if args.no_timing {
        cfg.record_timing = false;
    }
    if args.export_fields {
        cfg.export.fields = true;
    }
    if let Some(s) = seed {
        match &mut cfg.input {
            InputSource::Phantom(spec) => spec.seed = s,
            InputSource::Files { .. } => log::warn!("--seed ignored for file inputs"),
        }
    }
    let report = run_pipeline(&cfg)?;
    println!(
        "{:>8} {:>9} {:>10} {:>10} {:>8} {:>8}",
        "fraction", "eff_dims", "field_err%", "hausdorff", "ssim", "baseline"
    );
    for r in &report.rows {
        println!(
            "{:>8} {:>9} {:>10.3} {:>10.3} {:>8.4} {:>8.4}",
            r.fraction,
            format!("{}x{}", r.effective_dims[0], r.effective_dims[1]),
            r.field.error_pct,
            r.field.hausdorff_mm,
            r.image.ssim,
            r.baseline.ssim
        );
    }
    log::info!("report written to {}", cfg.output_dir.join("report.csv").display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Phantom(a) => phantom(a, cli.seed),
        Command::Undersample(a) => undersample(a),
        Command::Register(a) => register_cmd(a),
        Command::Warp(a) => warp(a),
        Command::CompareImages(a) => compare_images_cmd(a),
        Command::CompareFields(a) => compare_fields_cmd(a),
        Command::Pipeline(a) => pipeline(a, cli.seed),
    }
}
