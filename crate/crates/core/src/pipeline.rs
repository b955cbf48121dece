//! End-to-end undersampling sweep: for each k-space fraction, undersample
//! both phases, register them, warp the full-resolution TP1 with the result
//! and score fields and images.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::export::{export_difference_slice, export_mask, export_slice};
use crate::interp::Interpolation;
use crate::io::{read_field, read_volume, write_field, write_volume};
use crate::kspace::{center_mask, effective_dims, undersample_volume};
use crate::metrics::{compare_fields, compare_images, FieldComparisonReport, SimilarityReport, SsimParams};
use crate::phantom::{generate_phantom, PhantomSpec};
use crate::registration::{register, write_trace_csv, RegistrationParams};
use crate::volume::{Mask3, VectorField3, Volume3};
use crate::warp::apply_deformation;

pub const DEFAULT_FRACTIONS: [f64; 7] = [1.0, 0.5, 0.25, 0.03, 0.02, 0.01, 0.005];

/// Bumped whenever cached registrations stop being reusable.
const CACHE_VERSION: &str = "breathwarp-registration-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    Phantom(PhantomSpec),
    Files {
        tp1: PathBuf,
        tp2: PathBuf,
        /// Foreground mask for the field metrics; all voxels when absent.
        #[serde(default)]
        mask: Option<PathBuf>,
    },
}

impl Default for InputSource {
    fn default() -> Self {
        InputSource::Phantom(PhantomSpec::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportOptions {
    /// k-space sampling masks.
    pub masks: bool,
    /// Mid-coronal slices of the undersampled and deformed images.
    pub slices: bool,
    /// Mid-coronal slice of deformed minus true TP2.
    pub subtraction: bool,
    /// Registration fields and metric traces.
    pub fields: bool,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self {
            masks: true,
            slices: true,
            subtraction: true,
            fields: false,
        }
    }
}

fn default_fractions() -> Vec<f64> {
    DEFAULT_FRACTIONS.to_vec()
}

fn default_output() -> PathBuf {
    PathBuf::from("breathwarp-out")
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub input: InputSource,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default)]
    pub registration: RegistrationParams,
    #[serde(default)]
    pub ssim: SsimParams,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub export: ExportOptions,
    /// Reuse registrations stored under `output_dir/cache`.
    #[serde(default = "yes")]
    pub use_cache: bool,
    /// Record wall-clock seconds per fraction; when off the column is 0 and
    /// the report depends only on the inputs.
    #[serde(default = "yes")]
    pub record_timing: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: InputSource::default(),
            fractions: default_fractions(),
            registration: RegistrationParams::default(),
            ssim: SsimParams::default(),
            output_dir: default_output(),
            export: ExportOptions::default(),
            use_cache: true,
            record_timing: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.fractions;
        if f.first() != Some(&1.0) {
            return Err(Error::InvalidParameter(
                "fraction list must start with 1.0, the reference run".into(),
            ));
        }
        for &x in f {
            if !(x > 0.0 && x <= 1.0) {
                return Err(Error::InvalidFraction(x));
            }
        }
        if f.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter("fractions must be strictly decreasing".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub effective_dims: [usize; 2],
    /// Field vs the full-sampling model.
    pub field: FieldComparisonReport,
    /// Deformed TP1 vs true TP2.
    pub image: SimilarityReport,
    /// Undeformed TP1 vs true TP2.
    pub baseline: SimilarityReport,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

/// One flat CSV record.
#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub fraction: f64,
    pub eff_nx: usize,
    pub eff_ny: usize,
    pub hausdorff_mm: f64,
    pub sup_error_mm: f64,
    pub field_err_pct: f64,
    pub pearson: f64,
    pub img_err_pct: f64,
    pub mse: f64,
    pub ssim: f64,
    pub baseline_ssim: f64,
    pub seconds: f64,
}

impl From<&SweepRow> for CsvRow {
    fn from(r: &SweepRow) -> Self {
        Self {
            fraction: r.fraction,
            eff_nx: r.effective_dims[0],
            eff_ny: r.effective_dims[1],
            hausdorff_mm: r.field.hausdorff_mm,
            sup_error_mm: r.field.sup_error_mm,
            field_err_pct: r.field.error_pct,
            pearson: r.image.pearson,
            img_err_pct: r.image.error_pct,
            mse: r.image.mse,
            ssim: r.image.ssim,
            baseline_ssim: r.baseline.ssim,
            seconds: r.seconds,
        }
    }
}

impl SweepReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(CsvRow::from(r))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

pub fn read_csv_rows(path: impl AsRef<Path>) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Short file-name label: `1.0 -> "100"`, `0.005 -> "0.5"`.
pub fn fraction_label(fraction: f64) -> String {
    let s = format!("{:.3}", fraction * 100.0);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

struct Inputs {
    tp1: Volume3,
    tp2: Volume3,
    mask: Option<Mask3>,
}

fn load_inputs(source: &InputSource) -> Result<Inputs> {
    match source {
        InputSource::Phantom(spec) => {
            let p = generate_phantom(spec)?;
            Ok(Inputs {
                tp1: p.tp1,
                tp2: p.tp2,
                mask: Some(p.body_mask),
            })
        }
        InputSource::Files { tp1, tp2, mask } => {
            let tp1 = read_volume(tp1)?;
            let tp2 = read_volume(tp2)?;
            if tp1.grid() != tp2.grid() {
                return Err(Error::GridMismatch);
            }
            let mask = match mask {
                Some(m) => {
                    let m = Mask3::from_volume(&read_volume(m)?);
                    if m.grid() != tp1.grid() {
                        return Err(Error::GridMismatch);
                    }
                    Some(m)
                }
                None => None,
            };
            Ok(Inputs { tp1, tp2, mask })
        }
    }
}

fn cache_key(fixed: &Volume3, moving: &Volume3, params: &RegistrationParams) -> Result<String> {
    let mut h = Sha256::new();
    h.update(CACHE_VERSION.as_bytes());
    h.update(serde_json::to_vec(fixed.grid())?);
    h.update(serde_json::to_vec(params)?);
    for v in [fixed, moving] {
        for x in v.data() {
            h.update(x.to_le_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Registers, or loads an earlier identical registration from `cache_dir`.
fn cached_registration(
    fixed: &Volume3,
    moving: &Volume3,
    params: &RegistrationParams,
    cache_dir: Option<&Path>,
) -> Result<VectorField3> {
    let Some(root) = cache_dir else {
        return Ok(register(fixed, moving, params)?.field_fwd);
    };
    let dir = root.join(cache_key(fixed, moving, params)?);
    let path = dir.join("field_fwd.raw");
    if path.exists() {
        if let Ok(f) = read_field(&path) {
            if f.grid() == fixed.grid() {
                log::info!("reusing cached registration {}", dir.display());
                return Ok(f);
            }
        }
    }
    let result = register(fixed, moving, params)?;
    std::fs::create_dir_all(&dir)?;
    write_field(&result.field_fwd, &path)?;
    write_trace_csv(&result.metric_trace, dir.join("trace.csv"))?;
    Ok(result.field_fwd)
}

/// Runs the sweep and writes `report.csv`, `report.json` and the enabled
/// exports into `config.output_dir`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<SweepReport> {
    config.validate()?;
    let inputs = load_inputs(&config.input)?;
    let grid = *inputs.tp1.grid();
    config.registration.validate(&grid)?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out)?;
    let cache = config.use_cache.then(|| out.join("cache"));
    let in_plane = [grid.dims[0], grid.dims[1]];
    let coronal = grid.dims[1] / 2;

    let baseline = compare_images(&inputs.tp1, &inputs.tp2, &config.ssim)?;
    if config.export.slices {
        export_slice(&inputs.tp1, 1, coronal, out.join("tp1.pgm"))?;
        export_slice(&inputs.tp2, 1, coronal, out.join("tp2.pgm"))?;
    }

    let mut reference: Option<VectorField3> = None;
    let mut rows = Vec::with_capacity(config.fractions.len());
    for &fraction in &config.fractions {
        let at = |e: Error| Error::AtFraction {
            fraction,
            source: Box::new(e),
        };
        let start = Instant::now();
        let label = fraction_label(fraction);
        let low1 = undersample_volume(&inputs.tp1, fraction).map_err(at)?;
        let low2 = undersample_volume(&inputs.tp2, fraction).map_err(at)?;
        let field = cached_registration(&low2, &low1, &config.registration, cache.as_deref()).map_err(at)?;
        let deformed = apply_deformation(&inputs.tp1, &field, Interpolation::CubicBspline);
        let reference_field = reference.get_or_insert_with(|| field.clone());
        let field_report = compare_fields(&field, reference_field, inputs.mask.as_ref()).map_err(at)?;
        let image_report = compare_images(&deformed, &inputs.tp2, &config.ssim).map_err(at)?;
        let seconds = if config.record_timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };

        if config.export.masks {
            let mask = center_mask(in_plane, fraction).map_err(at)?;
            export_mask(
                &mask,
                in_plane[0],
                in_plane[1],
                out.join(format!("kspace_mask_{label}.pgm")),
            )
            .map_err(at)?;
        }
        if config.export.slices {
            export_slice(&low1, 1, coronal, out.join(format!("undersampled_tp1_{label}.pgm"))).map_err(at)?;
            export_slice(&deformed, 1, coronal, out.join(format!("deformed_{label}.pgm"))).map_err(at)?;
        }
        if config.export.subtraction {
            let diff = deformed.subtract(&inputs.tp2).map_err(at)?;
            export_difference_slice(&diff, 1, coronal, out.join(format!("subtraction_{label}.pgm"))).map_err(at)?;
        }
        if config.export.fields {
            write_field(&field, out.join(format!("field_{label}.raw"))).map_err(at)?;
            write_volume(&deformed, out.join(format!("deformed_{label}.raw"))).map_err(at)?;
        }
        log::info!(
            "fraction {fraction}: field error {:.3}%, ssim {:.4} (baseline {:.4})",
            field_report.error_pct,
            image_report.ssim,
            baseline.ssim
        );
        rows.push(SweepRow {
            fraction,
            effective_dims: effective_dims(fraction, in_plane).map_err(at)?,
            field: field_report,
            image: image_report,
            baseline,
            seconds,
        });
    }
    let report = SweepReport { rows };
    report.write_csv(out.join("report.csv"))?;
    report.write_json(out.join("report.json"))?;
    Ok(report)
}
