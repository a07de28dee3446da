//! Command-line driver.
//!
//! Exit codes: 0 success, 2 bad configuration or arguments, 3 file or
//! format errors, 4 solver divergence.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::AlohaError;
use crate::hankel::HankelShape;
use crate::imageio::{self, BitDepth, ImageBuffer, ImageError};
use crate::metrics::{self, CsvRow, CSV_HEADER};
use crate::noise::{add_noise, AmfParams, ChannelLocations, NoiseKind, NoiseSpec};
use crate::pipeline::{denoise_image, plan_grid, DenoiseMode, DenoiseOptions, PatchGrid};
use crate::solver::{ChannelMode, SolverConfig, Structure, XUpdate};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

/// Noise density at or above which presets switch to their 40% column.
pub const HIGH_NOISE_THRESHOLD: f64 = 0.325;

#[derive(Debug, Parser)]
#[command(name = "robust-aloha", version, about = "Impulse noise removal by sparse + low-rank Hankel decomposition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corrupt an image with impulse noise.
    AddNoise(AddNoiseArgs),
    /// Remove impulse noise from an image.
    Denoise(DenoiseArgs),
    /// Compare a candidate image against a reference.
    Psnr(PsnrArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Rvin,
    SaltPepper,
}

impl From<KindArg> for NoiseKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Rvin => NoiseKind::Rvin,
            KindArg::SaltPepper => NoiseKind::SaltPepper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LocationsArg {
    Independent,
    Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChannelModeArg {
    Single,
    Independent,
    Common,
}

impl From<ChannelModeArg> for ChannelMode {
    fn from(m: ChannelModeArg) -> Self {
        match m {
            ChannelModeArg::Single => ChannelMode::Single,
            ChannelModeArg::Independent => ChannelMode::Independent,
            ChannelModeArg::Common => ChannelMode::CommonLocation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Baboon,
    Barbara,
    Boat,
    Cameraman,
    House,
    Lena,
    Peppers,
    Default,
}

/// Patch size, filter size, τ and LMaFit tolerance for one preset column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PresetValues {
    pub patch: usize,
    pub filter: usize,
    pub tau: f64,
    pub lmafit_tol: f64,
    pub stride: usize,
}

impl Preset {
    pub fn values(self, high_noise: bool) -> PresetValues {
        let (patch, filter, tau) = match (self, high_noise) {
            (Preset::Baboon, false) => (45, 13, 0.1),
            (Preset::Baboon, true) => (45, 13, 0.075),
            (Preset::Cameraman, false) => (31, 13, 0.1),
            (Preset::Cameraman, true) => (31, 13, 0.075),
            (Preset::Peppers, false) => (25, 9, 0.1),
            (Preset::Peppers, true) => (45, 13, 0.075),
            (Preset::Barbara | Preset::Boat | Preset::House | Preset::Lena | Preset::Default, _) => {
                (25, 11, 0.1)
            }
        };
        let stride = if self == Preset::Default { 12 } else { patch / 2 };
        PresetValues {
            patch,
            filter,
            tau,
            lmafit_tol: if high_noise { 0.3 } else { 0.2 },
            stride,
        }
    }
}

#[derive(Debug, Args)]
pub struct AddNoiseArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "rvin")]
    pub kind: KindArg,
    /// Fraction of corrupted pixels.
    #[arg(long, allow_negative_numbers = true)]
    pub p: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "independent")]
    pub locations: LocationsArg,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub d_min: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub d_max: f64,
    /// Where to write the corruption mask (default: `<output stem>.mask.<ext>`).
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Noise density of the input; selects the 40% preset column when ≥ 0.325.
    #[arg(long, allow_negative_numbers = true)]
    pub p: Option<f64>,
    /// Seed recorded in the metrics row.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub filter: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub mu: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, value_enum, default_value = "rvin")]
    pub mode: KindArg,
    /// Default: single for grayscale, independent for colour.
    #[arg(long, value_enum)]
    pub channel_mode: Option<ChannelModeArg>,
    /// Also write the low-rank and |sparse| layers.
    #[arg(long)]
    pub emit_layers: bool,
    /// Clean image; enables PSNR reporting and the CSV row.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Metrics file (default: `metrics.csv` next to the output).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, env = "ROBUST_ALOHA_THREADS")]
    pub threads: Option<usize>,
    /// ADMM stopping tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub lmafit_tol: Option<f64>,
    #[arg(long)]
    pub inpaint_lmafit_tol: Option<f64>,
    #[arg(long)]
    pub lmafit_max_rank: Option<usize>,
    #[arg(long)]
    pub amf_max_window: Option<usize>,
    /// Use the multiplicity-weighted X update.
    #[arg(long)]
    pub exact_x: bool,
    /// Decompose raw patches without lifting (ablation).
    #[arg(long)]
    pub no_lift: bool,
}

#[derive(Debug, Args)]
pub struct PsnrArgs {
    pub reference: PathBuf,
    pub candidate: PathBuf,
}

/// Everything needed to regenerate an output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub input: PathBuf,
    pub outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub options: Option<DenoiseOptions>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub bit_depth: u32,
    pub timestamp_unix: u64,
    pub version: String,
}

#[derive(Debug, Serialize)]
pub struct GridSummary {
    pub image_rows: usize,
    pub image_cols: usize,
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub stride_rows: usize,
    pub stride_cols: usize,
    pub patches: usize,
}

impl From<&PatchGrid> for GridSummary {
    fn from(g: &PatchGrid) -> Self {
        Self {
            image_rows: g.image_rows,
            image_cols: g.image_cols,
            patch_rows: g.patch_rows,
            patch_cols: g.patch_cols,
            stride_rows: g.stride_rows,
            stride_cols: g.stride_cols,
            patches: g.origins.len(),
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<AlohaError> for CliError {
    fn from(e: AlohaError) -> Self {
        let code = match e.root() {
            AlohaError::Divergence { .. } => EXIT_DIVERGENCE,
            AlohaError::Image(ImageError::ChannelMismatch { .. }) => EXIT_CONFIG,
            AlohaError::Image(_) => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        AlohaError::from(e).into()
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let recorded: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, &recorded) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: Cli, args: &[String]) -> CliResult<()> {
    match cli.command {
        Command::AddNoise(a) => cmd_add_noise(&a, args),
        Command::Denoise(a) => cmd_denoise(&a, args),
        Command::Psnr(a) => cmd_psnr(&a),
    }
}

fn depth_of(image: &ImageBuffer) -> BitDepth {
    match image.provenance.as_ref().map(|p| p.maxval) {
        Some(m) if m > 255 => BitDepth::Sixteen,
        _ => BitDepth::Eight,
    }
}

/// `dir/name.ext` → `dir/name.<tag>.ext`.
pub fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn write_manifest(output: &Path, manifest: &RunManifest) -> CliResult<()> {
    let path = manifest_path(output);
    let body = serde_json::to_string_pretty(manifest)
        .map_err(|e| CliError::config(format!("manifest: {e}")))?;
    std::fs::write(&path, body + "\n").map_err(|e| CliError {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    })
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn save_planes(path: &Path, planes: &[nalgebra::DMatrix<f64>], depth: BitDepth) -> CliResult<()> {
    let image = ImageBuffer::from_planes(planes)?;
    imageio::save(path, &image, depth)?;
    Ok(())
}

pub fn cmd_add_noise(a: &AddNoiseArgs, args: &[String]) -> CliResult<()> {
    if !(0.0..=1.0).contains(&a.p) {
        return Err(CliError::config(format!("--p must lie in [0, 1], got {}", a.p)));
    }
    let spec = NoiseSpec {
        kind: a.kind.into(),
        density: a.p,
        d_min: a.d_min,
        d_max: a.d_max,
        seed: a.seed,
        channel_locations: match a.locations {
            LocationsArg::Independent => ChannelLocations::Independent,
            LocationsArg::Common => ChannelLocations::Common,
        },
    };
    spec.validate()
        .map_err(|e| CliError::config(format!("--d-min/--d-max: {e}")))?;

    let image = imageio::load(&a.input)?;
    let depth = depth_of(&image);
    let (noisy, masks) = add_noise(&image.planes(), &spec)?;
    let mask_planes: Vec<_> = masks
        .iter()
        .map(|m| m.map(|b| if b { 1.0 } else { 0.0 }))
        .collect();
    let mask_path = a.mask.clone().unwrap_or_else(|| sibling(&a.output, "mask"));

    save_planes(&a.output, &noisy, depth)?;
    save_planes(&mask_path, &mask_planes, depth)?;
    write_manifest(
        &a.output,
        &RunManifest {
            command: "add-noise".into(),
            args: args.to_vec(),
            input: a.input.clone(),
            outputs: vec![a.output.clone(), mask_path],
            noise: Some(spec),
            solver: None,
            options: None,
            grid: None,
            preset: None,
            seed: Some(a.seed),
            bit_depth: depth.bits(),
            timestamp_unix: now_unix(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
    )
}

fn positive(name: &str, v: Option<f64>) -> CliResult<Option<f64>> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => {
            Err(CliError::config(format!("{name} must be positive, got {x}")))
        }
        _ => Ok(v),
    }
}

/// Solver settings and stride after applying preset and flags.
pub fn resolve_denoise_config(a: &DenoiseArgs, channels: usize) -> CliResult<(SolverConfig, usize)> {
    if let Some(p) = a.p {
        if !(0.0..=1.0).contains(&p) {
            return Err(CliError::config(format!("--p must lie in [0, 1], got {p}")));
        }
    }
    let high_noise = a.p.is_some_and(|p| p >= HIGH_NOISE_THRESHOLD);
    let preset = a.preset.unwrap_or(Preset::Default).values(high_noise);

    let patch = a.patch.unwrap_or(preset.patch);
    let filter = a.filter.unwrap_or(preset.filter);
    let filter_shape = HankelShape::square(patch, filter)
        .map_err(|e| CliError::config(format!("--patch/--filter: {e}")))?;
    let stride = match (a.stride, a.patch) {
        (Some(s), _) => s,
        (None, Some(p)) => crate::pipeline::default_stride(p),
        (None, None) => preset.stride,
    };
    if stride == 0 || stride > patch {
        return Err(CliError::config(format!(
            "--stride must lie in 1..={patch}, got {stride}"
        )));
    }
    let tau = a.tau.unwrap_or(preset.tau);
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(CliError::config(format!("--tau must be >= 0, got {tau}")));
    }
    if a.max_iters == Some(0) {
        return Err(CliError::config("--max-iters must be at least 1"));
    }

    let defaults = SolverConfig::default();
    let channel_mode = match a.channel_mode {
        Some(m) => m.into(),
        None if channels > 1 => ChannelMode::Independent,
        None => ChannelMode::Single,
    };
    let cfg = SolverConfig {
        tau,
        mu: positive("--mu", a.mu)?.unwrap_or(defaults.mu),
        beta: positive("--beta", a.beta)?.unwrap_or(defaults.beta),
        max_admm_iters: a.max_iters.unwrap_or(defaults.max_admm_iters),
        admm_tol: positive("--tol", a.tol)?.unwrap_or(defaults.admm_tol),
        lmafit_tol: positive("--lmafit-tol", a.lmafit_tol)?.unwrap_or(preset.lmafit_tol),
        inpaint_lmafit_tol: positive("--inpaint-lmafit-tol", a.inpaint_lmafit_tol)?
            .unwrap_or(defaults.inpaint_lmafit_tol),
        lmafit_max_rank: a.lmafit_max_rank.or(defaults.lmafit_max_rank),
        channel_mode,
        filter: filter_shape,
        x_update: if a.exact_x { XUpdate::Exact } else { XUpdate::Averaged },
        structure: if a.no_lift { Structure::Raw } else { Structure::Hankel },
        ..defaults
    };
    cfg.validate()?;
    Ok((cfg, stride))
}

pub fn cmd_denoise(a: &DenoiseArgs, args: &[String]) -> CliResult<()> {
    if a.threads == Some(0) {
        return Err(CliError::config("--threads must be at least 1"));
    }
    let image = imageio::load(&a.input)?;
    let depth = depth_of(&image);
    let (cfg, stride) = resolve_denoise_config(a, image.channels)?;
    let patch = cfg.filter.patch_rows;
    let grid = plan_grid((image.height, image.width), (patch, patch), (stride, stride))
        .map_err(|e| CliError::config(format!("--patch/--stride: {e}")))?;
    let mut amf = AmfParams::default();
    if let Some(w) = a.amf_max_window {
        amf.max_window = w;
    }
    let options = DenoiseOptions {
        mode: NoiseKind::from(a.mode).into(),
        amf,
        threads: a.threads,
    };

    let planes = image.planes();
    let started = Instant::now();
    let out = denoise_image(&planes, &cfg, &grid, &options)?;
    let seconds = started.elapsed().as_secs_f64();

    save_planes(&a.output, &out.clean, depth)?;
    let mut outputs = vec![a.output.clone()];
    if a.emit_layers {
        let x_path = sibling(&a.output, "x");
        let e_path = sibling(&a.output, "e");
        let sparse: Vec<_> = out.sparse.iter().map(|p| p.map(|v| v.clamp(0.0, 1.0))).collect();
        save_planes(&x_path, &out.clean, depth)?;
        save_planes(&e_path, &sparse, depth)?;
        outputs.push(x_path);
        outputs.push(e_path);
        if let Some(masks) = &out.detected {
            let d_path = sibling(&a.output, "detected");
            let planes: Vec<_> = masks.iter().map(|m| m.map(|b| if b { 1.0 } else { 0.0 })).collect();
            save_planes(&d_path, &planes, depth)?;
            outputs.push(d_path);
        }
    }

    if let Some(reference) = &a.reference {
        let clean = imageio::load_expecting(reference, image.channels)?;
        let report = metrics::psnr(&clean.planes(), &out.clean)?;
        print!("{}", report.to_kv());
        let csv = a.csv.clone().unwrap_or_else(|| a.output.with_file_name("metrics.csv"));
        let row = CsvRow {
            image: a.input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            noise_kind: match options.mode {
                DenoiseMode::Rvin => "rvin".into(),
                DenoiseMode::SaltPepper => "salt_pepper".into(),
            },
            p: a.p,
            seed: a.seed,
            method: match options.mode {
                DenoiseMode::Rvin => "robust_aloha".into(),
                DenoiseMode::SaltPepper => "am_aloha".into(),
            },
            psnr_db: report.psnr_db,
            seconds,
        };
        append_csv(&csv, &row)?;
        outputs.push(csv);
    }

    write_manifest(
        &a.output,
        &RunManifest {
            command: "denoise".into(),
            args: args.to_vec(),
            input: a.input.clone(),
            outputs,
            noise: None,
            solver: Some(cfg),
            options: Some(options),
            grid: Some(GridSummary::from(&grid)),
            preset: a.preset,
            seed: a.seed,
            bit_depth: depth.bits(),
            timestamp_unix: now_unix(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
    )
}

fn append_csv(path: &Path, row: &CsvRow) -> CliResult<()> {
    let io = |e: std::io::Error| CliError {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    };
    let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    if fresh {
        writeln!(file, "{CSV_HEADER}").map_err(io)?;
    }
    writeln!(file, "{}", row.to_line()).map_err(io)
}

pub fn cmd_psnr(a: &PsnrArgs) -> CliResult<()> {
    let reference = imageio::load(&a.reference)?;
    let candidate = imageio::load(&a.candidate)?;
    if (reference.width, reference.height, reference.channels)
        != (candidate.width, candidate.height, candidate.channels)
    {
        return Err(CliError::config(format!(
            "size mismatch: reference {}x{}x{}, candidate {}x{}x{}",
            reference.width,
            reference.height,
            reference.channels,
            candidate.width,
            candidate.height,
            candidate.channels
        )));
    }
    let report = metrics::psnr(&reference.planes(), &candidate.planes())?;
    print!("{}", report.to_kv());
    Ok(())
}
