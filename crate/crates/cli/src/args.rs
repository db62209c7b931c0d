use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "aperture-forge",
    version,
    about = "Design coded apertures, simulate defocus, estimate depth and deblur",
    after_help = "APERTURE_FORGE_THREADS caps worker threads (0 or unset = all cores)."
)]
pub struct Cli {
    /// Where to write the run manifest. Defaults to `manifest.json` in the
    /// output directory, `<out>.manifest.json` next to a single output file,
    /// or `<subcommand>.manifest.json` in the working directory.
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,

    /// Print tables as CSV instead of aligned text.
    #[arg(long, global = true)]
    pub csv: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Score an aperture: worst deblurring error and weakest scale separation.
    Evaluate(EvaluateArgs),
    /// Multi-objective search over 7x7 binary apertures.
    Search(SearchArgs),
    /// Blur images with aperture kernels and add noise.
    Simulate(SimulateArgs),
    /// Estimate a per-pixel blur-scale map from a single defocused image.
    Depth(DepthArgs),
    /// Deconvolve with one scale or with a scale map.
    Deblur(DeblurArgs),
    /// No-reference deblurring quality components.
    Quality(QualityArgs),
    /// Estimate the natural-image power-spectrum prior from a corpus.
    Prior(PriorArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Evaluate(_) => "evaluate",
            Command::Search(_) => "search",
            Command::Simulate(_) => "simulate",
            Command::Depth(_) => "depth",
            Command::Deblur(_) => "deblur",
            Command::Quality(_) => "quality",
            Command::Prior(_) => "prior",
        }
    }
}

/// Kernel source shared by the image-domain subcommands. With no flag the
/// bundled search result is used.
#[derive(Debug, Clone, Args, Serialize)]
#[group(multiple = false)]
pub struct KernelArgs {
    /// Aperture pattern file (7 rows of 7 `0`/`1` cells).
    #[arg(long, value_name = "FILE")]
    pub pattern: Option<PathBuf>,
    /// Directory of `psf_<s>.txt` kernel files.
    #[arg(long, value_name = "DIR")]
    pub bank: Option<PathBuf>,
    /// Conventional circular aperture (disk kernels).
    #[arg(long)]
    pub conventional: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ImagingArgs {
    /// Imaging config file of `key=value` lines; defaults apply otherwise.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Power-spectrum prior matrix; rescaled to unit mean. Its size is the
    /// working spectrum size. Defaults to the bundled 64x64 prior.
    #[arg(long, value_name = "FILE")]
    pub prior: Option<PathBuf>,
    /// Positive blur scales to score, `lo:hi` or a comma list.
    #[arg(long, default_value = "1:10")]
    pub scales: String,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "FILE", conflicts_with = "conventional")]
    pub pattern: Option<PathBuf>,
    /// Score the conventional aperture with `--throughput` open cells.
    #[arg(long)]
    pub conventional: bool,
    #[arg(long, default_value_t = 10)]
    pub throughput: usize,
    #[command(flatten)]
    pub imaging: ImagingArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SearchArgs {
    /// Output directory for `front.csv`, `trace.csv` and `selected.txt`.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1500)]
    pub population: usize,
    #[arg(long, default_value_t = 100)]
    pub generations: usize,
    #[arg(long, default_value_t = 0.9)]
    pub crossover: f64,
    /// Per-bit flip probability; 1/49 by default.
    #[arg(long)]
    pub mutation: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub imaging: ImagingArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Sharp input image (PGM).
    #[arg(long, value_name = "FILE", required_unless_present = "dead_leaves")]
    pub image: Option<PathBuf>,
    /// Use a synthetic dead-leaves scene of this size instead of `--image`.
    #[arg(long, value_name = "SIZE", conflicts_with = "image")]
    pub dead_leaves: Option<usize>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Signed blur scale for a single output.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "scales")]
    pub scale: Option<i32>,
    /// Scale of the right-hand region; turns the output into a two-region scene.
    #[arg(long, allow_hyphen_values = true, requires = "scale")]
    pub region_scale: Option<i32>,
    /// First column of the right-hand region; the image midpoint by default.
    #[arg(long, requires = "region_scale")]
    pub split: Option<usize>,
    /// Noise standard deviation for a single output.
    #[arg(long, default_value_t = 0.0, conflicts_with = "sigmas")]
    pub sigma: f64,
    /// Batch mode: scales as `lo:hi` or a comma list, crossed with `--sigmas`.
    #[arg(long, allow_hyphen_values = true, requires_all = ["sigmas", "out_dir"])]
    pub scales: Option<String>,
    /// Batch mode: comma list of noise levels.
    #[arg(long, requires = "scales")]
    pub sigmas: Option<String>,
    /// Seed of the single generator behind all noise (and the synthetic scene).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output PGM for a single simulation.
    #[arg(
        long,
        value_name = "FILE",
        required_unless_present = "out_dir",
        conflicts_with = "out_dir"
    )]
    pub out: Option<PathBuf>,
    /// Output directory for batch mode.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MrfArgs {
    #[arg(long, default_value_t = 1000.0)]
    pub lambda0: f64,
    #[arg(long, default_value_t = 0.006)]
    pub sigma_lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    pub gauss_std: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct DepthArgs {
    #[arg(long, value_name = "FILE")]
    pub image: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Candidate scales, `lo:hi` (zero skipped) or a comma list. Defaults to
    /// every kernel in `--bank`, or 1:10.
    #[arg(long, allow_hyphen_values = true)]
    pub scales: Option<String>,
    /// Noise level assumed by the Wiener deconvolutions.
    #[arg(long, default_value_t = 0.001)]
    pub sigma: f64,
    #[arg(long, default_value_t = aperture_forge::depth::DEFAULT_PATCH)]
    pub patch: usize,
    #[arg(long, default_value_t = aperture_forge::depth::DEFAULT_STRIDE)]
    pub stride: usize,
    #[command(flatten)]
    pub mrf: MrfArgs,
    /// Output directory for `depth.txt`, `depth_labels.pgm` and `raw.txt`.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    /// `sparse` or `wiener`.
    #[arg(long, default_value = "sparse")]
    pub method: String,
    #[arg(long, default_value_t = 2e-4)]
    pub reg: f64,
    #[arg(long, default_value_t = 8)]
    pub irls: usize,
    #[arg(long, default_value_t = 50)]
    pub cg: usize,
    /// Noise level used to build the Wiener regularizer.
    #[arg(long, default_value_t = 0.001)]
    pub sigma: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct DeblurArgs {
    #[arg(long, value_name = "FILE")]
    pub image: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Deconvolve the whole image at this signed scale.
    #[arg(
        long,
        allow_hyphen_values = true,
        required_unless_present = "depth",
        conflicts_with = "depth"
    )]
    pub scale: Option<i32>,
    /// Scale map from `depth` for spatially varying deconvolution.
    #[arg(long, value_name = "FILE")]
    pub depth: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct QualityArgs {
    /// The blurred observation.
    #[arg(long, value_name = "FILE")]
    pub blurred: PathBuf,
    /// A deblurred estimate to score against `--blurred`.
    #[arg(
        long,
        value_name = "FILE",
        required_unless_present = "scales",
        conflicts_with = "scales"
    )]
    pub deblurred: Option<PathBuf>,
    /// Instead, Wiener-deblur with every listed scale and score each result.
    #[arg(long, allow_hyphen_values = true)]
    pub scales: Option<String>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, default_value_t = 0.001)]
    pub sigma: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct PriorArgs {
    /// Corpus images (PGM). Without any, the bundled synthetic corpus at
    /// `--size` is used.
    #[arg(long, value_name = "FILE", num_args = 1..)]
    pub images: Vec<PathBuf>,
    /// Spectrum size; images are zero-padded to it.
    #[arg(long, default_value_t = aperture_forge::corpus::METRIC_SIZE)]
    pub size: usize,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}
