//! Command-line driver for `polypath-core`.
//!
//! Exit status: 0 success, 1 invariant failure, 2 usage error, 3 I/O or
//! format error.

pub mod bench;
pub mod error;
pub mod files;
pub mod selftest;
pub mod viz;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use polypath_core::io::Tensor;
use polypath_core::rng::{seeded_random_field, seeded_token_field};
use polypath_core::{
    polyline_matvec, ChunkConfig, DType, DecayField2D, Grid2D, MaskVariant, MatvecConfig, MatvecMode, Real,
    TokenField,
};

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "polypath", version, about = "Polyline path masks: checks, benchmarks, visualization")]
pub struct Cli {
    /// Worker threads. Defaults to all cores, except `bench` which defaults to 1.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the invariant suite and print a pass/fail table.
    Selftest(SelftestArgs),
    /// Time masked multiplication across sizes and fit log-log slopes.
    Bench(BenchArgs),
    /// Render a decay field or mask as a PGM heatmap.
    Viz(VizArgs),
    /// Multiply a token file by a polyline mask.
    Matvec(MatvecArgs),
    /// Write a seeded random decay field.
    GenField(GenFieldArgs),
    /// Write seeded random token features.
    GenTokens(GenTokensArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    /// 64-bit.
    Wide,
    /// 32-bit.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Dense,
    Blockwise,
    Chunkwise,
}

impl From<ModeArg> for MatvecMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Dense => MatvecMode::Dense,
            ModeArg::Blockwise => MatvecMode::Blockwise,
            ModeArg::Chunkwise => MatvecMode::Chunkwise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    V2h,
    H2v,
    Combined,
}

impl From<VariantArg> for MaskVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::V2h => MaskVariant::V2H,
            VariantArg::H2v => MaskVariant::H2V,
            VariantArg::Combined => MaskVariant::Combined2D,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DTypeArg {
    F32,
    F64,
}

impl From<DTypeArg> for DType {
    fn from(d: DTypeArg) -> Self {
        match d {
            DTypeArg::F32 => DType::F32,
            DTypeArg::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, value_enum, default_value = "wide")]
    pub precision: Precision,

    /// Flip the sign of one computed value to exercise the failure path.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchOp {
    /// `polyline_matvec` on `C` channels.
    Matvec,
    /// Masked linear attention with `D = C`.
    Ppmla,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "matvec")]
    pub op: BenchOp,

    /// Comma-separated modes.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "dense,blockwise,chunkwise")]
    pub mode: Vec<ModeArg>,

    #[arg(long, value_enum, default_value = "v2h")]
    pub variant: VariantArg,

    /// Comma-separated token counts; each must be a perfect square.
    #[arg(long, value_delimiter = ',', default_value = "1024,4096,16384,65536")]
    pub sizes: Vec<usize>,

    /// Timed batches per size; the minimum is reported.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,

    #[arg(long, default_value_t = 1)]
    pub channels: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// CSV output path; records also go to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VizWhat {
    #[value(name = "alpha")]
    Alpha,
    #[value(name = "beta")]
    Beta,
    #[value(name = "L")]
    L,
    #[value(name = "Ltilde")]
    Ltilde,
    #[value(name = "L2D")]
    L2d,
    /// Lower 1D mask with the row-major alpha values as its decays.
    #[value(name = "mask1d")]
    Mask1d,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["field", "seed", "constant"])))]
pub struct VizArgs {
    /// Decay field file (PPTF, shape 2×H×W: alpha then beta).
    #[arg(long)]
    pub field: Option<PathBuf>,

    /// Draw a random field with this seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Use this value for every alpha and beta.
    #[arg(long)]
    pub constant: Option<f64>,

    #[arg(long, default_value_t = 8)]
    pub height: usize,

    #[arg(long, default_value_t = 8)]
    pub width: usize,

    #[arg(long, default_value_t = 0.0)]
    pub low: f64,

    #[arg(long, default_value_t = 1.0)]
    pub high: f64,

    #[arg(long, value_enum, ignore_case = true)]
    pub what: VizWhat,

    /// PGM output path.
    #[arg(long)]
    pub out: PathBuf,

    /// Also write the matrix as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatvecArgs {
    /// Decay field file (PPTF, shape 2×H×W).
    #[arg(long)]
    pub field: PathBuf,

    /// Token file (PPTF, shape H×W×C or H×W).
    #[arg(long)]
    pub x: PathBuf,

    #[arg(long, value_enum, default_value = "v2h")]
    pub variant: VariantArg,

    #[arg(long, value_enum, default_value = "chunkwise")]
    pub mode: ModeArg,

    #[arg(long, default_value_t = ChunkConfig::DEFAULT_CHUNK)]
    pub chunk_size: usize,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenFieldArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    #[arg(long, default_value_t = 0.0)]
    pub low: f64,
    #[arg(long, default_value_t = 1.0)]
    pub high: f64,
    #[arg(long, value_enum, default_value = "f64")]
    pub dtype: DTypeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenTokensArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long, value_enum, default_value = "f64")]
    pub dtype: DTypeArg,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` and runs the command, printing errors to stderr.
pub fn main_with_args<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("polypath: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let default_threads = match cli.command {
        Command::Bench(_) => Some(1),
        _ => None,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    match cli.threads.or(default_threads) {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => builder = builder.num_threads(n),
        None => {}
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Selftest(a) => cmd_selftest(&a),
        Command::Bench(a) => bench::cmd_bench(&a),
        Command::Viz(a) => viz::cmd_viz(&a),
        Command::Matvec(a) => cmd_matvec(&a),
        Command::GenField(a) => cmd_gen_field(&a),
        Command::GenTokens(a) => cmd_gen_tokens(&a),
    }
}

pub fn cmd_selftest(args: &SelftestArgs) -> CliResult<()> {
    let results = selftest::run_selftest(args.precision, args.inject_fault);
    let table = selftest::render_table(&results);
    print!("{table}");
    let _ = std::io::stdout().flush();
    let failed: Vec<&selftest::CheckResult> = results.iter().filter(|r| !r.passed).collect();
    if failed.is_empty() {
        return Ok(());
    }
    let names: Vec<String> = failed.iter().map(|r| format!("{} ({})", r.name, r.detail)).collect();
    Err(CliError::Invariant(names.join("; ")))
}

fn matvec_typed<T: Real>(args: &MatvecArgs, field: &Tensor, x: &Tensor) -> CliResult<Tensor> {
    let field_ctx = args.field.display().to_string();
    let x_ctx = args.x.display().to_string();
    let decay: DecayField2D<T> = files::decay_field_from_tensor(field).map_err(|e| CliError::from_core(&field_ctx, e))?;
    let x: TokenField<T> = files::token_field_from_tensor(x).map_err(|e| CliError::from_core(&x_ctx, e))?;
    if decay.grid() != x.grid() {
        return Err(CliError::Input(format!(
            "{field_ctx} is {}x{} but {x_ctx} is {}x{}",
            decay.grid().height(),
            decay.grid().width(),
            x.grid().height(),
            x.grid().width()
        )));
    }
    let chunk = ChunkConfig::new(args.chunk_size).map_err(|e| CliError::from_core("--chunk-size", e))?;
    let cfg = MatvecConfig {
        chunk,
        ..MatvecConfig::default()
    };
    let y = polyline_matvec(&decay, &x, args.variant.into(), args.mode.into(), &cfg)
        .map_err(|e| CliError::from_core("matvec", e))?;
    Ok(files::token_field_to_tensor(&y))
}

/// Computes in the precision of the token file.
pub fn cmd_matvec(args: &MatvecArgs) -> CliResult<()> {
    let field = files::read(&args.field)?;
    let x = files::read(&args.x)?;
    let y = match x.dtype() {
        DType::F32 => matvec_typed::<f32>(args, &field, &x)?,
        DType::F64 => matvec_typed::<f64>(args, &field, &x)?,
    };
    files::write(&args.out, &y)
}

fn grid_arg(height: usize, width: usize) -> CliResult<Grid2D> {
    Grid2D::new(height, width).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn cmd_gen_field(args: &GenFieldArgs) -> CliResult<()> {
    let grid = grid_arg(args.height, args.width)?;
    let field = seeded_random_field::<f64>(grid, args.seed, args.low, args.high)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let t = files::decay_field_to_tensor(&field).cast(args.dtype.into());
    files::write(&args.out, &t)
}

pub fn cmd_gen_tokens(args: &GenTokensArgs) -> CliResult<()> {
    let grid = grid_arg(args.height, args.width)?;
    if args.channels == 0 {
        return Err(CliError::Usage("--channels must be at least 1".into()));
    }
    let x = seeded_token_field::<f64>(grid, args.channels, args.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let t = files::token_field_to_tensor(&x).cast(args.dtype.into());
    files::write(&args.out, &t)
}
