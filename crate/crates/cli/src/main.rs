//! `flexq`: quantize, pack, multiply, benchmark, simulate and verify.

mod bench;
mod commands;
mod error;
mod output;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flexq_core::LayerKind;

#[derive(Debug, Parser)]
#[command(name = "flexq", version, about = "Bit-serial INT6/INT8 group-quantized GEMM toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic inputs: a random float tensor or a GLU layer-dump directory.
    #[command(subcommand)]
    Generate(GenerateCmd),
    /// Quantize a float tensor into a group-quantized tensor.
    Quantize(QuantizeArgs),
    /// Bit-plane decompose and pack a quantized tensor.
    Pack(PackArgs),
    /// Multiply activations by weights with the bit-serial engine.
    Gemm(GemmArgs),
    /// Time the engine over a shape suite or a tile-parameter sweep.
    Bench(BenchArgs),
    /// Simulate memory accesses of a tensor layout.
    Layout(LayoutArgs),
    /// Rank layers of a dump directory by quantization sensitivity.
    Sensitivity(SensitivityArgs),
    /// Run the built-in correctness suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Subcommand)]
pub enum GenerateCmd {
    /// Random float tensor.
    Tensor(GenTensorArgs),
    /// Synthetic GLU block (five layers) with a heavy-tailed down_proj input.
    GluFixture(GenFixtureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distribution {
    Normal,
    Uniform,
    StudentT,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct GenTensorArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Distribution::Normal)]
    pub dist: Distribution,
    /// Multiplier applied to every sample.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f32,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct GenFixtureArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub tokens: usize,
    /// Output directory (created if missing).
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Weight,
    Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Cols,
    Rows,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct QuantizeArgs {
    /// Float tensor (FLXQ kind 0).
    pub input: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Bit-width; defaults to 6, or to the policy's choice with --layer-kind.
    #[arg(long, conflicts_with = "layer_kind")]
    pub bits: Option<u8>,
    #[arg(long, default_value_t = 128)]
    pub group: usize,
    /// Resolve the bit-width from the policy for this layer kind.
    #[arg(long)]
    pub layer_kind: Option<LayerKind>,
    /// Layer name for per-layer policy overrides.
    #[arg(long, requires = "layer_kind")]
    pub layer_name: Option<String>,
    /// BitPolicy JSON; the built-in W6 / down_proj-A8 policy when omitted.
    #[arg(long, requires = "layer_kind")]
    pub policy: Option<PathBuf>,
    /// Whether the tensor holds weights or activations (selects the policy entry).
    #[arg(long, value_enum, default_value_t = Role::Activation)]
    pub role: Role,
    #[arg(long, value_enum, default_value_t = Axis::Cols)]
    pub axis: Axis,
    /// Store scales as IEEE half precision (scales are rounded to f16 first).
    #[arg(long)]
    pub f16_scales: bool,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct PackArgs {
    /// Quantized tensor (FLXQ kind 1).
    pub input: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Weights use 8-row chunks; activations use min(rows, 8).
    #[arg(long, value_enum, default_value_t = Role::Weight)]
    pub role: Role,
    #[arg(long, default_value_t = 64, value_parser = parse_word_bits)]
    pub word_bits: usize,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct GemmArgs {
    /// Weights `W[N, K]`: quantized (kind 1) or float (kind 0, quantized on load).
    #[arg(long)]
    pub weights: PathBuf,
    /// Activations `X[M, K]`: quantized (kind 1) or float (kind 0).
    #[arg(long)]
    pub acts: PathBuf,
    /// Float output `Y[M, N]`; a run manifest is written next to it.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub stages: usize,
    /// Worker threads; 0 uses every available core.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Compute with the direct integer reference instead of the bit-serial engine.
    #[arg(long)]
    pub oracle: bool,
    /// Bit-widths and group size used when an operand is a float tensor.
    #[arg(long, default_value_t = 6)]
    pub weight_bits: u8,
    #[arg(long, default_value_t = 6)]
    pub act_bits: u8,
    #[arg(long, default_value_t = 128)]
    pub group: usize,
    /// Tile shape as BM,BN,BK.
    #[arg(long, value_parser = parse_tiles)]
    pub tiles: Option<(usize, usize, usize)>,
}

fn parse_word_bits(s: &str) -> Result<usize, String> {
    match s {
        "32" => Ok(32),
        "64" => Ok(64),
        _ => Err(format!("{s:?} is not 32 or 64")),
    }
}

fn parse_tiles(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<usize> =
        s.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"))).collect::<Result<_, _>>()?;
    match parts[..] {
        [bm, bn, bk] => Ok((bm, bn, bk)),
        _ => Err("expected BM,BN,BK".into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    LlamaShapes,
    Sweep,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// Write the JSON report here (printed to stdout otherwise).
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Shrink shapes and repetitions for a fast smoke run.
    #[arg(long)]
    pub quick: bool,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 2)]
    pub stages: usize,
    /// Worker threads; 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args, serde::Serialize)]
#[group(required = true, multiple = false)]
pub struct LayoutMode {
    /// Layout description JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Check the FP16 / naive 6-bit / straddling utilization figures.
    #[arg(long)]
    pub golden: bool,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct LayoutArgs {
    #[command(flatten)]
    pub mode: LayoutMode,
    /// Memory model JSON; 32 banks x 32 bits, 128-byte transactions when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Write the report here (printed to stdout otherwise).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct SensitivityArgs {
    /// Directory holding manifest.json and the FLXQ tensors it names.
    pub dir: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub weight_bits: u8,
    #[arg(long, default_value_t = 6)]
    pub act_bits: u8,
    #[arg(long, default_value_t = 128)]
    pub group: usize,
    /// Number of most-sensitive layers promoted to --high-bits activations.
    #[arg(long, default_value_t = 1)]
    pub budget: usize,
    #[arg(long, default_value_t = 8)]
    pub high_bits: u8,
    /// Report JSON (printed to stdout otherwise).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Write the derived BitPolicy JSON here.
    #[arg(long)]
    pub policy_out: Option<PathBuf>,
    /// Worker threads; 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Add the exhaustive (p, q) in {2..8}^2 small-matrix sweep.
    #[arg(long)]
    pub full: bool,
    /// Also decode every .flxq file in this directory.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(GenerateCmd::Tensor(a)) => commands::generate_tensor(&a),
        Command::Generate(GenerateCmd::GluFixture(a)) => commands::generate_fixture(&a),
        Command::Quantize(a) => commands::quantize(&a),
        Command::Pack(a) => commands::pack(&a),
        Command::Gemm(a) => commands::gemm(&a),
        Command::Bench(a) => bench::run(&a),
        Command::Layout(a) => commands::layout(&a),
        Command::Sensitivity(a) => commands::sensitivity(&a),
        Command::Verify(a) => verify::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flexq: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
