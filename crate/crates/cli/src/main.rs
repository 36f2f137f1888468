use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dctshield::perturb::{DEFAULT_SEED, DEFAULT_SIGMA};
use dctshield::{ColorPath, Error, PerturbKind};

mod commands;

/// Frequency-domain quantization defense toolkit.
#[derive(Parser, Debug)]
#[command(name = "dctshield", version)]
struct Cli {
    /// Worker threads for batch work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Print a machine-readable JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CodecArgs {
    /// Quantization table JSON, or `standard-jpeg` for the Annex K tables.
    #[arg(long, default_value = "standard-jpeg")]
    table: String,

    /// Quality scaling applied to the table (50 leaves it unchanged).
    #[arg(long, default_value_t = 50)]
    quality: u8,

    #[arg(long, default_value = "rgb")]
    color_path: ColorPath,

    /// Skip the 128 level shift before the forward DCT.
    #[arg(long)]
    no_level_shift: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-band DCT deviation statistics of a corpus or its residuals.
    Analyze {
        /// Benign image file or directory.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Adversarial counterparts of `--in` (paired by file name); the
        /// statistics are then those of the residuals.
        #[arg(long)]
        adv: Option<PathBuf>,
        /// Directory of `.dsr` residual files written by `perturb`.
        #[arg(long, conflicts_with_all = ["input", "adv"])]
        residuals: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "R,G,B,Y,Cb,Cr")]
        channels: Vec<dctshield::ChannelTag>,
        #[arg(long)]
        out: PathBuf,
        /// Also print `channel,band,delta` rows on stdout.
        #[arg(long)]
        csv: bool,
    },
    /// Band ratio and ordering from residual and benign statistics.
    Ratio {
        #[arg(long)]
        adv_stats: PathBuf,
        #[arg(long)]
        benign_stats: PathBuf,
        /// One channel name, or `rgb` for a shared R/G/B ordering.
        #[arg(long, default_value = "rgb")]
        channel: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: bool,
    },
    /// Add synthetic bounded perturbations, or check the DCT-domain bound.
    Perturb {
        #[arg(long = "in", required_unless_present = "verify_bound")]
        input: Option<PathBuf>,
        #[arg(long, required_unless_present = "verify_bound")]
        out: Option<PathBuf>,
        #[arg(long, default_value = "sign")]
        kind: PerturbKind,
        #[arg(long, default_value_t = 0.004)]
        eps: f64,
        #[arg(long, default_value_t = DEFAULT_SIGMA)]
        sigma: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Monte Carlo check of the DCT bound instead of perturbing images.
        #[arg(long)]
        verify_bound: bool,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
    },
    /// Grid search over (k, qs_af) and write design.json.
    Design {
        #[arg(long)]
        benign: PathBuf,
        #[arg(long)]
        adv: PathBuf,
        #[arg(long)]
        ratio: PathBuf,
        #[arg(long, default_value_t = 0.004)]
        eps: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the chosen quantization table here.
        #[arg(long)]
        table_out: Option<PathBuf>,
        /// External evaluator program; the built-in signal proxy otherwise.
        #[arg(long)]
        evaluator: Option<PathBuf>,
        /// Extra argument passed to the evaluator before the standard ones.
        #[arg(long = "evaluator-arg", allow_hyphen_values = true)]
        evaluator_args: Vec<String>,
        /// PSNR threshold (dB) of the built-in proxy.
        #[arg(long, default_value_t = dctshield::design::DEFAULT_PSNR_TAU)]
        tau: f64,
        #[arg(long, default_value = "rgb")]
        color_path: ColorPath,
        #[arg(long)]
        csv: bool,
    },
    /// Compress and decompress images.
    Defend {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        codec: CodecArgs,
    },
    /// Write quantized coefficient archives.
    Encode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        codec: CodecArgs,
    },
    /// Reconstruct images from archives written with the same codec flags.
    Decode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        codec: CodecArgs,
    },
    /// Quality-scale a table.
    ScaleTable {
        /// Table JSON, `standard-luma` or `standard-chroma`.
        #[arg(long)]
        table: String,
        #[arg(long)]
        quality: u8,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the compressed-plus-noise training family and its manifest.
    ExportAugment {
        #[arg(long = "in", required_unless_present = "validate")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        codec: CodecArgs,
        #[arg(long, value_delimiter = ',', default_values_t = dctshield::augment::DEFAULT_QUALITIES)]
        qualities: Vec<u8>,
        #[arg(long, default_value_t = DEFAULT_SIGMA)]
        sigma: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = dctshield::augment::DEFAULT_XI)]
        xi: f64,
        #[arg(long, default_value_t = dctshield::augment::DEFAULT_LEARNING_RATE)]
        lr: f64,
        #[arg(long, default_value_t = dctshield::augment::DEFAULT_DECAY)]
        decay: f64,
        #[arg(long, default_value_t = dctshield::augment::DEFAULT_EPOCHS)]
        epochs: u32,
        /// Check an existing export under `--out` instead of writing one.
        #[arg(long)]
        validate: bool,
    },
    /// Combine per-model score files into ensemble decisions (JSON lines).
    Vote {
        #[arg(long, num_args = 1.., required = true)]
        scores: Vec<PathBuf>,
        /// `average` or `majority`.
        #[arg(long, default_value = "average")]
        rule: dctshield::VoteRule,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare designed/standard tables on the RGB and YCbCr 4:2:0 paths.
    Ablate {
        #[arg(long)]
        benign: PathBuf,
        /// Adversarial images; generated with sign noise when omitted.
        #[arg(long)]
        adv: Option<PathBuf>,
        #[arg(long, default_value_t = 0.004)]
        eps: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Designed table JSON.
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value_t = 75)]
        jpeg_quality: u8,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: bool,
    },
}

/// 1 usage, 2 I/O, 3 invalid data or failed check, 4 external evaluator.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 1,
        Error::Evaluator { .. } => 4,
        e if e.is_io() => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    let json = cli.json;
    match commands::run(cli.command) {
        Ok(summary) => {
            if json {
                println!("{}", serde_json::to_string(&summary).expect("serializable summary"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e}");
            if json {
                let v = serde_json::json!({"format": 1, "error": e.to_string(), "code": code});
                println!("{v}");
            }
            ExitCode::from(code)
        }
    }
}
