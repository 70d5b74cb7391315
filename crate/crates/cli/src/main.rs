use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use slmm::commands::{self, CompareOptions, CsvKind, ImportOptions};
use slmm::config::{parse_method, parse_snr, Overrides};
use slmm::{CliError, Container, Result, RunConfig};

/// Factor analysis of dynamic PET images with a spatially varying
/// specific-binding factor.
///
/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
#[derive(Debug, Parser)]
#[command(name = "slmm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Leave wall-clock measurements out of the outputs.
    #[arg(long)]
    deterministic: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Log solver costs every N iterations (0 disables).
    #[arg(long, value_name = "N")]
    log_every: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom bundle.
    Phantom {
        #[command(flatten)]
        common: Common,
        /// Signal-to-noise ratio in dB, or `inf` for no noise.
        #[arg(long, value_name = "DB|inf")]
        snr: Option<String>,
    },
    /// Unmix the image of a container with one method.
    Unmix {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
        /// slmm, lmm, nmf or kmeans.
        #[arg(long)]
        method: Option<String>,
        /// Container with `nominal` and `V` sections, overriding the input's.
        #[arg(long)]
        basis: Option<PathBuf>,
    },
    /// Score result containers against a phantom bundle.
    Eval {
        truth: PathBuf,
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Axial slice of the exported maps (default: middle).
        #[arg(long)]
        slice: Option<usize>,
    },
    /// Run every method on repeated noise realizations of one phantom.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Restrict to these methods (repeatable).
        #[arg(long)]
        method: Vec<String>,
        #[arg(long, value_name = "R")]
        realizations: Option<usize>,
        #[arg(long, value_name = "DB|inf")]
        snr: Option<String>,
        /// Worker threads (default: one per core).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Convert a CSV TAC matrix into a container.
    ImportCsv {
        input: PathBuf,
        /// Output container file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Image)]
        kind: Kind,
        /// Grid as NXxNYxNZ, e.g. 32x32x16.
        #[arg(long)]
        dims: Option<String>,
        #[arg(long, default_value_t = 2.0)]
        voxel_size: f64,
        /// Comma-separated frame durations in seconds.
        #[arg(long)]
        frame_durations: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    /// Rows are voxels, columns are frames.
    Image,
    /// Rows are frames; nominal TAC then basis vectors.
    Basis,
}

fn load(config: Option<&PathBuf>, fallback: Option<RunConfig>) -> Result<RunConfig> {
    match config {
        Some(p) => RunConfig::load(p),
        None => Ok(fallback.unwrap_or_default()),
    }
}

fn overrides(common: &Common) -> Overrides {
    Overrides {
        seed: common.seed,
        deterministic: common.deterministic,
        out_dir: common.out.as_ref().map(|p| p.to_string_lossy().into_owned()),
        log_every: common.log_every,
        ..Overrides::default()
    }
}

fn parse_dims(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = s
        .split(['x', 'X', ','])
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--dims: cannot parse `{s}`")))?;
    <[usize; 3]>::try_from(parts).map_err(|_| CliError::Usage("--dims: expected three sizes".into()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom { common, snr } => {
            let mut cfg = load(common.config.as_ref(), None)?;
            let mut o = overrides(&common);
            o.snr_db = snr.as_deref().map(parse_snr).transpose()?;
            o.apply(&mut cfg)?;
            let path = commands::cmd_phantom(&cfg)?;
            println!("{}", path.display());
        }
        Command::Unmix {
            input,
            common,
            method,
            basis,
        } => {
            let embedded = match common.config {
                Some(_) => None,
                None => commands::embedded_config(&Container::read(&input)?)?,
            };
            let mut cfg = load(common.config.as_ref(), embedded)?;
            let mut o = overrides(&common);
            if let Some(m) = method {
                o.methods = vec![parse_method(&m)?];
            }
            o.apply(&mut cfg)?;
            let path = commands::cmd_unmix(&cfg, &input, basis.as_deref())?;
            println!("{}", path.display());
        }
        Command::Eval {
            truth,
            results,
            common,
            slice,
        } => {
            let mut cfg = load(common.config.as_ref(), None)?;
            let mut o = overrides(&common);
            o.slice = slice;
            o.apply(&mut cfg)?;
            let path = commands::cmd_eval(&cfg, &truth, &results)?;
            print!("{}", std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?);
        }
        Command::Compare {
            common,
            method,
            realizations,
            snr,
            threads,
        } => {
            let mut cfg = load(common.config.as_ref(), None)?;
            let mut o = overrides(&common);
            o.methods = method.iter().map(|m| parse_method(m)).collect::<Result<_>>()?;
            o.realizations = realizations;
            o.snr_db = snr.as_deref().map(parse_snr).transpose()?;
            o.apply(&mut cfg)?;
            let opts = CompareOptions {
                threads,
                ..CompareOptions::default()
            };
            if let Some((path, _)) = commands::cmd_compare(&cfg, opts)? {
                print!("{}", std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?);
            }
        }
        Command::ImportCsv {
            input,
            out,
            kind,
            dims,
            voxel_size,
            frame_durations,
            config,
        } => {
            let cfg = load(config.as_ref(), None)?;
            let frame_durations = frame_durations
                .map(|s| {
                    s.split(',')
                        .map(|p| p.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| CliError::Usage(format!("--frame-durations: cannot parse `{s}`")))
                })
                .transpose()?;
            let opts = ImportOptions {
                kind: match kind {
                    Kind::Image => CsvKind::Image,
                    Kind::Basis => CsvKind::Basis,
                },
                dims: dims.as_deref().map(parse_dims).transpose()?,
                voxel_size_mm: voxel_size,
                frame_durations,
            };
            let path = commands::cmd_import_csv(&cfg, &input, &out, &opts)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("slmm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
