//! `roicrypt` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 data (parse/dims/io), 3 wrong key,
//! 4 integrity failure.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::{self, BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use roicrypt::bench::{emit_csv, emit_dat, run_bench, BenchConfig, BenchError};
use roicrypt::henon::{derive_schedule, HenonParams, KeySchedule, DEFAULT_BURN_IN};
use roicrypt::mask::{
    default_foreground, dice, load_mask, merge_labels, threshold_segment, LabelVolume, MaskError,
    RoiMask,
};
use roicrypt::metrics::{MetricsError, MetricsReport};
use roicrypt::nifti::{read_volume, write_volume, Datatype, NiftiError};
use roicrypt::vault::{read_manifest, retrieve_with_schedule, store, VaultError};

pub const KEY_ENV: &str = "ROICRYPT_KEY";

const KEY_HELP: &str = "The passphrase is read from the environment variable named by --key-env \
(default ROICRYPT_KEY). If it is unset, it is prompted for on the terminal or read as one line \
from standard input. It is never accepted as a command-line argument.";

pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const WRONG_KEY: i32 = 3;
    pub const INTEGRITY: i32 = 4;
}

#[derive(Debug, Parser)]
#[command(
    name = "roicrypt",
    version,
    about = "Selective ROI encryption for NIfTI volumes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    /// Otsu threshold, largest component, closing, hole filling
    Threshold,
    /// Merge integer labels into one foreground
    Labels,
    /// Re-binarize an existing mask (nonzero → 1)
    File,
}

#[derive(Debug, clap::Args)]
struct KeyArgs {
    /// Use the literal initial conditions x0 = 0.1, y0 = 0.1 instead of a passphrase
    #[arg(long)]
    paper_key: bool,
    /// Environment variable holding the passphrase
    #[arg(long, value_name = "VAR", default_value = KEY_ENV)]
    key_env: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Produce a binary ROI mask
    Segment {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "threshold")]
        method: Method,
        #[arg(short, long)]
        output: PathBuf,
        /// Foreground labels for --method labels, e.g. "1-10" or "1,2,5"
        #[arg(long)]
        labels: Option<String>,
    },
    /// Encrypt the ROI of a volume into a new vault entry
    #[command(after_help = KEY_HELP)]
    Encrypt {
        input: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Vault entry directory to create
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BURN_IN)]
        burn_in: u64,
        #[command(flatten)]
        key: KeyArgs,
    },
    /// Restore the original volume from a vault entry
    #[command(after_help = KEY_HELP)]
    Decrypt {
        vault: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        key: KeyArgs,
    },
    /// Quality metrics between two volumes
    Metrics {
        a: PathBuf,
        b: PathBuf,
        /// Restrict all metrics to voxels under this mask
        #[arg(long)]
        roi: Option<PathBuf>,
        /// PSNR/SSIM peak (default: datatype maximum)
        #[arg(long)]
        peak: Option<f64>,
        #[arg(long)]
        csv: bool,
    },
    /// Dice overlap of two masks
    Dice { a: PathBuf, b: PathBuf },
    /// Time selective vs full cipher passes
    Bench {
        /// Extents, e.g. 256x256x64
        #[arg(long, default_value = "256x256x64")]
        dims: String,
        #[arg(long, default_value = "u16")]
        datatype: Datatype,
        /// Comma-separated ascending fractions in [0, 1]
        #[arg(long, default_value = "0.05,0.1,0.2,0.25,0.3,0.5,0.8,1.0")]
        roi_fracs: String,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_BURN_IN)]
        burn_in: u64,
        /// CSV output; a two-column .dat file is written alongside
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// A failed command, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(m: impl Into<String>) -> Self {
        Failure {
            code: exit::USAGE,
            message: m.into(),
        }
    }
    fn data(m: impl ToString) -> Self {
        Failure {
            code: exit::DATA,
            message: m.to_string(),
        }
    }
}

impl From<NiftiError> for Failure {
    fn from(e: NiftiError) -> Self {
        Failure::data(e)
    }
}

impl From<MaskError> for Failure {
    fn from(e: MaskError) -> Self {
        Failure::data(e)
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure::data(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::data(e)
    }
}

impl From<VaultError> for Failure {
    fn from(e: VaultError) -> Self {
        let code = match e {
            VaultError::WrongKey => exit::WRONG_KEY,
            VaultError::CorruptEntry(_) => exit::INTEGRITY,
            _ => exit::DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::InvalidConfig(_) => Failure::usage(e.to_string()),
            other => Failure::data(other),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => exit::OK,
        Err(f) => {
            let _ = writeln!(err, "roicrypt: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> CmdResult {
    match cmd {
        Command::Segment {
            input,
            method,
            output,
            labels,
        } => cmd_segment(&input, method, &output, labels.as_deref(), out),
        Command::Encrypt {
            input,
            mask,
            output,
            burn_in,
            key,
        } => cmd_encrypt(&input, &mask, &output, burn_in, &key, out),
        Command::Decrypt { vault, output, key } => cmd_decrypt(&vault, &output, &key, out),
        Command::Metrics {
            a,
            b,
            roi,
            peak,
            csv,
        } => cmd_metrics(&a, &b, roi.as_deref(), peak, csv, out),
        Command::Dice { a, b } => cmd_dice(&a, &b, out),
        Command::Bench {
            dims,
            datatype,
            roi_fracs,
            reps,
            warmup,
            seed,
            burn_in,
            output,
        } => {
            let cfg = BenchConfig {
                dims: parse_dims(&dims)?,
                datatype,
                roi_fractions: parse_fractions(&roi_fracs)?,
                repetitions: reps,
                warmup,
                seed,
                burn_in,
            };
            cmd_bench(&cfg, output.as_deref(), out)
        }
    }
}

/// Parse a label set like `1-10` or `1,2,5-7`.
pub fn parse_labels(s: &str) -> Result<BTreeSet<u8>, String> {
    let mut set = BTreeSet::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |t: &str| {
            t.trim()
                .parse::<u8>()
                .map_err(|_| format!("bad label `{t}`"))
        };
        match part.split_once('-') {
            Some((lo, hi)) => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if lo > hi {
                    return Err(format!("empty label range `{part}`"));
                }
                set.extend(lo..=hi);
            }
            None => {
                set.insert(num(part)?);
            }
        }
    }
    if set.is_empty() {
        return Err("no labels given".into());
    }
    Ok(set)
}

fn parse_dims(s: &str) -> Result<Vec<usize>, Failure> {
    s.split(['x', 'X', ','])
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Failure::usage(format!("bad --dims `{s}` (expected e.g. 256x256x64)")))
}

fn parse_fractions(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Failure::usage(format!("bad --roi-fracs `{s}`")))
}

fn cmd_segment(
    input: &Path,
    method: Method,
    output: &Path,
    labels: Option<&str>,
    out: &mut dyn Write,
) -> CmdResult {
    let v = read_volume(input)?;
    let mask = match method {
        Method::Threshold => threshold_segment(&v)?,
        Method::Labels => {
            let fg = match labels {
                Some(s) => parse_labels(s).map_err(Failure::usage)?,
                None => default_foreground(),
            };
            merge_labels(&LabelVolume::from_volume(&v)?, &fg)?
        }
        Method::File => RoiMask::from_volume(&v),
    };
    write_volume(output, &mask.to_volume(&v.spacing)?)?;
    writeln!(
        out,
        "roi_voxels {} roi_fraction {:.6}",
        mask.roi_count(),
        mask.roi_fraction()
    )?;
    Ok(())
}

/// Read the passphrase from the named environment variable, the terminal,
/// or one line of standard input.
fn read_passphrase(var: &str) -> Result<Vec<u8>, Failure> {
    let pass = match std::env::var_os(var) {
        Some(v) => v
            .into_string()
            .map_err(|_| Failure::usage(format!("{var} is not valid UTF-8")))?,
        None if io::stdin().is_terminal() => rpassword::prompt_password("passphrase: ")?,
        None => {
            let mut line = String::new();
            io::stdin().lock().read_line(&mut line)?;
            line.trim_end_matches(['\r', '\n']).to_string()
        }
    };
    if pass.is_empty() {
        return Err(Failure::usage(format!(
            "empty passphrase (set {var} or enter one at the prompt)"
        )));
    }
    Ok(pass.into_bytes())
}

fn schedule(key: &KeyArgs, burn_in: u64) -> Result<KeySchedule, Failure> {
    if key.paper_key {
        return Ok(KeySchedule::literal(burn_in));
    }
    let pass = read_passphrase(&key.key_env)?;
    derive_schedule(&pass, HenonParams::default(), burn_in)
        .map_err(|e| Failure::from(VaultError::from(e)))
}

fn cmd_encrypt(
    input: &Path,
    mask: &Path,
    output: &Path,
    burn_in: u64,
    key: &KeyArgs,
    out: &mut dyn Write,
) -> CmdResult {
    let v = read_volume(input)?;
    let m = load_mask(&std::fs::read(mask)?, &v.dims)?;
    let ks = schedule(key, burn_in)?;
    let entry = store(&v, &m, &ks, output)?;
    writeln!(
        out,
        "roi_fraction {:.6} keystream_bytes {}",
        entry.manifest.roi_fraction, entry.keystream_bytes
    )?;
    Ok(())
}

fn cmd_decrypt(vault: &Path, output: &Path, key: &KeyArgs, out: &mut dyn Write) -> CmdResult {
    let manifest = read_manifest(vault)?;
    let ks = schedule(key, manifest.burn_in)?;
    let t0 = Instant::now();
    let v = retrieve_with_schedule(vault, &ks)?;
    let elapsed = t0.elapsed().as_secs_f64();
    write_volume(output, &v)?;
    writeln!(out, "decrypt_seconds {elapsed:.6}")?;
    Ok(())
}

fn cmd_metrics(
    a: &Path,
    b: &Path,
    roi: Option<&Path>,
    peak: Option<f64>,
    csv: bool,
    out: &mut dyn Write,
) -> CmdResult {
    let va = read_volume(a)?;
    let vb = read_volume(b)?;
    let mask = match roi {
        Some(p) => Some(load_mask(&std::fs::read(p)?, &va.dims)?),
        None => None,
    };
    let report = MetricsReport::compute(&va, &vb, peak, mask.as_ref())?;
    if csv {
        write!(out, "{}", report.to_csv())?;
    } else {
        writeln!(out, "{report}")?;
    }
    Ok(())
}

fn cmd_dice(a: &Path, b: &Path, out: &mut dyn Write) -> CmdResult {
    let ma = RoiMask::from_volume(&read_volume(a)?);
    let mb = RoiMask::from_volume(&read_volume(b)?);
    writeln!(out, "dice {:.6}", dice(&ma, &mb)?)?;
    Ok(())
}

fn cmd_bench(cfg: &BenchConfig, output: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    cfg.validate()?;
    let report = run_bench(cfg)?;
    write!(out, "{}", report.to_table())?;
    if let Some(path) = output {
        emit_csv(&report, path)?;
        emit_dat(&report, &path.with_extension("dat"))?;
    }
    Ok(())
}
