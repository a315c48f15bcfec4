//! Timing harness: selective vs full cipher passes over a range of ROI
//! fractions.
//!
//! Each pass XORs into a pre-copied buffer, so timings cover keystream
//! burn-in and cipher work only. Buffer copies, data generation and file
//! I/O stay outside the timed region.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

use crate::fsutil::atomic_write;
use crate::henon::{derive_schedule, HenonParams, KeySchedule, DEFAULT_BURN_IN};
use crate::mask::{load_mask, synthetic_mask, MaskError, RoiMask};
use crate::nifti::{serialize_nifti, Datatype, NiftiError};
use crate::phantom::random_volume;
use crate::vault::{apply_keystream_in_place, VaultError};

pub const MIN_REPETITIONS: usize = 3;

pub const CSV_HEADER: &str = "roi_fraction,t_enc_selective,t_dec_selective,t_enc_full,t_dec_full,\
gain_dec_percent,keystream_bytes_selective,keystream_bytes_full,t_dec_selective_mask_load";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),
    #[error("malformed bench CSV: {0}")]
    BadCsv(String),
    #[error(transparent)]
    Vault(#[from] VaultError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub dims: Vec<usize>,
    pub datatype: Datatype,
    /// Ascending, each in `[0, 1]`.
    pub roi_fractions: Vec<f64>,
    pub repetitions: usize,
    pub warmup: usize,
    pub seed: u64,
    pub burn_in: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            dims: vec![256, 256, 64],
            datatype: Datatype::U16,
            roi_fractions: vec![0.05, 0.1, 0.2, 0.25, 0.3, 0.5, 0.8, 1.0],
            repetitions: 5,
            warmup: 1,
            seed: 42,
            burn_in: DEFAULT_BURN_IN,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::InvalidConfig(m));
        if self.dims.is_empty() || self.dims.contains(&0) {
            return bad(format!("dims must be positive, got {:?}", self.dims));
        }
        if self.repetitions < MIN_REPETITIONS {
            return bad(format!(
                "repetitions must be at least {MIN_REPETITIONS}, got {}",
                self.repetitions
            ));
        }
        if self.warmup < 1 {
            return bad("warmup must be at least 1".into());
        }
        if self.roi_fractions.is_empty() {
            return bad("no ROI fractions given".into());
        }
        if let Some(f) = self
            .roi_fractions
            .iter()
            .find(|f| !(0.0..=1.0).contains(*f))
        {
            return bad(format!("ROI fraction {f} outside [0, 1]"));
        }
        if self.roi_fractions.windows(2).any(|w| w[0] > w[1]) {
            return bad("ROI fractions must be sorted ascending".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub roi_fraction: f64,
    pub t_enc_selective: f64,
    pub t_dec_selective: f64,
    pub t_enc_full: f64,
    pub t_dec_full: f64,
    pub gain_dec_percent: f64,
    pub keystream_bytes_selective: u64,
    pub keystream_bytes_full: u64,
    /// Selective decryption including parsing the mask from NIfTI bytes.
    pub t_dec_selective_mask_load: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

pub fn gain_percent(t_full: f64, t_selective: f64) -> f64 {
    100.0 * (t_full - t_selective) / t_full
}

/// Median of a non-empty sample.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Pin the calling thread to the CPU it is running on. Best effort.
#[cfg(target_os = "linux")]
fn pin_to_current_core() {
    // SAFETY: cpu_set_t is plain data; the libc calls only read/write it.
    unsafe {
        let cpu = libc::sched_getcpu();
        if cpu < 0 {
            return;
        }
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(cpu as usize, &mut set);
        if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
            log::debug!("could not pin bench thread to cpu {cpu}");
        }
    }
}

#[cfg(not(target_os = "linux"))]
fn pin_to_current_core() {}

/// The timed operations of one row. All are in-place XOR passes over a
/// working buffer restored from `source` before each run.
#[derive(Clone, Copy)]
enum Pass {
    EncSelective,
    DecSelective,
    DecSelectiveMaskLoad,
    EncFull,
    DecFull,
}

const PASSES: [Pass; 5] = [
    Pass::EncSelective,
    Pass::DecSelective,
    Pass::DecSelectiveMaskLoad,
    Pass::EncFull,
    Pass::DecFull,
];

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    pin_to_current_core();
    let ks: KeySchedule = derive_schedule(b"roicrypt-bench", HenonParams::default(), cfg.burn_in)
        .map_err(VaultError::from)?;
    let plain = random_volume(&cfg.dims, cfg.datatype, cfg.seed);
    let bpv = plain.bytes_per_voxel();
    let full = RoiMask::full(&cfg.dims);

    let mut rows = Vec::with_capacity(cfg.roi_fractions.len());
    for &fraction in &cfg.roi_fractions {
        let mask = synthetic_mask(&cfg.dims, fraction, cfg.seed)?;
        let mask_bytes = serialize_nifti(&mask.to_volume(&plain.spacing)?)?;

        let mut cipher_sel = plain.voxel_data.clone();
        apply_keystream_in_place(&mut cipher_sel, bpv, &mask, &ks)?;
        let mut cipher_full = plain.voxel_data.clone();
        apply_keystream_in_place(&mut cipher_full, bpv, &full, &ks)?;

        let mut buf = plain.voxel_data.clone();
        let run = |pass: Pass, buf: &mut Vec<u8>| -> Result<(f64, u64)> {
            let source = match pass {
                Pass::EncSelective | Pass::EncFull => &plain.voxel_data,
                Pass::DecSelective | Pass::DecSelectiveMaskLoad => &cipher_sel,
                Pass::DecFull => &cipher_full,
            };
            buf.copy_from_slice(source);
            let t0 = Instant::now();
            let bytes = match pass {
                Pass::EncSelective | Pass::DecSelective => {
                    apply_keystream_in_place(buf, bpv, &mask, &ks)?
                }
                Pass::DecSelectiveMaskLoad => {
                    let m = load_mask(&mask_bytes, &cfg.dims)?;
                    apply_keystream_in_place(buf, bpv, &m, &ks)?
                }
                Pass::EncFull | Pass::DecFull => apply_keystream_in_place(buf, bpv, &full, &ks)?,
            };
            Ok((t0.elapsed().as_secs_f64(), bytes))
        };

        for _ in 0..cfg.warmup {
            for pass in PASSES {
                run(pass, &mut buf)?;
            }
        }
        // Passes are interleaved within each repetition so slow drift in
        // clock speed affects all of them alike.
        let mut samples = vec![Vec::with_capacity(cfg.repetitions); PASSES.len()];
        let mut bytes = [0u64; PASSES.len()];
        for _ in 0..cfg.repetitions {
            for (k, pass) in PASSES.into_iter().enumerate() {
                let (t, b) = run(pass, &mut buf)?;
                samples[k].push(t);
                bytes[k] = b;
            }
        }
        let med: Vec<f64> = samples.iter().map(|s| median(s)).collect();
        let (t_enc_selective, t_dec_selective, t_dec_selective_mask_load, t_enc_full, t_dec_full) =
            (med[0], med[1], med[2], med[3], med[4]);

        log::info!(
            "fraction {fraction}: dec selective {t_dec_selective:.6}s, dec full {t_dec_full:.6}s"
        );
        rows.push(BenchRow {
            roi_fraction: fraction,
            t_enc_selective,
            t_dec_selective,
            t_enc_full,
            t_dec_full,
            gain_dec_percent: gain_percent(t_dec_full, t_dec_selective),
            keystream_bytes_selective: bytes[0],
            keystream_bytes_full: bytes[3],
            t_dec_selective_mask_load,
        });
    }
    Ok(BenchReport { rows })
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{:.6}",
                r.roi_fraction,
                r.t_enc_selective,
                r.t_dec_selective,
                r.t_enc_full,
                r.t_dec_full,
                r.gain_dec_percent,
                r.keystream_bytes_selective,
                r.keystream_bytes_full,
                r.t_dec_selective_mask_load
            );
        }
        s
    }

    /// Two whitespace-separated columns: fraction and decryption gain.
    pub fn to_dat(&self) -> String {
        let mut s = String::from("# roi_fraction gain_dec_percent\n");
        for r in &self.rows {
            let _ = writeln!(s, "{} {:.6}", r.roi_fraction, r.gain_dec_percent);
        }
        s
    }

    /// Aligned table for terminals.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:>8} {:>12} {:>12} {:>12} {:>12} {:>9} {:>14}\n",
            "fraction",
            "enc_sel(s)",
            "dec_sel(s)",
            "enc_full(s)",
            "dec_full(s)",
            "gain(%)",
            "dec_sel+mask(s)"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>8.3} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>9.2} {:>14.6}",
                r.roi_fraction,
                r.t_enc_selective,
                r.t_dec_selective,
                r.t_enc_full,
                r.t_dec_full,
                r.gain_dec_percent,
                r.t_dec_selective_mask_load
            );
        }
        s
    }
}

pub fn emit_csv(r: &BenchReport, path: &Path) -> Result<()> {
    Ok(atomic_write(path, r.to_csv().as_bytes())?)
}

pub fn emit_dat(r: &BenchReport, path: &Path) -> Result<()> {
    Ok(atomic_write(path, r.to_dat().as_bytes())?)
}

pub fn parse_csv(text: &str) -> Result<BenchReport> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(BenchError::BadCsv("missing or unexpected header".into())),
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || BenchError::BadCsv(format!("row {}: {line}", n + 1));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(bad());
        }
        let f = |i: usize| cols[i].trim().parse::<f64>().map_err(|_| bad());
        let u = |i: usize| cols[i].trim().parse::<u64>().map_err(|_| bad());
        rows.push(BenchRow {
            roi_fraction: f(0)?,
            t_enc_selective: f(1)?,
            t_dec_selective: f(2)?,
            t_enc_full: f(3)?,
            t_dec_full: f(4)?,
            gain_dec_percent: f(5)?,
            keystream_bytes_selective: u(6)?,
            keystream_bytes_full: u(7)?,
            t_dec_selective_mask_load: f(8)?,
        });
    }
    Ok(BenchReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(fracs: &[f64]) -> BenchConfig {
        BenchConfig {
            dims: vec![32, 32, 8],
            roi_fractions: fracs.to_vec(),
            repetitions: 3,
            burn_in: 100,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(BenchConfig::default().validate().is_ok());
        for cfg in [
            BenchConfig {
                repetitions: 1,
                ..small(&[0.5])
            },
            BenchConfig {
                warmup: 0,
                ..small(&[0.5])
            },
            small(&[0.5, 0.2]),
            small(&[1.5]),
            small(&[-0.1]),
            small(&[]),
            BenchConfig {
                dims: vec![0, 4],
                ..small(&[0.5])
            },
        ] {
            assert!(
                matches!(cfg.validate(), Err(BenchError::InvalidConfig(_))),
                "{cfg:?}"
            );
        }
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn keystream_counters_follow_fraction() {
        let cfg = small(&[0.0, 0.25, 1.0]);
        let rep = run_bench(&cfg).unwrap();
        let total = 32 * 32 * 8 * 2u64;
        assert_eq!(rep.rows.len(), 3);
        for row in &rep.rows {
            assert_eq!(row.keystream_bytes_full, total);
            let ratio = row.keystream_bytes_selective as f64 / total as f64;
            assert!((ratio - row.roi_fraction).abs() <= 1.0 / (32.0 * 32.0 * 8.0));
            assert!(row.t_dec_full > 0.0 && row.t_dec_selective > 0.0);
        }
    }

    #[test]
    fn csv_round_trip() {
        let rep = run_bench(&small(&[0.1, 0.2, 0.3, 0.5, 0.6, 0.8, 1.0])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.csv");
        emit_csv(&rep, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 8);
        let back = parse_csv(&text).unwrap();
        for (a, b) in rep.rows.iter().zip(&back.rows) {
            assert_eq!(a.roi_fraction, b.roi_fraction);
            assert_eq!(a.keystream_bytes_selective, b.keystream_bytes_selective);
            assert!((a.t_dec_full - b.t_dec_full).abs() <= 5e-7);
            assert!((a.gain_dec_percent - b.gain_dec_percent).abs() <= 5e-7);
        }
        let fracs: Vec<f64> = back.rows.iter().map(|r| r.roi_fraction).collect();
        assert!(fracs.windows(2).all(|w| w[0] <= w[1]));

        let dat = dir.path().join("bench.dat");
        emit_dat(&rep, &dat).unwrap();
        assert_eq!(std::fs::read_to_string(dat).unwrap().lines().count(), 8);
    }

    #[test]
    fn rejects_bad_csv() {
        assert!(parse_csv("a,b\n").is_err());
        assert!(parse_csv(&format!("{CSV_HEADER}\n1,2,3\n")).is_err());
    }
}
