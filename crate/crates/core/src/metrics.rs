//! Full-reference image-quality metrics between two volumes.
//!
//! All arithmetic is in `f64` with pairwise summation, so results do not
//! depend on voxel datatype and are identical from run to run. Every metric
//! accepts an optional ROI mask restricting the scope to `roi == 1` voxels.
//!
//! ```
//! use roicrypt::metrics::{mse, psnr};
//! use roicrypt::nifti::{Datatype, Volume};
//!
//! let a = Volume::from_values(&[2, 1, 1], Datatype::U8, &[1.0; 3], &[10.0, 10.0]).unwrap();
//! let b = Volume::from_values(&[2, 1, 1], Datatype::U8, &[1.0; 3], &[13.0, 13.0]).unwrap();
//! assert_eq!(mse(&a, &b, None).unwrap(), 9.0);
//! assert!(psnr(&a, &a, None, None).unwrap().is_infinite());
//! ```

use std::fmt;

use thiserror::Error;

use crate::mask::RoiMask;
use crate::nifti::{Datatype, Volume};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("volume dims differ: {a:?} vs {b:?}")]
    DimsMismatch { a: Vec<usize>, b: Vec<usize> },
    #[error("volume datatypes differ: {a} vs {b}")]
    DatatypeMismatch { a: Datatype, b: Datatype },
    #[error("ROI mask is empty")]
    EmptyRoi,
    #[error("peak must be positive and finite, got {0}")]
    NonPositivePeak(f64),
    #[error("metric undefined: {0}")]
    DegenerateInput(&'static str),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Which SSIM expression to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SsimForm {
    /// Variances in the second denominator factor.
    #[default]
    Standard,
    /// Squared means repeated in the second denominator factor, as the
    /// formula is sometimes printed. Kept for comparison only.
    Printed,
}

/// Pairwise (cascade) sum; deterministic and more accurate than a running sum.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().fold(0.0, |acc, &x| acc + x);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Voxel values of both volumes within scope, after shape checks.
fn scoped(a: &Volume, b: &Volume, roi: Option<&RoiMask>) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.dims != b.dims {
        return Err(MetricsError::DimsMismatch {
            a: a.dims.clone(),
            b: b.dims.clone(),
        });
    }
    if a.datatype != b.datatype {
        return Err(MetricsError::DatatypeMismatch {
            a: a.datatype,
            b: b.datatype,
        });
    }
    match roi {
        None => Ok((a.values(), b.values())),
        Some(m) => {
            if m.dims() != a.dims.as_slice() {
                return Err(MetricsError::DimsMismatch {
                    a: a.dims.clone(),
                    b: m.dims().to_vec(),
                });
            }
            if m.roi_count() == 0 {
                return Err(MetricsError::EmptyRoi);
            }
            Ok(m.iter_ones().map(|i| (a.value(i), b.value(i))).unzip())
        }
    }
}

/// Default PSNR/SSIM peak: datatype maximum, or `max|a|` for `f32`.
pub fn default_peak(reference: &Volume) -> f64 {
    reference.datatype.max_value().unwrap_or_else(|| {
        reference
            .values()
            .iter()
            .fold(0.0, |m: f64, x| m.max(x.abs()))
    })
}

fn resolve_peak(a: &Volume, peak: Option<f64>) -> Result<f64> {
    let p = peak.unwrap_or_else(|| default_peak(a));
    if p > 0.0 && p.is_finite() {
        Ok(p)
    } else {
        Err(MetricsError::NonPositivePeak(p))
    }
}

fn mse_of(a: &[f64], b: &[f64]) -> f64 {
    let sq: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect();
    mean(&sq)
}

pub fn mse(a: &Volume, b: &Volume, roi: Option<&RoiMask>) -> Result<f64> {
    let (xa, xb) = scoped(a, b, roi)?;
    Ok(mse_of(&xa, &xb))
}

pub fn rmse(a: &Volume, b: &Volume, roi: Option<&RoiMask>) -> Result<f64> {
    mse(a, b, roi).map(f64::sqrt)
}

fn psnr_of(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Peak signal-to-noise ratio in decibels; `+inf` when the volumes agree.
pub fn psnr(a: &Volume, b: &Volume, peak: Option<f64>, roi: Option<&RoiMask>) -> Result<f64> {
    let peak = resolve_peak(a, peak)?;
    Ok(psnr_of(mse(a, b, roi)?, peak))
}

/// Population moments of a scoped pair.
#[derive(Debug, Clone, Copy)]
struct Moments {
    mu_a: f64,
    mu_b: f64,
    var_a: f64,
    var_b: f64,
    cov: f64,
}

impl Moments {
    fn of(a: &[f64], b: &[f64]) -> Moments {
        let (mu_a, mu_b) = (mean(a), mean(b));
        let da: Vec<f64> = a.iter().map(|x| x - mu_a).collect();
        let db: Vec<f64> = b.iter().map(|x| x - mu_b).collect();
        let prod = |u: &[f64], v: &[f64]| -> f64 {
            let p: Vec<f64> = u.iter().zip(v).map(|(x, y)| x * y).collect();
            mean(&p)
        };
        Moments {
            mu_a,
            mu_b,
            var_a: prod(&da, &da),
            var_b: prod(&db, &db),
            cov: prod(&da, &db),
        }
    }

    fn ssim(&self, c1: f64, c2: f64, form: SsimForm) -> f64 {
        let mu_ab = self.mu_a * self.mu_b;
        let mu_sq = self.mu_a * self.mu_a + self.mu_b * self.mu_b;
        let second = match form {
            SsimForm::Standard => self.var_a + self.var_b,
            SsimForm::Printed => mu_sq,
        };
        ((2.0 * mu_ab + c1) * (2.0 * self.cov + c2)) / ((mu_sq + c1) * (second + c2))
    }
}

/// Global SSIM with explicit stabilizing constants.
pub fn ssim_with_constants(
    a: &Volume,
    b: &Volume,
    c1: f64,
    c2: f64,
    form: SsimForm,
    roi: Option<&RoiMask>,
) -> Result<f64> {
    let (xa, xb) = scoped(a, b, roi)?;
    if xa.len() < 2 {
        return Err(MetricsError::DegenerateInput(
            "SSIM needs at least 2 voxels",
        ));
    }
    Ok(Moments::of(&xa, &xb).ssim(c1, c2, form))
}

/// Single-window SSIM over the whole scope, `C1 = (0.01·peak)²`,
/// `C2 = (0.03·peak)²`.
pub fn ssim_global(
    a: &Volume,
    b: &Volume,
    peak: Option<f64>,
    roi: Option<&RoiMask>,
) -> Result<f64> {
    let peak = resolve_peak(a, peak)?;
    let (c1, c2) = ssim_constants(peak);
    ssim_with_constants(a, b, c1, c2, SsimForm::Standard, roi)
}

pub fn ssim_constants(peak: f64) -> (f64, f64) {
    ((0.01 * peak).powi(2), (0.03 * peak).powi(2))
}

fn uqi_of(m: &Moments) -> Result<f64> {
    let var_sum = m.var_a + m.var_b;
    let mu_sq = m.mu_a * m.mu_a + m.mu_b * m.mu_b;
    if var_sum == 0.0 {
        return Err(MetricsError::DegenerateInput(
            "UQI undefined for zero variance",
        ));
    }
    if mu_sq == 0.0 {
        return Err(MetricsError::DegenerateInput(
            "UQI undefined for zero means",
        ));
    }
    Ok(4.0 * (m.mu_a * m.mu_b) * m.cov / (var_sum * mu_sq))
}

/// Universal quality index: SSIM with `C1 = C2 = 0`.
pub fn uqi(a: &Volume, b: &Volume, roi: Option<&RoiMask>) -> Result<f64> {
    let (xa, xb) = scoped(a, b, roi)?;
    if xa.len() < 2 {
        return Err(MetricsError::DegenerateInput("UQI needs at least 2 voxels"));
    }
    uqi_of(&Moments::of(&xa, &xb))
}

/// All metrics for one volume pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mse: f64,
    pub rmse: f64,
    /// `+inf` when `mse == 0`.
    pub psnr: f64,
    pub ssim: f64,
    /// `None` when UQI is undefined for the inputs (a constant volume).
    pub uqi: Option<f64>,
    pub peak: f64,
    pub roi_restricted: bool,
}

impl MetricsReport {
    pub fn compute(
        a: &Volume,
        b: &Volume,
        peak: Option<f64>,
        roi: Option<&RoiMask>,
    ) -> Result<Self> {
        let peak = resolve_peak(a, peak)?;
        let (xa, xb) = scoped(a, b, roi)?;
        let mse = mse_of(&xa, &xb);
        let m = Moments::of(&xa, &xb);
        let (c1, c2) = ssim_constants(peak);
        Ok(MetricsReport {
            mse,
            rmse: mse.sqrt(),
            psnr: psnr_of(mse, peak),
            ssim: m.ssim(c1, c2, SsimForm::Standard),
            uqi: if xa.len() < 2 { None } else { uqi_of(&m).ok() },
            peak,
            roi_restricted: roi.is_some(),
        })
    }

    pub fn psnr_is_infinite(&self) -> bool {
        self.psnr.is_infinite()
    }

    fn rows(&self) -> Vec<(&'static str, String)> {
        let fmt = |x: f64| {
            if x.is_infinite() {
                "inf".to_string()
            } else {
                format!("{x:.6}")
            }
        };
        vec![
            ("mse", fmt(self.mse)),
            ("rmse", fmt(self.rmse)),
            ("psnr", fmt(self.psnr)),
            ("ssim", fmt(self.ssim)),
            (
                "uqi",
                self.uqi.map(fmt).unwrap_or_else(|| "nan".to_string()),
            ),
        ]
    }

    /// CSV with header `metric,value,roi_restricted,peak`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value,roi_restricted,peak\n");
        for (name, value) in self.rows() {
            out.push_str(&format!(
                "{name},{value},{},{}\n",
                self.roi_restricted, self.peak
            ));
        }
        out
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>16}", "metric", "value")?;
        for (name, value) in self.rows() {
            writeln!(f, "{name:<8} {value:>16}")?;
        }
        writeln!(f, "{:<8} {:>16}", "peak", self.peak)?;
        write!(
            f,
            "{:<8} {:>16}",
            "scope",
            if self.roi_restricted { "roi" } else { "all" }
        )
    }
}
