//! Binary region-of-interest masks.
//!
//! A set bit means "protected": the cipher touches exactly those voxels.
//! Masks come from an external segmenter (via [`load_mask`]), from a label
//! map ([`merge_labels`]), from the classical [`threshold_segment`], or are
//! generated for benchmarks ([`synthetic_mask`]).

mod segment;

use std::collections::BTreeSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nifti::{self, Datatype, NiftiError, Volume};

pub use segment::{largest_component, threshold_segment};

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("dims mismatch: expected {expected:?}, got {actual:?}")]
    DimsMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("foreground label set is empty")]
    EmptyForeground,
    #[error("label {0} outside 0..=255")]
    LabelOutOfRange(f64),
    #[error("roi fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
    #[error("volume is constant; nothing to segment")]
    DegenerateVolume,
    #[error("segmentation needs a rank-3 volume, got rank {0}")]
    RankMismatch(usize),
    #[error(transparent)]
    Nifti(#[from] NiftiError),
}

pub type Result<T, E = MaskError> = std::result::Result<T, E>;

/// One bit per voxel, row-major with axis 1 fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    dims: Vec<usize>,
    words: Vec<u64>,
    len: usize,
    roi_count: usize,
}

impl RoiMask {
    pub fn empty(dims: &[usize]) -> Self {
        let len: usize = dims.iter().product();
        RoiMask {
            dims: dims.to_vec(),
            words: vec![0; len.div_ceil(64)],
            len,
            roi_count: 0,
        }
    }

    pub fn full(dims: &[usize]) -> Self {
        Self::from_fn(dims, |_| true)
    }

    /// Build from one flag per voxel. Panics if `bits` has the wrong length.
    pub fn from_bools(dims: &[usize], bits: &[bool]) -> Self {
        let len: usize = dims.iter().product();
        assert_eq!(bits.len(), len, "mask length does not match dims");
        Self::from_fn(dims, |i| bits[i])
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> bool) -> Self {
        let mut m = Self::empty(dims);
        for i in 0..m.len {
            if f(i) {
                m.words[i / 64] |= 1 << (i % 64);
            }
        }
        m.roi_count = m.popcount();
        m
    }

    /// Mask of the given linear indices.
    pub fn from_indices(dims: &[usize], indices: impl IntoIterator<Item = usize>) -> Self {
        let mut m = Self::empty(dims);
        for i in indices {
            assert!(i < m.len, "index {i} out of range");
            m.words[i / 64] |= 1 << (i % 64);
        }
        m.roi_count = m.popcount();
        m
    }

    fn popcount(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn roi_count(&self) -> usize {
        self.roi_count
    }

    pub fn roi_fraction(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            self.roi_count as f64 / self.len as f64
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Linear indices of set voxels, ascending.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let bit = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(wi * 64 + bit)
            })
        })
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    /// Cached count agrees with a fresh popcount.
    pub fn verify(&self) -> bool {
        self.roi_count == self.popcount() && self.words.len() == self.len.div_ceil(64)
    }

    /// Persistable U8 volume with values 0/1.
    pub fn to_volume(&self, spacing: &[f64]) -> nifti::Result<Volume> {
        let data = (0..self.len).map(|i| self.get(i) as u8).collect();
        nifti::ingest_raw(&self.dims, Datatype::U8, spacing, data)
    }

    /// Nonzero voxels of `v` become set bits.
    pub fn from_volume(v: &Volume) -> Self {
        Self::from_fn(&v.dims, |i| v.value(i) != 0.0)
    }
}

/// Integer label map (0 = background).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    pub dims: Vec<usize>,
    pub labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: &[usize], labels: Vec<u8>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if labels.len() != n {
            return Err(MaskError::Nifti(NiftiError::SizeMismatch {
                expected: n,
                actual: labels.len(),
            }));
        }
        Ok(LabelVolume {
            dims: dims.to_vec(),
            labels,
        })
    }

    /// Read labels from an integer volume; every value must be in 0..=255.
    pub fn from_volume(v: &Volume) -> Result<Self> {
        let labels = (0..v.len())
            .map(|i| {
                let x = v.value(i);
                if x.fract() == 0.0 && (0.0..=255.0).contains(&x) {
                    Ok(x as u8)
                } else {
                    Err(MaskError::LabelOutOfRange(x))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(&v.dims, labels)
    }
}

/// Labels 1 through 10: every tissue class, i.e. the whole brain.
pub fn default_foreground() -> BTreeSet<u8> {
    (1..=10).collect()
}

/// Set a bit wherever the label is in `foreground`.
pub fn merge_labels(lv: &LabelVolume, foreground: &BTreeSet<u8>) -> Result<RoiMask> {
    if foreground.is_empty() {
        return Err(MaskError::EmptyForeground);
    }
    let mut lut = [false; 256];
    for &l in foreground {
        lut[l as usize] = true;
    }
    Ok(RoiMask::from_fn(&lv.dims, |i| lut[lv.labels[i] as usize]))
}

fn check_dims(expected: &[usize], actual: &[usize]) -> Result<()> {
    if expected != actual {
        return Err(MaskError::DimsMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        });
    }
    Ok(())
}

/// Parse a NIfTI mask; any nonzero voxel is ROI.
pub fn load_mask(file_bytes: &[u8], expected_dims: &[usize]) -> Result<RoiMask> {
    let v = nifti::parse_nifti(file_bytes)?;
    check_dims(expected_dims, &v.dims)?;
    Ok(RoiMask::from_volume(&v))
}

/// `2|A∩B| / (|A| + |B|)`; 1.0 when both masks are empty.
pub fn dice(a: &RoiMask, b: &RoiMask) -> Result<f64> {
    check_dims(&a.dims, &b.dims)?;
    let inter: usize = a
        .words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x & y).count_ones() as usize)
        .sum();
    let denom = a.roi_count + b.roi_count;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / denom as f64)
}

/// A centred ellipsoid holding exactly `round(roi_fraction · n)` voxels.
///
/// Voxels are ranked by normalized ellipsoidal radius; the seed only breaks
/// ties on the boundary shell, so the result is contiguous and brain-like.
pub fn synthetic_mask(dims: &[usize], roi_fraction: f64, seed: u64) -> Result<RoiMask> {
    if !(0.0..=1.0).contains(&roi_fraction) {
        return Err(MaskError::InvalidFraction(roi_fraction));
    }
    let n: usize = dims.iter().product();
    let k = (roi_fraction * n as f64).round() as usize;
    if k == 0 {
        return Ok(RoiMask::empty(dims));
    }
    if k >= n {
        return Ok(RoiMask::full(dims));
    }
    assert!(
        n <= u32::MAX as usize,
        "volume too large for synthetic_mask"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys: Vec<u128> = Vec::with_capacity(n);
    let mut coord = vec![0usize; dims.len()];
    for i in 0..n {
        let mut r2 = 0.0f64;
        for (ax, &c) in coord.iter().enumerate() {
            let half = dims[ax] as f64 / 2.0;
            let t = (c as f64 + 0.5 - half) / half;
            r2 += t * t;
        }
        let tie = rng.next_u32() as u128;
        keys.push((r2.to_bits() as u128) << 64 | tie << 32 | i as u128);
        for (ax, c) in coord.iter_mut().enumerate() {
            *c += 1;
            if *c < dims[ax] {
                break;
            }
            *c = 0;
        }
    }
    keys.select_nth_unstable(k - 1);
    Ok(RoiMask::from_indices(
        dims,
        keys[..k].iter().map(|&key| (key & 0xFFFF_FFFF) as usize),
    ))
}
