//! Spatial and intensity normalization applied before segmentation.

use super::{Datatype, NiftiError, Result, Volume};

/// Summary statistics recorded by [`intensity_normalize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeStats {
    /// Mean after percentile clamping.
    pub mean: f64,
    /// Population standard deviation after percentile clamping.
    pub stddev: f64,
    /// 0.5th percentile of the input values.
    pub p_low: f64,
    /// 99.5th percentile of the input values.
    pub p_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntensityScaling {
    /// `(v - mean) / stddev` after clamping.
    #[default]
    ZScore,
    /// `(v - p_low) / (p_high - p_low)` after clamping, i.e. into `[0, 1]`.
    MinMax,
}

/// Output of intensity normalization. `degenerate` is set (and the volume
/// is all zeros) when the clamped values have zero spread.
#[derive(Debug, Clone)]
pub struct NormalizedVolume {
    pub volume: Volume,
    pub stats: VolumeStats,
    pub degenerate: bool,
}

/// Nearest-neighbour resample of a rank-3 volume onto `target_spacing`.
///
/// Each output extent is `round(dims * spacing / target)` (at least 1), which
/// keeps the physical extent of every axis within one target voxel.
pub fn spatial_normalize(v: &Volume, target_spacing: &[f64]) -> Result<Volume> {
    if v.rank() != 3 {
        return Err(NiftiError::RankMismatch {
            expected: 3,
            actual: v.rank(),
        });
    }
    if target_spacing.len() != 3 || target_spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(NiftiError::NonPositiveSpacing);
    }

    let out_dims: Vec<usize> = (0..3)
        .map(|ax| {
            let n = (v.dims[ax] as f64 * v.spacing[ax] / target_spacing[ax]).round();
            (n as usize).max(1)
        })
        .collect();

    // Source index for each output index along each axis; sample at voxel centres.
    let lookup: Vec<Vec<usize>> = (0..3)
        .map(|ax| {
            let scale = target_spacing[ax] / v.spacing[ax];
            (0..out_dims[ax])
                .map(|o| {
                    let src = ((o as f64 + 0.5) * scale).floor() as usize;
                    src.min(v.dims[ax] - 1)
                })
                .collect()
        })
        .collect();

    let bpv = v.bytes_per_voxel();
    let (nx, ny) = (v.dims[0], v.dims[1]);
    let mut data = Vec::with_capacity(out_dims.iter().product::<usize>() * bpv);
    for &sz in &lookup[2] {
        for &sy in &lookup[1] {
            let row = (sz * ny + sy) * nx;
            for &sx in &lookup[0] {
                let i = (row + sx) * bpv;
                data.extend_from_slice(&v.voxel_data[i..i + bpv]);
            }
        }
    }
    v.derive(out_dims, target_spacing.to_vec(), v.datatype, data)
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Per-axis median of a list of spacing vectors. Even counts take the mean
/// of the two central values.
pub fn median_spacing(spacings: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = spacings.first().ok_or(NiftiError::EmptyInput)?;
    let rank = first.len();
    if spacings.iter().any(|s| s.len() != rank) {
        return Err(NiftiError::BadDims("spacing vectors differ in rank".into()));
    }
    Ok((0..rank)
        .map(|ax| {
            let mut col: Vec<f64> = spacings.iter().map(|s| s[ax]).collect();
            col.sort_by(f64::total_cmp);
            median_sorted(&col)
        })
        .collect())
}

/// Linear-interpolation percentile (`p` in 0..=100) of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Clamp to the 0.5/99.5 percentiles and z-score. See
/// [`intensity_normalize_with`] for the min-max variant.
pub fn intensity_normalize(v: &Volume) -> Result<NormalizedVolume> {
    intensity_normalize_with(v, IntensityScaling::ZScore)
}

pub fn intensity_normalize_with(v: &Volume, scaling: IntensityScaling) -> Result<NormalizedVolume> {
    if v.is_empty() {
        return Err(NiftiError::EmptyInput);
    }
    let values = v.values();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let p_low = percentile(&sorted, 0.5);
    let p_high = percentile(&sorted, 99.5);

    let clamped: Vec<f64> = values.iter().map(|x| x.clamp(p_low, p_high)).collect();
    let n = clamped.len() as f64;
    let mean = clamped.iter().sum::<f64>() / n;
    let var = clamped.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let stddev = var.sqrt();
    let stats = VolumeStats {
        mean,
        stddev,
        p_low,
        p_high,
    };

    let degenerate = stddev.is_nan()
        || stddev <= 0.0
        || p_high.partial_cmp(&p_low) != Some(std::cmp::Ordering::Greater);
    let out: Vec<f64> = if degenerate {
        log::warn!("intensity normalization of a constant volume; emitting zeros");
        vec![0.0; clamped.len()]
    } else {
        match scaling {
            IntensityScaling::ZScore => clamped.iter().map(|x| (x - mean) / stddev).collect(),
            IntensityScaling::MinMax => clamped
                .iter()
                .map(|x| (x - p_low) / (p_high - p_low))
                .collect(),
        }
    };
    let data = Volume::encode_values(Datatype::F32, v.endianness, &out);
    let volume = v.derive(v.dims.clone(), v.spacing.clone(), Datatype::F32, data)?;
    Ok(NormalizedVolume {
        volume,
        stats,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nifti::ingest_raw;
    use proptest::prelude::*;

    fn vol(dims: &[usize], spacing: &[f64], values: &[f64], dt: Datatype) -> Volume {
        Volume::from_values(dims, dt, spacing, values).unwrap()
    }

    #[test]
    fn identity_resample() {
        let vals: Vec<f64> = (0..60).map(|i| i as f64).collect();
        let v = vol(&[5, 4, 3], &[0.958, 0.958, 3.0], &vals, Datatype::U16);
        let r = spatial_normalize(&v, &[0.958, 0.958, 3.0]).unwrap();
        assert_eq!(r.dims, v.dims);
        assert_eq!(r.voxel_data, v.voxel_data);
    }

    #[test]
    fn halving_resolution() {
        let v = ingest_raw(&[10, 10, 10], Datatype::U8, &[1.0; 3], vec![1; 1000]).unwrap();
        let r = spatial_normalize(&v, &[2.0; 3]).unwrap();
        assert_eq!(r.dims, vec![5, 5, 5]);
        assert_eq!(r.spacing, vec![2.0; 3]);
        assert_eq!(r.voxel_data.len(), 125);
    }

    #[test]
    fn anisotropic_resize() {
        let (nx, ny, nz) = (140, 230, 195);
        let v = ingest_raw(
            &[nx, ny, nz],
            Datatype::U8,
            &[0.958, 0.958, 3.0],
            vec![0; nx * ny * nz],
        )
        .unwrap();
        let r = spatial_normalize(&v, &[0.958, 0.958, 0.958]).unwrap();
        // round(195 * 3.0 / 0.958) = round(610.647...) = 611
        assert_eq!(r.dims, vec![140, 230, 611]);
    }

    #[test]
    fn resample_rejects_bad_spacing_and_rank() {
        let v = ingest_raw(&[2, 2, 2], Datatype::U8, &[1.0; 3], vec![0; 8]).unwrap();
        assert!(matches!(
            spatial_normalize(&v, &[1.0, 0.0, 1.0]),
            Err(NiftiError::NonPositiveSpacing)
        ));
        assert!(matches!(
            spatial_normalize(&v, &[1.0, f64::NAN, 1.0]),
            Err(NiftiError::NonPositiveSpacing)
        ));
        let v2 = ingest_raw(&[2, 2], Datatype::U8, &[1.0; 2], vec![0; 4]).unwrap();
        assert!(matches!(
            spatial_normalize(&v2, &[1.0; 3]),
            Err(NiftiError::RankMismatch { .. })
        ));
    }

    #[test]
    fn upsampling_repeats_nearest() {
        let v = vol(&[2, 1, 1], &[2.0, 1.0, 1.0], &[3.0, 7.0], Datatype::U8);
        let r = spatial_normalize(&v, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(r.values(), vec![3.0, 3.0, 7.0, 7.0]);
    }

    #[test]
    fn median_examples() {
        assert_eq!(
            median_spacing(&[vec![1.0, 1.0, 1.0]]).unwrap(),
            vec![1.0; 3]
        );
        assert_eq!(
            median_spacing(&[
                vec![1.0, 2.0, 3.0],
                vec![3.0, 2.0, 1.0],
                vec![2.0, 2.0, 2.0]
            ])
            .unwrap(),
            vec![2.0; 3]
        );
        assert_eq!(
            median_spacing(&[vec![1.0; 3], vec![3.0; 3]]).unwrap(),
            vec![2.0; 3]
        );
        assert!(matches!(median_spacing(&[]), Err(NiftiError::EmptyInput)));
    }

    #[test]
    fn constant_volume_is_degenerate() {
        let v = vol(&[4, 4, 2], &[1.0; 3], &[42.0; 32], Datatype::U8);
        let n = intensity_normalize(&v).unwrap();
        assert!(n.degenerate);
        assert_eq!(n.volume.datatype, Datatype::F32);
        assert!(n.volume.values().iter().all(|&x| x == 0.0));
        assert_eq!(n.stats.stddev, 0.0);
    }

    #[test]
    fn two_value_volume_maps_to_unit_z() {
        let vals: Vec<f64> = (0..200).map(|i| if i < 100 { 0.0 } else { 10.0 }).collect();
        let v = vol(&[10, 10, 2], &[1.0; 3], &vals, Datatype::U8);
        let n = intensity_normalize(&v).unwrap();
        assert!(!n.degenerate);
        assert_eq!(n.stats.mean, 5.0);
        assert_eq!(n.stats.stddev, 5.0);
        let out = n.volume.values();
        assert!(out[..100].iter().all(|&x| x == -1.0));
        assert!(out[100..].iter().all(|&x| x == 1.0));
    }

    #[test]
    fn minmax_lands_in_unit_interval() {
        let vals: Vec<f64> = (0..64).map(|i| (i * i) as f64).collect();
        let v = vol(&[4, 4, 4], &[1.0; 3], &vals, Datatype::U16);
        let n = intensity_normalize_with(&v, IntensityScaling::MinMax).unwrap();
        let out = n.volume.values();
        assert!(out.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert_eq!(out[0], 0.0);
        assert_eq!(*out.last().unwrap(), 1.0);
    }

    #[test]
    fn percentile_interpolates() {
        let s = [0.0, 10.0, 20.0, 30.0, 40.0];
        assert_eq!(percentile(&s, 0.0), 0.0);
        assert_eq!(percentile(&s, 100.0), 40.0);
        assert_eq!(percentile(&s, 50.0), 20.0);
        assert!((percentile(&s, 12.5) - 5.0).abs() < 1e-12);
    }

    fn sort_pick_median(col: &mut [f64]) -> f64 {
        // insertion sort keeps this oracle free of the library's sort path
        for i in 1..col.len() {
            let mut j = i;
            while j > 0 && col[j - 1] > col[j] {
                col.swap(j - 1, j);
                j -= 1;
            }
        }
        let n = col.len();
        if n % 2 == 1 {
            col[n / 2]
        } else {
            (col[n / 2 - 1] + col[n / 2]) / 2.0
        }
    }

    proptest! {
        #[test]
        fn median_matches_sort_oracle(list in prop::collection::vec(prop::array::uniform3(0.1f64..10.0), 1..100)) {
            let spacings: Vec<Vec<f64>> = list.iter().map(|a| a.to_vec()).collect();
            let got = median_spacing(&spacings).unwrap();
            for ax in 0..3 {
                let mut col: Vec<f64> = list.iter().map(|a| a[ax]).collect();
                prop_assert_eq!(got[ax], sort_pick_median(&mut col));
            }
        }

        #[test]
        fn resample_preserves_extent(
            dims in prop::array::uniform3(1usize..12),
            spacing in prop::array::uniform3(0.3f64..4.0),
            target in prop::array::uniform3(0.3f64..4.0),
        ) {
            let n = dims.iter().product();
            let v = ingest_raw(&dims, Datatype::U8, &spacing, vec![0; n]).unwrap();
            let r = spatial_normalize(&v, &target).unwrap();
            for ax in 0..3 {
                let out = r.dims[ax] as f64 * target[ax];
                let inp = dims[ax] as f64 * spacing[ax];
                prop_assert!((out - inp).abs() <= target[ax] + 1e-9);
            }
        }

        #[test]
        fn zscore_is_standardized(vals in prop::collection::vec(-1000.0f64..1000.0, 8..200)) {
            let v = vol(&[vals.len()], &[1.0], &vals, Datatype::F32);
            let n = intensity_normalize(&v).unwrap();
            prop_assume!(!n.degenerate);
            let out = n.volume.values();
            let m = out.iter().sum::<f64>() / out.len() as f64;
            let sd = (out.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / out.len() as f64).sqrt();
            prop_assert!(m.abs() < 1e-5);
            prop_assert!((sd - 1.0).abs() < 1e-5);
        }

        #[test]
        fn zscore_ignores_affine_maps(vals in prop::collection::vec(-100.0f64..100.0, 8..200)) {
            let v = vol(&[vals.len()], &[1.0], &vals, Datatype::F32);
            // recompute from the stored f32 values so both inputs share the same base
            let stored = v.values();
            let w_vals: Vec<f64> = stored.iter().map(|x| 2.0 * x + 7.0).collect();
            let w = vol(&[vals.len()], &[1.0], &w_vals, Datatype::F32);
            let a = intensity_normalize(&v).unwrap();
            let b = intensity_normalize(&w).unwrap();
            prop_assume!(!a.degenerate && !b.degenerate);
            for (x, y) in a.volume.values().iter().zip(b.volume.values()) {
                prop_assert!((x - y).abs() < 1e-5, "{} vs {}", x, y);
            }
        }
    }
}
