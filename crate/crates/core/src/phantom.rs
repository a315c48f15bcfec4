//! Synthetic volumes for tests, examples and benchmarks.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mask::{LabelVolume, RoiMask};
use crate::nifti::{Datatype, Volume};

fn coords(i: usize, dims: &[usize]) -> [f64; 3] {
    [
        (i % dims[0]) as f64,
        ((i / dims[0]) % dims[1]) as f64,
        (i / (dims[0] * dims[1])) as f64,
    ]
}

fn in_ball(p: [f64; 3], centre: [f64; 3], radius: f64) -> bool {
    let d2: f64 = (0..3).map(|k| (p[k] - centre[k]).powi(2)).sum();
    d2 <= radius * radius
}

/// Solid balls of `value` on a zero background, unit spacing.
pub fn ball_phantom(dims: &[usize], balls: &[([f64; 3], f64)], value: f64, dt: Datatype) -> Volume {
    let n: usize = dims.iter().product();
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let p = coords(i, dims);
            if balls.iter().any(|&(c, r)| in_ball(p, c, r)) {
                value
            } else {
                0.0
            }
        })
        .collect();
    Volume::from_values(dims, dt, &[1.0; 3], &values).expect("valid phantom dims")
}

/// Analytic membership mask of one ball, voxel centres at integer coordinates.
pub fn ball_mask(dims: &[usize], centre: [f64; 3], radius: f64) -> RoiMask {
    RoiMask::from_fn(dims, |i| in_ball(coords(i, dims), centre, radius))
}

/// Uniformly random voxels. Integer types get random bytes; `f32` gets
/// finite values in `[-1000, 1000)` so metrics stay well defined.
pub fn random_volume(dims: &[usize], dt: Datatype, seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = dims.iter().product();
    let spacing = vec![1.0; dims.len()];
    match dt {
        Datatype::F32 => {
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1000.0..1000.0)).collect();
            Volume::from_values(dims, dt, &spacing, &values).expect("valid dims")
        }
        _ => {
            let mut data = vec![0u8; n * dt.bytes_per_voxel()];
            rng.fill_bytes(&mut data);
            crate::nifti::ingest_raw(dims, dt, &spacing, data).expect("valid dims")
        }
    }
}

/// Brain-like test volume and its label map.
///
/// An ellipsoid with semi-axes of 0.42 × each extent holds ventricles
/// (label 6), white matter (3) and a cortical gray-matter rim (1); a bright
/// skull shell and faint background noise surround it (label 0). Roughly
/// 31% of voxels carry a nonzero label.
pub fn brain_phantom(dims: &[usize], dt: Datatype, seed: u64) -> (Volume, LabelVolume) {
    assert_eq!(dims.len(), 3, "brain phantom is rank 3");
    let peak = dt.max_value().unwrap_or(1000.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = dims.iter().product();
    let mut values = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let p = coords(i, dims);
        let rho = (0..3)
            .map(|k| {
                let half = dims[k] as f64 / 2.0;
                ((p[k] + 0.5 - half) / (0.42 * dims[k] as f64)).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        let (level, label) = match rho {
            r if r < 0.25 => (0.15, 6),
            r if r < 0.75 => (0.55, 3),
            r if r < 1.0 => (0.40, 1),
            r if r < 1.12 => (0.80, 0),
            _ => (0.01, 0),
        };
        let noise = rng.gen_range(-0.03..0.03);
        values.push(((level + noise) * peak).clamp(0.0, peak));
        labels.push(label);
    }
    let v = Volume::from_values(dims, dt, &[1.0; 3], &values).expect("valid dims");
    (v, LabelVolume::new(dims, labels).expect("valid dims"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{default_foreground, merge_labels};

    #[test]
    fn random_volume_is_seeded() {
        for dt in Datatype::ALL {
            let a = random_volume(&[5, 4, 3], dt, 7);
            assert_eq!(a, random_volume(&[5, 4, 3], dt, 7));
            assert_ne!(a.voxel_data, random_volume(&[5, 4, 3], dt, 8).voxel_data);
            assert!(a.values().iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn brain_phantom_roi_fraction() {
        let (_, labels) = brain_phantom(&[48, 48, 32], Datatype::U8, 1);
        let m = merge_labels(&labels, &default_foreground()).unwrap();
        let f = m.roi_fraction();
        assert!((0.25..0.36).contains(&f), "{f}");
    }
}
