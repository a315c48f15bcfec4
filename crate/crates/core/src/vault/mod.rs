//! Selective XOR cipher and the on-disk vault entry.
//!
//! The n-th ROI voxel in row-major order takes the n-th `bytes_per_voxel`
//! chunk of the keystream, so cipher work is proportional to the ROI size,
//! not the volume size. Voxels outside the mask are never touched. The first
//! [`TAG_STREAM_BYTES`] keystream bytes are reserved for the key
//! verification tag and never meet voxel data.

mod store;

use thiserror::Error;

use crate::henon::{HenonError, KeySchedule, Keystream};
use crate::mask::{MaskError, RoiMask};
use crate::nifti::{NiftiError, Volume};

pub use store::{
    read_manifest, retrieve, retrieve_with_schedule, store, verification_tag, Manifest, VaultEntry,
    CIPHERTEXT_FILE, FORMAT_VERSION, MANIFEST_FILE, MASK_FILE,
};

pub const CIPHER_ID: &str = "henon-xor-v1";
/// Keystream bytes consumed by the verification tag before voxel data.
pub const TAG_STREAM_BYTES: usize = 64;

#[derive(Debug, Error)]
pub enum VaultError {
    #[error("dims mismatch: volume {volume:?}, mask {mask:?}")]
    DimsMismatch {
        volume: Vec<usize>,
        mask: Vec<usize>,
    },
    #[error("wrong key: verification tag does not match")]
    WrongKey,
    #[error("corrupt vault entry: {0}")]
    CorruptEntry(String),
    #[error("vault entry already exists: {0}")]
    EntryExists(String),
    #[error(transparent)]
    Henon(#[from] HenonError),
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = VaultError> = std::result::Result<T, E>;

/// Voxel positions a mask selects and the keystream they will consume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherPlan {
    pub roi_positions: Vec<usize>,
    pub bytes_needed: usize,
}

impl CipherPlan {
    pub fn new(mask: &RoiMask, bytes_per_voxel: usize) -> Self {
        let roi_positions: Vec<usize> = mask.iter_ones().collect();
        let bytes_needed = roi_positions.len() * bytes_per_voxel;
        CipherPlan {
            roi_positions,
            bytes_needed,
        }
    }
}

/// Result of a cipher pass.
#[derive(Debug, Clone)]
pub struct CipherOutcome {
    pub volume: Volume,
    /// Keystream bytes XORed into voxels (tag bytes excluded).
    pub keystream_bytes: u64,
    /// The mask selected nothing, so the output equals the input.
    pub empty_mask: bool,
}

fn check_dims(v: &Volume, m: &RoiMask) -> Result<()> {
    if v.dims != m.dims() {
        return Err(VaultError::DimsMismatch {
            volume: v.dims.clone(),
            mask: m.dims().to_vec(),
        });
    }
    Ok(())
}

/// XOR keystream bytes into the ROI voxels of `voxel_data` in place.
/// Returns the number of keystream bytes used on voxels.
///
/// Encryption and decryption are the same call.
pub fn apply_keystream_in_place(
    voxel_data: &mut [u8],
    bytes_per_voxel: usize,
    mask: &RoiMask,
    ks: &KeySchedule,
) -> Result<u64> {
    assert_eq!(voxel_data.len(), mask.len() * bytes_per_voxel);
    let mut gen = Keystream::new(ks)?;
    let mut tag = [0u8; TAG_STREAM_BYTES];
    gen.fill(&mut tag)?;
    for i in mask.iter_ones() {
        let off = i * bytes_per_voxel;
        gen.xor_into(&mut voxel_data[off..off + bytes_per_voxel])?;
    }
    Ok(gen.emitted() - TAG_STREAM_BYTES as u64)
}

/// Encrypt only the voxels under `m`.
pub fn encrypt_selective(v: &Volume, m: &RoiMask, ks: &KeySchedule) -> Result<CipherOutcome> {
    check_dims(v, m)?;
    let empty_mask = m.roi_count() == 0;
    if empty_mask {
        log::warn!("mask selects no voxels; output is identical to the input");
    }
    let mut out = v.clone();
    let keystream_bytes =
        apply_keystream_in_place(&mut out.voxel_data, v.bytes_per_voxel(), m, ks)?;
    Ok(CipherOutcome {
        volume: out,
        keystream_bytes,
        empty_mask,
    })
}

/// Inverse of [`encrypt_selective`] (XOR is an involution).
pub fn decrypt_selective(c: &Volume, m: &RoiMask, ks: &KeySchedule) -> Result<CipherOutcome> {
    encrypt_selective(c, m, ks)
}

/// Whole-volume encryption: the selective path with an all-ones mask.
pub fn encrypt_full(v: &Volume, ks: &KeySchedule) -> Result<CipherOutcome> {
    encrypt_selective(v, &RoiMask::full(&v.dims), ks)
}

pub fn decrypt_full(c: &Volume, ks: &KeySchedule) -> Result<CipherOutcome> {
    encrypt_full(c, ks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::henon::{derive_schedule, keystream, HenonParams};
    use crate::mask::synthetic_mask;
    use crate::nifti::Datatype;
    use crate::phantom::random_volume;

    fn key() -> KeySchedule {
        derive_schedule(b"vault-tests", HenonParams::default(), 100).unwrap()
    }

    #[test]
    fn empty_mask_is_identity() {
        let v = random_volume(&[4, 4, 2], Datatype::U16, 1);
        let out = encrypt_selective(&v, &RoiMask::empty(&v.dims), &key()).unwrap();
        assert!(out.empty_mask);
        assert_eq!(out.keystream_bytes, 0);
        assert_eq!(out.volume, v);
    }

    #[test]
    fn full_mask_matches_sequential_xor() {
        let v = random_volume(&[2, 2, 2], Datatype::U8, 2);
        let ks = key();
        let stream = keystream(&ks, TAG_STREAM_BYTES + 8).unwrap();
        let expected: Vec<u8> = v
            .voxel_data
            .iter()
            .zip(&stream[TAG_STREAM_BYTES..])
            .map(|(a, b)| a ^ b)
            .collect();
        let out = encrypt_selective(&v, &RoiMask::full(&v.dims), &ks).unwrap();
        assert_eq!(out.volume.voxel_data, expected);
        assert_eq!(out.keystream_bytes, 8);
    }

    #[test]
    fn single_voxel_touches_two_bytes() {
        let v = random_volume(&[4, 4, 2], Datatype::U16, 3);
        let m = RoiMask::from_indices(&v.dims, [13]);
        let out = encrypt_selective(&v, &m, &key()).unwrap().volume;
        let diff: Vec<usize> = (0..v.voxel_data.len())
            .filter(|&i| v.voxel_data[i] != out.voxel_data[i])
            .collect();
        assert!(diff.iter().all(|&i| i == 26 || i == 27));
        assert!(!diff.is_empty());
        assert_eq!(out.header_blob, v.header_blob);
    }

    #[test]
    fn roundtrip_and_non_roi_conservation() {
        for dt in Datatype::ALL {
            let v = random_volume(&[7, 6, 5], dt, 4);
            let m = synthetic_mask(&v.dims, 0.35, 4).unwrap();
            let ks = key();
            let enc = encrypt_selective(&v, &m, &ks).unwrap();
            assert_eq!(
                enc.keystream_bytes,
                (m.roi_count() * dt.bytes_per_voxel()) as u64
            );
            let bpv = dt.bytes_per_voxel();
            for i in 0..v.len() {
                if !m.get(i) {
                    assert_eq!(
                        v.voxel_data[i * bpv..(i + 1) * bpv],
                        enc.volume.voxel_data[i * bpv..(i + 1) * bpv]
                    );
                }
            }
            let dec = decrypt_selective(&enc.volume, &m, &ks).unwrap().volume;
            assert_eq!(dec, v);
        }
    }

    #[test]
    fn wrong_key_garbles_only_roi() {
        let v = random_volume(&[8, 8, 4], Datatype::U16, 5);
        let m = synthetic_mask(&v.dims, 0.3, 5).unwrap();
        let enc = encrypt_selective(&v, &m, &key()).unwrap().volume;
        let other = derive_schedule(b"not-the-key", HenonParams::default(), 100).unwrap();
        let dec = decrypt_selective(&enc, &m, &other).unwrap().volume;
        let bpv = 2;
        let mut roi_diff = 0;
        for i in 0..v.len() {
            let same =
                v.voxel_data[i * bpv..(i + 1) * bpv] == dec.voxel_data[i * bpv..(i + 1) * bpv];
            if m.get(i) {
                roi_diff += (!same) as usize;
            } else {
                assert!(same);
            }
        }
        assert!(roi_diff > m.roi_count() * 9 / 10);
    }

    #[test]
    fn dropped_mask_voxel_misaligns_the_rest() {
        let v = random_volume(&[6, 6, 3], Datatype::U8, 6);
        let m = synthetic_mask(&v.dims, 0.5, 6).unwrap();
        let ks = key();
        let enc = encrypt_selective(&v, &m, &ks).unwrap().volume;
        let positions: Vec<usize> = m.iter_ones().collect();
        let dropped = positions[positions.len() / 3];
        let short =
            RoiMask::from_indices(&v.dims, positions.iter().copied().filter(|&p| p != dropped));
        let dec = decrypt_selective(&enc, &short, &ks).unwrap().volume;
        let wrong: Vec<usize> = (0..v.len())
            .filter(|&i| v.voxel_data[i] != dec.voxel_data[i])
            .collect();
        // everything before the dropped voxel decrypts; it and (almost) all later ROI voxels do not
        assert!(wrong.iter().all(|&i| i >= dropped && m.get(i)));
        assert_eq!(wrong[0], dropped);
        let later = positions.iter().filter(|&&p| p >= dropped).count();
        assert!(wrong.len() > later * 9 / 10);
    }

    #[test]
    fn full_path_equals_selective_full_mask() {
        let v = random_volume(&[9, 5, 3], Datatype::I16, 7);
        let ks = key();
        let a = encrypt_full(&v, &ks).unwrap().volume;
        let b = encrypt_selective(&v, &RoiMask::full(&v.dims), &ks)
            .unwrap()
            .volume;
        assert_eq!(a, b);
        assert_eq!(decrypt_full(&a, &ks).unwrap().volume, v);
    }

    #[test]
    fn full_encryption_changes_nearly_every_voxel() {
        let v = random_volume(&[32, 32, 8], Datatype::U16, 8);
        let enc = encrypt_full(&v, &key()).unwrap().volume;
        let changed = (0..v.len())
            .filter(|&i| v.voxel_data[2 * i..2 * i + 2] != enc.voxel_data[2 * i..2 * i + 2])
            .count();
        assert!(changed as f64 >= 0.99 * v.len() as f64);
    }

    #[test]
    fn ciphertext_depends_on_mask_rank() {
        let v = random_volume(&[8, 1, 1], Datatype::U8, 9);
        let ks = key();
        let a = RoiMask::from_indices(&v.dims, [2, 5]);
        let b = RoiMask::from_indices(&v.dims, [1, 5]);
        let ea = encrypt_selective(&v, &a, &ks).unwrap().volume;
        let eb = encrypt_selective(&v, &b, &ks).unwrap().volume;
        // voxel 5 is rank 1 in both masks: same keystream byte
        assert_eq!(ea.voxel_data[5], eb.voxel_data[5]);
        let c = RoiMask::from_indices(&v.dims, [5]);
        let ec = encrypt_selective(&v, &c, &ks).unwrap().volume;
        // rank 0 here: different keystream byte (fixed key, checked value)
        let stream = keystream(&ks, TAG_STREAM_BYTES + 2).unwrap();
        assert_ne!(stream[TAG_STREAM_BYTES], stream[TAG_STREAM_BYTES + 1]);
        assert_ne!(ec.voxel_data[5], ea.voxel_data[5]);
    }

    #[test]
    fn dims_mismatch() {
        let v = random_volume(&[4, 4, 2], Datatype::U8, 1);
        assert!(matches!(
            encrypt_selective(&v, &RoiMask::empty(&[4, 4, 3]), &key()),
            Err(VaultError::DimsMismatch { .. })
        ));
    }

    #[test]
    fn plan_lists_roi_in_order() {
        let m = RoiMask::from_indices(&[10, 1, 1], [7, 1, 4]);
        let plan = CipherPlan::new(&m, 4);
        assert_eq!(plan.roi_positions, vec![1, 4, 7]);
        assert_eq!(plan.bytes_needed, 12);
    }
}
