//! Selective region-of-interest encryption for volumetric medical images.
//!
//! A volume is read from NIfTI-1, a binary ROI mask is obtained (label
//! merge, threshold segmentation or an existing mask file), and only the
//! voxels under the mask are XORed with a keystream drawn from the Henon
//! map. Decryption re-derives the keystream and restores the original bytes
//! exactly.
//!
//! The cipher is a research reproduction. It is not a vetted cryptographic
//! construction and must not protect real patient data.
//!
//! ```
//! use roicrypt::henon::KeySchedule;
//! use roicrypt::mask::synthetic_mask;
//! use roicrypt::phantom::random_volume;
//! use roicrypt::nifti::Datatype;
//! use roicrypt::vault::{decrypt_selective, encrypt_selective};
//!
//! let v = random_volume(&[16, 16, 4], Datatype::I16, 1);
//! let m = synthetic_mask(&v.dims, 0.3, 1).unwrap();
//! let key = KeySchedule::literal(1000);
//! let c = encrypt_selective(&v, &m, &key).unwrap();
//! assert_ne!(c.volume, v);
//! assert_eq!(decrypt_selective(&c.volume, &m, &key).unwrap().volume, v);
//! ```

pub mod bench;
pub mod fsutil;
pub mod henon;
pub mod mask;
pub mod metrics;
pub mod nifti;
pub mod phantom;
pub mod vault;

pub use henon::{derive_schedule, HenonParams, KeySchedule, Keystream};
pub use mask::{dice, merge_labels, threshold_segment, RoiMask};
pub use metrics::MetricsReport;
pub use nifti::{parse_nifti, read_volume, serialize_nifti, write_volume, Datatype, Volume};
pub use vault::{retrieve, store};
