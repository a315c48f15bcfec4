//! Vault entry layout: `volume.enc.nii`, `mask.nii`, `manifest.txt`.
//!
//! The manifest is UTF-8 `key=value` lines. The mask is stored in the clear
//! (ROI geometry is visible to anyone holding the entry); only voxel
//! contents are protected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use sha2::{Digest, Sha256};

use super::{
    apply_keystream_in_place, encrypt_selective, Result, VaultError, CIPHER_ID, TAG_STREAM_BYTES,
};
use crate::fsutil::temp_sibling;
use crate::henon::{derive_schedule, keystream, HenonParams, KeySchedule};
use crate::mask::{load_mask, RoiMask};
use crate::nifti::{parse_nifti, serialize_nifti, Datatype, Volume};

pub const CIPHERTEXT_FILE: &str = "volume.enc.nii";
pub const MASK_FILE: &str = "mask.nii";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub format_version: u32,
    pub cipher: String,
    pub dims: Vec<usize>,
    pub datatype: Datatype,
    pub spacing: Vec<f64>,
    pub roi_count: usize,
    pub roi_fraction: f64,
    pub burn_in: u64,
    pub verification_tag: [u8; 32],
    pub original_digest: [u8; 32],
    pub created_at: String,
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format_version={}", self.format_version);
        let _ = writeln!(s, "cipher={}", self.cipher);
        let _ = writeln!(s, "dims={}", join(&self.dims));
        let _ = writeln!(s, "datatype={}", self.datatype);
        let _ = writeln!(s, "spacing={}", join(&self.spacing));
        let _ = writeln!(s, "roi_count={}", self.roi_count);
        let _ = writeln!(s, "roi_fraction={}", self.roi_fraction);
        let _ = writeln!(s, "burn_in={}", self.burn_in);
        let _ = writeln!(s, "verification_tag={}", hex::encode(self.verification_tag));
        let _ = writeln!(s, "original_digest={}", hex::encode(self.original_digest));
        let _ = writeln!(s, "created_at={}", self.created_at);
        s
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let corrupt = |what: &str| VaultError::CorruptEntry(format!("manifest: {what}"));
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| corrupt("line without `=`"))?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| corrupt(&format!("missing {k}")))
        };
        fn num<T: std::str::FromStr>(s: &str, k: &str) -> Result<T> {
            s.parse()
                .map_err(|_| VaultError::CorruptEntry(format!("manifest: bad {k}")))
        }
        let list = |k: &str| -> Result<Vec<String>> {
            Ok(get(k)?.split(',').map(|s| s.trim().to_string()).collect())
        };
        let digest = |k: &str| -> Result<[u8; 32]> {
            let bytes = hex::decode(get(k)?).map_err(|_| corrupt(&format!("bad {k}")))?;
            bytes
                .try_into()
                .map_err(|_| corrupt(&format!("bad {k} length")))
        };
        Ok(Manifest {
            format_version: num(get("format_version")?, "format_version")?,
            cipher: get("cipher")?.to_string(),
            dims: list("dims")?
                .iter()
                .map(|s| num(s, "dims"))
                .collect::<Result<_>>()?,
            datatype: get("datatype")?
                .parse()
                .map_err(|_| corrupt("bad datatype"))?,
            spacing: list("spacing")?
                .iter()
                .map(|s| num(s, "spacing"))
                .collect::<Result<_>>()?,
            roi_count: num(get("roi_count")?, "roi_count")?,
            roi_fraction: num(get("roi_fraction")?, "roi_fraction")?,
            burn_in: num(get("burn_in")?, "burn_in")?,
            verification_tag: digest("verification_tag")?,
            original_digest: digest("original_digest")?,
            created_at: get("created_at")?.to_string(),
        })
    }
}

/// A stored entry, as written by [`store`].
#[derive(Debug, Clone)]
pub struct VaultEntry {
    pub path: PathBuf,
    pub manifest: Manifest,
    pub ciphertext: Volume,
    pub mask: RoiMask,
    /// Keystream bytes consumed on voxels during encryption.
    pub keystream_bytes: u64,
}

/// SHA-256 of the first 64 keystream bytes. Depends on the key only.
pub fn verification_tag(ks: &KeySchedule) -> Result<[u8; 32]> {
    let head = keystream(ks, TAG_STREAM_BYTES)?;
    Ok(Sha256::digest(&head).into())
}

fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Encrypt `v` under `m` and write a new vault entry at `dest`.
///
/// Files are assembled in a temporary sibling directory which is renamed
/// into place only once everything is written. `dest` must not exist or be
/// an empty directory.
pub fn store(v: &Volume, m: &RoiMask, ks: &KeySchedule, dest: &Path) -> Result<VaultEntry> {
    if dest.exists()
        && fs::read_dir(dest)
            .map(|mut d| d.next().is_some())
            .unwrap_or(true)
    {
        return Err(VaultError::EntryExists(dest.display().to_string()));
    }
    let enc = encrypt_selective(v, m, ks)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        cipher: CIPHER_ID.to_string(),
        dims: v.dims.clone(),
        datatype: v.datatype,
        spacing: v.spacing.clone(),
        roi_count: m.roi_count(),
        roi_fraction: m.roi_fraction(),
        burn_in: ks.burn_in,
        verification_tag: verification_tag(ks)?,
        original_digest: sha256(&v.voxel_data),
        created_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
    };
    let ciphertext_bytes = serialize_nifti(&enc.volume)?;
    let mask_bytes = serialize_nifti(&m.to_volume(&v.spacing)?)?;

    let tmp = temp_sibling(dest);
    let written = (|| -> Result<()> {
        fs::create_dir(&tmp)?;
        for (name, bytes) in [
            (CIPHERTEXT_FILE, ciphertext_bytes.as_slice()),
            (MASK_FILE, mask_bytes.as_slice()),
            (MANIFEST_FILE, manifest.to_text().as_bytes()),
        ] {
            let mut f = fs::File::create(tmp.join(name))?;
            std::io::Write::write_all(&mut f, bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, dest)?;
        Ok(())
    })();
    if let Err(e) = written {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }

    Ok(VaultEntry {
        path: dest.to_path_buf(),
        manifest,
        ciphertext: enc.volume,
        mask: m.clone(),
        keystream_bytes: enc.keystream_bytes,
    })
}

pub fn read_manifest(entry: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(entry.join(MANIFEST_FILE))?;
    Manifest::parse(&text)
}

/// Re-derive the key from `passphrase` and decrypt the entry.
pub fn retrieve(entry: &Path, passphrase: &[u8]) -> Result<Volume> {
    let manifest = read_manifest(entry)?;
    let ks = derive_schedule(passphrase, HenonParams::default(), manifest.burn_in)?;
    retrieve_with_schedule(entry, &ks)
}

/// Decrypt an entry with an explicit key schedule.
///
/// The verification tag is checked before any voxel is read, so a wrong key
/// fails with [`VaultError::WrongKey`] without producing output. A mismatch
/// of the plaintext digest after decryption is [`VaultError::CorruptEntry`].
pub fn retrieve_with_schedule(entry: &Path, ks: &KeySchedule) -> Result<Volume> {
    let manifest = read_manifest(entry)?;
    if manifest.format_version != FORMAT_VERSION || manifest.cipher != CIPHER_ID {
        return Err(VaultError::CorruptEntry(format!(
            "unsupported format {} / cipher {}",
            manifest.format_version, manifest.cipher
        )));
    }
    if verification_tag(ks)? != manifest.verification_tag {
        return Err(VaultError::WrongKey);
    }

    let corrupt = |what: String| VaultError::CorruptEntry(what);
    let mut volume = parse_nifti(&fs::read(entry.join(CIPHERTEXT_FILE))?)
        .map_err(|e| corrupt(format!("ciphertext: {e}")))?;
    if volume.dims != manifest.dims || volume.datatype != manifest.datatype {
        return Err(corrupt("ciphertext shape disagrees with manifest".into()));
    }
    let mask = load_mask(&fs::read(entry.join(MASK_FILE))?, &manifest.dims)
        .map_err(|e| corrupt(format!("mask: {e}")))?;
    if mask.roi_count() != manifest.roi_count {
        return Err(corrupt(format!(
            "mask has {} ROI voxels, manifest records {}",
            mask.roi_count(),
            manifest.roi_count
        )));
    }

    let bpv = volume.bytes_per_voxel();
    apply_keystream_in_place(&mut volume.voxel_data, bpv, &mask, ks)?;
    if sha256(&volume.voxel_data) != manifest.original_digest {
        return Err(corrupt("plaintext digest mismatch after decryption".into()));
    }
    Ok(volume)
}
