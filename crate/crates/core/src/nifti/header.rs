//! Field offsets and endian-aware accessors for the 348-byte NIfTI-1 header.

use super::Endianness;

pub(crate) const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag; the smallest legal `vox_offset`
/// for single-file volumes written by this crate.
pub(crate) const MIN_FILE_SIZE: usize = 352;

pub(crate) const OFF_SIZEOF_HDR: usize = 0;
pub(crate) const OFF_REGULAR: usize = 38;
pub(crate) const OFF_DIM: usize = 40;
pub(crate) const OFF_DATATYPE: usize = 70;
pub(crate) const OFF_BITPIX: usize = 72;
pub(crate) const OFF_PIXDIM: usize = 76;
pub(crate) const OFF_VOX_OFFSET: usize = 108;
pub(crate) const OFF_SCL_SLOPE: usize = 112;
pub(crate) const OFF_XYZT_UNITS: usize = 123;
pub(crate) const OFF_MAGIC: usize = 344;

pub const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
pub const MAGIC_PAIRED: &[u8; 4] = b"ni1\0";

/// Read-only view of a header buffer in a fixed byte order.
pub(crate) struct HeaderView<'a> {
    bytes: &'a [u8],
    endian: Endianness,
}

impl<'a> HeaderView<'a> {
    pub(crate) fn new(bytes: &'a [u8], endian: Endianness) -> Self {
        debug_assert!(bytes.len() >= HEADER_SIZE);
        HeaderView { bytes, endian }
    }

    fn array<const N: usize>(&self, off: usize) -> [u8; N] {
        self.bytes[off..off + N].try_into().unwrap()
    }

    pub(crate) fn i16_at(&self, off: usize) -> i16 {
        match self.endian {
            Endianness::Little => i16::from_le_bytes(self.array(off)),
            Endianness::Big => i16::from_be_bytes(self.array(off)),
        }
    }

    pub(crate) fn i32_at(&self, off: usize) -> i32 {
        match self.endian {
            Endianness::Little => i32::from_le_bytes(self.array(off)),
            Endianness::Big => i32::from_be_bytes(self.array(off)),
        }
    }

    pub(crate) fn f32_at(&self, off: usize) -> f32 {
        match self.endian {
            Endianness::Little => f32::from_le_bytes(self.array(off)),
            Endianness::Big => f32::from_be_bytes(self.array(off)),
        }
    }

    pub(crate) fn dim(&self) -> [i16; 8] {
        let mut d = [0i16; 8];
        for (i, v) in d.iter_mut().enumerate() {
            *v = self.i16_at(OFF_DIM + 2 * i);
        }
        d
    }

    pub(crate) fn pixdim(&self) -> [f32; 8] {
        let mut p = [0f32; 8];
        for (i, v) in p.iter_mut().enumerate() {
            *v = self.f32_at(OFF_PIXDIM + 4 * i);
        }
        p
    }
}

/// Mutable counterpart of [`HeaderView`].
pub(crate) struct HeaderWriter<'a> {
    bytes: &'a mut [u8],
    endian: Endianness,
}

impl<'a> HeaderWriter<'a> {
    pub(crate) fn new(bytes: &'a mut [u8], endian: Endianness) -> Self {
        debug_assert!(bytes.len() >= HEADER_SIZE);
        HeaderWriter { bytes, endian }
    }

    pub(crate) fn put_i16(&mut self, off: usize, v: i16) {
        let b = match self.endian {
            Endianness::Little => v.to_le_bytes(),
            Endianness::Big => v.to_be_bytes(),
        };
        self.bytes[off..off + 2].copy_from_slice(&b);
    }

    pub(crate) fn put_i32(&mut self, off: usize, v: i32) {
        let b = match self.endian {
            Endianness::Little => v.to_le_bytes(),
            Endianness::Big => v.to_be_bytes(),
        };
        self.bytes[off..off + 4].copy_from_slice(&b);
    }

    pub(crate) fn put_f32(&mut self, off: usize, v: f32) {
        let b = match self.endian {
            Endianness::Little => v.to_le_bytes(),
            Endianness::Big => v.to_be_bytes(),
        };
        self.bytes[off..off + 4].copy_from_slice(&b);
    }

    pub(crate) fn put_u8(&mut self, off: usize, v: u8) {
        self.bytes[off] = v;
    }

    pub(crate) fn put_bytes(&mut self, off: usize, v: &[u8]) {
        self.bytes[off..off + v.len()].copy_from_slice(v);
    }
}
