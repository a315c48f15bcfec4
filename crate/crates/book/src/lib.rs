//! The guide's chapters, compiled as doc modules so `cargo test` runs every
//! Rust listing in the book.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/nifti.md")]
pub mod nifti {}
#[doc = include_str!("../../../book/src/masks.md")]
pub mod masks {}
#[doc = include_str!("../../../book/src/henon.md")]
pub mod henon {}
#[doc = include_str!("../../../book/src/selective-cipher.md")]
pub mod selective_cipher {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/benchmarking.md")]
pub mod benchmarking {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
