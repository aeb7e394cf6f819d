//! Desk-scale numerics for rough paths and regularity structures on the torus.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! other IO live in the `roughreg` companion crate.
#![no_std]
#![cfg_attr(test, allow(unused_imports))]
extern crate alloc;

pub mod fft;
pub mod germ;
pub mod model;
pub mod multiindex;
pub mod roughpath;
pub mod spectral;
pub mod stats;
pub mod treealg;

pub use multiindex::MultiIndex;
