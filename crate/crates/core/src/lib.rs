//! Wavelet-based dual-stream underwater image enhancement.
pub mod checkpoint;
pub mod colorspace;
pub mod config;
pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod models;
mod seed;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod wavelet;
pub use error::{Error, ErrorKind, Result};
pub use image::Image;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/wavelet.md")]
    mod wavelet {}
    #[doc = include_str!("../../../book/src/colorspace.md")]
    mod colorspace {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/synth.md")]
    mod synth {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
