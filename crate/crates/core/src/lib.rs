//! Learned descriptors and temporal alignment for 3D+t point-cloud series of
//! developing embryos.

pub mod alignreg;
pub mod autodiff;
pub mod diagnostics;
pub mod embed;
pub mod error;
pub mod foldnet;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod spatial;
pub mod svg;
pub mod warp;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/point-clouds.md")]
    mod point_clouds {}
    #[doc = include_str!("../../../book/src/chamfer.md")]
    mod chamfer {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/autoencoder.md")]
    mod autoencoder {}
    #[doc = include_str!("../../../book/src/alignment.md")]
    mod alignment {}
    #[doc = include_str!("../../../book/src/visualization.md")]
    mod visualization {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
