//! Learned resolvents of maximally monotone operators for plug-and-play
//! forward-backward image restoration.

pub mod certify;
pub mod conv;
pub mod error;
pub mod inverse;
pub mod io;
pub mod kernels;
pub mod linear;
pub mod metrics;
pub mod mmo;
pub mod net;
pub mod rng;
pub mod solve;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use linear::LinearMap;
pub use rng::Rng;
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/resolvents.md")]
    mod resolvents {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/deblurring.md")]
    mod deblurring {}
    #[doc = include_str!("../../../book/src/certification.md")]
    mod certification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
