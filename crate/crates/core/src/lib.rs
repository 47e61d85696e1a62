pub mod diffengine;
pub mod error;
pub mod independence;
pub mod io;
pub mod kernels;
pub mod lingauss;
pub mod trainer;

pub use error::{Error, ErrorClass, Result};

/// The guide's code samples, compiled and run as doctests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/independence.md")]
    mod independence {}
    #[doc = include_str!("../../../book/src/lingauss.md")]
    mod lingauss {}
    #[doc = include_str!("../../../book/src/diffengine.md")]
    mod diffengine {}
    #[doc = include_str!("../../../book/src/trainer.md")]
    mod trainer {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/acceptance.md")]
    mod acceptance {}
}
