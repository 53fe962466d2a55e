pub mod calibration;
pub mod error;
pub mod expansion;
pub mod family;
pub mod kernel;
pub mod posterior;
pub mod selection;

pub use error::{Error, Result};

/// Book chapters, compiled so their snippets run as doctests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/selection-models.md")]
    pub mod selection_models {}
    #[doc = include_str!("../../../book/src/gaussian-limit.md")]
    pub mod gaussian_limit {}
    #[doc = include_str!("../../../book/src/posteriors.md")]
    pub mod posteriors {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    pub mod calibration {}
    #[doc = include_str!("../../../book/src/randomness.md")]
    pub mod randomness {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
