//! Period-aware patch forecasting with a residual covariate plug-in.
//!
//! A backbone encodes each channel's lookback as period-length patches and
//! decodes one token per horizon period. The plug-in in [`fusion`] mixes
//! target, past-covariate and future-covariate tokens and adds
//! `Head(R)` to the backbone forecast. See the guide under `book/`.

pub mod autodiff;
pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod layers;
pub mod model;
pub mod params;
pub mod screening;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/screening.md")]
    mod screening {}
}
