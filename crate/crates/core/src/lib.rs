pub mod dynamics;
pub mod error;
pub mod generative;
pub mod hyperreduction;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod monitoring;
pub mod neural;
pub mod pipeline;
pub mod reduction;
pub mod rom;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/full-order-model.md")]
    mod full_order_model {}
    #[doc = include_str!("../../../book/src/reduced-bases.md")]
    mod reduced_bases {}
    #[doc = include_str!("../../../book/src/reduced-models.md")]
    mod reduced_models {}
    #[doc = include_str!("../../../book/src/monitoring.md")]
    mod monitoring {}
    #[doc = include_str!("../../../book/src/generating-bases.md")]
    mod generating_bases {}
    #[doc = include_str!("../../../book/src/parameter-inference.md")]
    mod parameter_inference {}
    #[doc = include_str!("../../../book/src/campaigns.md")]
    mod campaigns {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    mod file_formats {}
}
