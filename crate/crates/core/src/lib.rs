//! Active inference that plans by growing a tree of future states, with
//! variational message passing for beliefs and Monte-Carlo tree search for
//! choosing which branch to grow.

pub mod baseline;
pub mod cli;
pub mod config;
pub mod distributions;
pub mod error;
pub mod inference;
pub mod env;
pub mod model;
pub mod oracle;
pub mod planner;
pub mod tensor;
pub mod tree;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/distributions.md")]
    mod distributions {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/planning.md")]
    mod planning {}
    #[doc = include_str!("../../../book/src/baseline.md")]
    mod baseline {}
    #[doc = include_str!("../../../book/src/environments.md")]
    mod environments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
