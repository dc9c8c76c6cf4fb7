//! Fairness-aware neighborhood planning.
//!
//! Scores a city design by how evenly amenity access benefits its residents
//! and recommends floor-area changes that make the benefit more even. The
//! guide in `book/` walks through each stage with runnable examples.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod attribution;
pub mod benefit;
pub mod error;
pub mod explain;
pub mod geo;
pub mod inequality;
pub mod model;
pub mod recommend;
pub mod scenario;
pub mod store;
pub mod synth;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/city.md")]
    mod city {}
    #[doc = include_str!("../../../book/src/benefit.md")]
    mod benefit {}
    #[doc = include_str!("../../../book/src/inequality.md")]
    mod inequality {}
    #[doc = include_str!("../../../book/src/allocation.md")]
    mod allocation {}
    #[doc = include_str!("../../../book/src/recommendation.md")]
    mod recommendation {}
    #[doc = include_str!("../../../book/src/attribution.md")]
    mod attribution {}
    #[doc = include_str!("../../../book/src/population.md")]
    mod population {}
    #[doc = include_str!("../../../book/src/interfaces.md")]
    mod interfaces {}
}
