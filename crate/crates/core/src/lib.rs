//! Interval reachability for neural-network controlled systems using
//! mixed-monotone embeddings and contraction-guided adaptive partitioning.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity,
    clippy::needless_range_loop
)]

pub mod contraction;
pub mod embedding;
pub mod interval;
pub mod models;
pub mod nn;
pub mod partition;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/intervals.md")]
    mod intervals {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
    #[doc = include_str!("../../../book/src/partitioning.md")]
    mod partitioning {}
    #[doc = include_str!("../../../book/src/contraction.md")]
    mod contraction {}
    #[doc = include_str!("../../../book/src/benchmarks.md")]
    mod benchmarks {}
}
