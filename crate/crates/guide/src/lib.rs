//! Book listings compiled as doctests.
//!
//! Each chapter under `book/src` becomes the docs of one module here, so
//! `cargo test -p fcnroute-guide` runs every listing in the book.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/layout.md")]
pub mod layout {}
#[doc = include_str!("../../../book/src/routing.md")]
pub mod routing {}
#[doc = include_str!("../../../book/src/drc.md")]
pub mod drc {}
#[doc = include_str!("../../../book/src/dataset.md")]
pub mod dataset {}
#[doc = include_str!("../../../book/src/network.md")]
pub mod network {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
