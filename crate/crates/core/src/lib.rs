//! Two-pin to five-pin net routing on a 32×32 grid, an eight-layer layout
//! encoding, a design-rule checker, and a fully convolutional network that
//! learns to route from examples.

pub mod dataset;
pub mod drc;
pub mod error;
pub mod fcn;
pub mod layout;
pub mod metrics;
pub mod nn;
pub mod router;
pub mod tensor;

pub use error::{Error, Result};
pub use fcn::{FcnConfig, FcnModel};
pub use layout::{GridDims, LayerId, LayoutGrid, Pin, PinSet, Plane};
pub use tensor::Tensor4;
