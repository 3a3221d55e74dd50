//! Building blocks for nested U-Net (UNet++) segmentation networks.
//!
//! Everything in this crate is pure computation over `alloc` collections:
//! dense tensors, a static reverse-mode autodiff graph, the convolution,
//! pooling and up-sampling layers, the architecture builder for the whole
//! U-Net family, the hybrid deep-supervision loss, segmentation metrics,
//! a synthetic blob dataset generator, and the Adam training loop with
//! ensemble and pruned inference.
//!
//! File formats, the command-line tool and anything touching the clock or
//! the filesystem live in the companion `unetpp` crate.
#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod arch;
pub mod autograd;
pub mod check;
pub mod data;
mod error;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod rng;
pub mod tensor;
pub mod train;

pub use arch::{ArchSpec, Network, NodeAddress, Variant};
pub use autograd::{Evaluation, Feeds, Graph, NodeId};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
