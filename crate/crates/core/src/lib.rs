//! Adversarial synthesis of retinal fundus images from vessel masks, vessel
//! segmentation, and the evaluation pipeline around them.
//!
//! Everything in this crate is pure computation over in-memory arrays and
//! builds without `std` (an allocator is required). File formats, dataset
//! discovery and the command line live in the `migan` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod losses;
pub mod networks;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
