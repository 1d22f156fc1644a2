//! Semi-supervised fine-grained sketch-based image retrieval.
//!
//! A sequential photo-to-sketch generator produces pseudo sketches for
//! unlabelled photos; a cross-modal embedding network is trained on labelled
//! pairs plus the pseudo pairs, weighted by a pair discriminator and
//! regularised by a frozen teacher. The generator in turn receives
//! policy-gradient rewards from the retrieval model and the discriminator.
//!
//! The crate is `no_std` + `alloc`. The default `std` feature only enables
//! data-parallel per-sample evaluation through rayon; results are identical
//! with or without it.
#![cfg_attr(not(feature = "std"), no_std)]
// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]
#![cfg_attr(test, allow(clippy::needless_range_loop))]

extern crate alloc;

pub mod autodiff;
pub mod discriminator;
mod error;
pub mod evaluation;
pub mod generator;
pub mod layers;
pub mod math;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod retrieval;
pub mod rng;
pub mod sketch;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
