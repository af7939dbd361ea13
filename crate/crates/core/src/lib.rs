//! Knowledge rectification distillation for long-tailed classification.
//!
//! A teacher trained on imbalanced data passes on biased features and
//! biased predictions. This crate rectifies both before distilling them into
//! a smaller student:
//!
//! * [`rectify`] moves teacher features toward well-separated class targets
//!   on the unit sphere, weighted toward rare classes, and corrects
//!   misclassified teacher distributions;
//! * [`losses`] holds the distillation objectives with analytic gradients;
//! * [`trainer`] runs teacher pretraining, the statistics pass, the
//!   distillation loop and the ablation variants;
//! * [`cli`] is the `krdistill` command line;
//! * [`numerics`], [`nets`] and [`data`] are the small dense-matrix,
//!   network and dataset layers underneath.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod nets;
pub mod numerics;
pub mod rectify;
pub mod trainer;

pub use error::{KrdError, Result};
