#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod classical;
pub mod data;
pub mod dists;
pub mod error;
pub mod math;
pub mod mcmc;
pub mod model;
pub mod report;
pub mod simulate;

pub use data::{validate_dataset, Arm, MetaDataset, StudyRecord};
pub use error::{Error, Result};
