//! Core algorithms for volumetric lymph-node segmentation studies.
//!
//! This crate houses the compute side of the toolkit: voxel grids with
//! geometry-preserving resampling, the CT preprocessing chain with
//! slab decomposition and stitching, probability-map ensembling,
//! instance extraction with short-axis morphometrics, the detection and
//! segmentation metric suite, patient-level cross-validation, and a
//! synthetic phantom generator with an independent brute-force metrics
//! oracle.
//!
//! The crate is `no_std` (with `alloc`); file formats, CLI, and timing
//! live in the companion `lnseg-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod cv;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod instances;
pub mod phantom;
pub mod pipeline;
pub mod resample;
pub mod rng;
pub mod station;

pub use error::{Error, Result};
pub use grid::{Kind, Samples, VoxelGrid};
