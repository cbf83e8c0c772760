//! Bounding boxes and the invertible transform log.
//!
//! Every geometric operation in the preprocessing chain appends a
//! [`TransformStep`] to a [`GeometryRecord`]. Replaying the record
//! forward maps the original grid dims to the processed dims exactly;
//! each step stores enough to be inverted without external state, so a
//! probability map can later be pushed back into the referential space
//! of the original volume.

use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// Inclusive axis-aligned voxel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundingBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BoundingBox {
    pub fn new(min: [usize; 3], max: [usize; 3]) -> Result<Self> {
        if (0..3).any(|i| min[i] > max[i]) {
            return Err(invalid(format_args!(
                "box min {min:?} exceeds max {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    /// Voxel counts per axis (inclusive box).
    pub fn extents(&self) -> [usize; 3] {
        [
            self.max[0] - self.min[0] + 1,
            self.max[1] - self.min[1] + 1,
            self.max[2] - self.min[2] + 1,
        ]
    }

    pub fn contains_dims(&self, dims: [usize; 3]) -> bool {
        (0..3).all(|i| self.max[i] < dims[i])
    }

    pub fn voxel_count(&self) -> usize {
        let e = self.extents();
        e[0] * e[1] * e[2]
    }
}

/// One recorded preprocessing step.
///
/// `ClipNormalize` is recorded for completeness so the record describes
/// the full chain; it does not move voxels, and restoration back to the
/// original space leaves probability values untouched by it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "step", rename_all = "snake_case"))]
pub enum TransformStep {
    Resample {
        old_dims: [usize; 3],
        old_spacing: [f64; 3],
        new_dims: [usize; 3],
        new_spacing: [f64; 3],
    },
    /// `bbox` is expressed in the pre-crop grid.
    Crop {
        bbox: BoundingBox,
        old_dims: [usize; 3],
    },
    Resize {
        old_dims: [usize; 3],
        old_spacing: [f64; 3],
        new_dims: [usize; 3],
        new_spacing: [f64; 3],
    },
    ClipNormalize {
        lo_hu: f64,
        hi_hu: f64,
    },
}

impl TransformStep {
    /// Dims a grid of `dims` has after this step.
    pub fn apply_dims(&self, dims: [usize; 3]) -> Result<[usize; 3]> {
        match self {
            TransformStep::Resample {
                old_dims, new_dims, ..
            }
            | TransformStep::Resize {
                old_dims, new_dims, ..
            } => {
                if dims != *old_dims {
                    return Err(invalid(format_args!(
                        "step expects dims {old_dims:?}, got {dims:?}"
                    )));
                }
                Ok(*new_dims)
            }
            TransformStep::Crop { bbox, old_dims } => {
                if dims != *old_dims {
                    return Err(invalid(format_args!(
                        "crop step expects dims {old_dims:?}, got {dims:?}"
                    )));
                }
                Ok(bbox.extents())
            }
            TransformStep::ClipNormalize { .. } => Ok(dims),
        }
    }
}

/// Ordered, invertible log of preprocessing steps.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeometryRecord {
    pub steps: Vec<TransformStep>,
}

impl GeometryRecord {
    pub fn new() -> Self {
        Self { steps: Vec::new() }
    }

    pub fn push(&mut self, step: TransformStep) {
        self.steps.push(step);
    }

    /// Replay the record forward on a starting dim triple.
    pub fn replay_dims(&self, start: [usize; 3]) -> Result<[usize; 3]> {
        let mut dims = start;
        for step in &self.steps {
            dims = step.apply_dims(dims)?;
        }
        Ok(dims)
    }

    /// Dims of the grid the record was built from, if any geometric step
    /// is present.
    pub fn original_dims(&self) -> Option<[usize; 3]> {
        self.steps.iter().find_map(|s| match s {
            TransformStep::Resample { old_dims, .. }
            | TransformStep::Resize { old_dims, .. }
            | TransformStep::Crop { old_dims, .. } => Some(*old_dims),
            TransformStep::ClipNormalize { .. } => None,
        })
    }

    /// Dims after the final step, given the starting dims.
    pub fn final_dims(&self, start: [usize; 3]) -> Result<[usize; 3]> {
        self.replay_dims(start)
    }
}
