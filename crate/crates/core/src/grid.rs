//! 3D scalar lattice with per-axis millimeter spacing.
//!
//! A [`VoxelGrid`] is the carrier for CT volumes, probability maps,
//! binary masks, and label maps. Values are stored x-fastest
//! (`index = x + dims[0] * (y + dims[1] * z)`), and the storage width is
//! fixed per kind: `i16` for Hounsfield units, `f32` for continuous
//! values in `[0, 1]`, `u8` for binary masks, `u16` for labels.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

/// What a grid's values mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    CtHu,
    Probability,
    Binary,
    Label,
}

/// Kind-tagged value storage. Each kind owns its width, so a grid cannot
/// hold values its kind forbids.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    CtHu(Vec<i16>),
    Probability(Vec<f32>),
    Binary(Vec<u8>),
    Label(Vec<u16>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::CtHu(v) => v.len(),
            Samples::Probability(v) => v.len(),
            Samples::Binary(v) => v.len(),
            Samples::Label(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> Kind {
        match self {
            Samples::CtHu(_) => Kind::CtHu,
            Samples::Probability(_) => Kind::Probability,
            Samples::Binary(_) => Kind::Binary,
            Samples::Label(_) => Kind::Label,
        }
    }
}

/// 3D scalar lattice plus geometry: voxel counts per axis, spacing in
/// mm/voxel, and the position of the first voxel corner in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    values: Samples,
}

fn check_geometry(dims: [usize; 3], spacing: [f64; 3], len: usize) -> Result<()> {
    if dims.contains(&0) {
        return Err(invalid(format_args!("dims must all be >= 1, got {dims:?}")));
    }
    if spacing.iter().any(|&s| !s.is_finite() || s <= 0.0) {
        return Err(invalid(format_args!(
            "spacing must be positive and finite, got {spacing:?}"
        )));
    }
    let expect = dims[0]
        .checked_mul(dims[1])
        .and_then(|p| p.checked_mul(dims[2]))
        .ok_or_else(|| invalid("dims overflow"))?;
    if expect != len {
        return Err(invalid(format_args!(
            "value count {len} does not match dims {dims:?} ({expect} voxels)"
        )));
    }
    Ok(())
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], values: Samples) -> Result<Self> {
        check_geometry(dims, spacing, values.len())?;
        match &values {
            Samples::Probability(v) => {
                if let Some(bad) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                    return Err(invalid(format_args!(
                        "probability value {bad} outside [0, 1]"
                    )));
                }
            }
            Samples::Binary(v) => {
                if let Some(bad) = v.iter().find(|&&x| x > 1) {
                    return Err(invalid(format_args!("binary value {bad} not in {{0, 1}}")));
                }
            }
            Samples::CtHu(_) | Samples::Label(_) => {}
        }
        Ok(Self {
            dims,
            spacing,
            origin: [0.0; 3],
            values,
        })
    }

    pub fn ct(dims: [usize; 3], spacing: [f64; 3], values: Vec<i16>) -> Result<Self> {
        Self::new(dims, spacing, Samples::CtHu(values))
    }

    pub fn probability(dims: [usize; 3], spacing: [f64; 3], values: Vec<f32>) -> Result<Self> {
        Self::new(dims, spacing, Samples::Probability(values))
    }

    pub fn binary(dims: [usize; 3], spacing: [f64; 3], values: Vec<u8>) -> Result<Self> {
        Self::new(dims, spacing, Samples::Binary(values))
    }

    pub fn label(dims: [usize; 3], spacing: [f64; 3], values: Vec<u16>) -> Result<Self> {
        Self::new(dims, spacing, Samples::Label(values))
    }

    /// All-zero grid of the given kind.
    pub fn zeros(dims: [usize; 3], spacing: [f64; 3], kind: Kind) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        let values = match kind {
            Kind::CtHu => Samples::CtHu(vec![0; n]),
            Kind::Probability => Samples::Probability(vec![0.0; n]),
            Kind::Binary => Samples::Binary(vec![0; n]),
            Kind::Label => Samples::Label(vec![0; n]),
        };
        Self::new(dims, spacing, values)
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Self {
        self.origin = origin;
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn kind(&self) -> Kind {
        self.values.kind()
    }

    pub fn values(&self) -> &Samples {
        &self.values
    }

    pub fn voxel_count(&self) -> usize {
        self.values.len()
    }

    /// Physical volume of one voxel in mm^3.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Value at a linear index, widened to f64 regardless of kind.
    #[inline]
    pub fn value_f64(&self, idx: usize) -> f64 {
        match &self.values {
            Samples::CtHu(v) => v[idx] as f64,
            Samples::Probability(v) => v[idx] as f64,
            Samples::Binary(v) => v[idx] as f64,
            Samples::Label(v) => v[idx] as f64,
        }
    }

    pub fn as_ct(&self) -> Result<&[i16]> {
        match &self.values {
            Samples::CtHu(v) => Ok(v),
            _ => Err(invalid(format_args!(
                "expected CT-HU grid, got {:?}",
                self.kind()
            ))),
        }
    }

    pub fn as_probability(&self) -> Result<&[f32]> {
        match &self.values {
            Samples::Probability(v) => Ok(v),
            _ => Err(invalid(format_args!(
                "expected probability grid, got {:?}",
                self.kind()
            ))),
        }
    }

    pub fn as_binary(&self) -> Result<&[u8]> {
        match &self.values {
            Samples::Binary(v) => Ok(v),
            _ => Err(invalid(format_args!(
                "expected binary grid, got {:?}",
                self.kind()
            ))),
        }
    }

    pub fn as_label(&self) -> Result<&[u16]> {
        match &self.values {
            Samples::Label(v) => Ok(v),
            _ => Err(invalid(format_args!(
                "expected label grid, got {:?}",
                self.kind()
            ))),
        }
    }

    /// Number of nonzero voxels (foreground for binary/label grids).
    pub fn foreground_count(&self) -> usize {
        match &self.values {
            Samples::CtHu(v) => v.iter().filter(|&&x| x != 0).count(),
            Samples::Probability(v) => v.iter().filter(|&&x| x != 0.0).count(),
            Samples::Binary(v) => v.iter().filter(|&&x| x != 0).count(),
            Samples::Label(v) => v.iter().filter(|&&x| x != 0).count(),
        }
    }

    /// Dims equal and spacing/origin equal within a small relative slack,
    /// so grids produced by the same arithmetic compare as identical.
    pub fn same_geometry(&self, other: &VoxelGrid) -> bool {
        fn close(a: f64, b: f64) -> bool {
            let scale = libm::fabs(a).max(libm::fabs(b)).max(1.0);
            libm::fabs(a - b) <= 1e-9 * scale
        }
        self.dims == other.dims
            && (0..3).all(|i| close(self.spacing[i], other.spacing[i]))
            && (0..3).all(|i| close(self.origin[i], other.origin[i]))
    }

    pub fn ensure_same_geometry(&self, other: &VoxelGrid) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(alloc::format!(
                "dims {:?} vs {:?}, spacing {:?} vs {:?}",
                self.dims,
                other.dims,
                self.spacing,
                other.spacing
            )))
        }
    }
}
