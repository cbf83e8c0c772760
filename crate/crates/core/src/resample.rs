//! Geometry-preserving numeric operations on voxel grids: isotropic
//! resampling, resizing, cropping, and intensity clip-normalization.
//!
//! Continuous kinds (CT, probability) interpolate trilinearly; binary
//! and label grids always use nearest-neighbor so no new values are
//! invented. Sampling positions map voxel centers: output voxel `j`
//! reads input coordinate `u = (j + 0.5) * scale - 0.5`, clamped to the
//! border (no extrapolation). Interpolation accumulates in f64 before
//! narrowing, which keeps constant grids bit-exact.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::geometry::{BoundingBox, TransformStep};
use crate::grid::{Samples, VoxelGrid};

/// Round half away from zero; for the positive extents used here this is
/// round-half-up.
fn round_dim(x: f64) -> usize {
    let r = libm::round(x);
    if r < 1.0 {
        1
    } else {
        r as usize
    }
}

struct AxisTap {
    lo: usize,
    hi: usize,
    frac: f64,
    nearest: usize,
}

/// Per-output-index sampling positions along one axis.
fn axis_taps(out_dim: usize, in_dim: usize, scale: f64) -> Vec<AxisTap> {
    let max = (in_dim - 1) as f64;
    (0..out_dim)
        .map(|j| {
            let mut u = (j as f64 + 0.5) * scale - 0.5;
            if u < 0.0 {
                u = 0.0;
            }
            if u > max {
                u = max;
            }
            let lo = libm::floor(u) as usize;
            let hi = (lo + 1).min(in_dim - 1);
            let frac = u - lo as f64;
            let nearest = libm::floor(u + 0.5) as usize;
            AxisTap {
                lo,
                hi,
                frac,
                nearest: nearest.min(in_dim - 1),
            }
        })
        .collect()
}

fn resample_to(grid: &VoxelGrid, out_dims: [usize; 3], scale: [f64; 3]) -> Result<Samples> {
    let in_dims = grid.dims();
    let tx = axis_taps(out_dims[0], in_dims[0], scale[0]);
    let ty = axis_taps(out_dims[1], in_dims[1], scale[1]);
    let tz = axis_taps(out_dims[2], in_dims[2], scale[2]);
    let n = out_dims[0] * out_dims[1] * out_dims[2];
    let plane = in_dims[0] * in_dims[1];
    let row = in_dims[0];

    macro_rules! trilinear {
        ($src:expr, $to:expr) => {{
            let src = $src;
            let mut out = Vec::with_capacity(n);
            for z in &tz {
                let (z0, z1, fz) = (z.lo * plane, z.hi * plane, z.frac);
                for y in &ty {
                    let (y0, y1, fy) = (y.lo * row, y.hi * row, y.frac);
                    let b00 = z0 + y0;
                    let b01 = z0 + y1;
                    let b10 = z1 + y0;
                    let b11 = z1 + y1;
                    for x in &tx {
                        let fx = x.frac;
                        let c000 = src[b00 + x.lo] as f64;
                        let c100 = src[b00 + x.hi] as f64;
                        let c010 = src[b01 + x.lo] as f64;
                        let c110 = src[b01 + x.hi] as f64;
                        let c001 = src[b10 + x.lo] as f64;
                        let c101 = src[b10 + x.hi] as f64;
                        let c011 = src[b11 + x.lo] as f64;
                        let c111 = src[b11 + x.hi] as f64;
                        let e00 = c000 + (c100 - c000) * fx;
                        let e01 = c010 + (c110 - c010) * fx;
                        let e10 = c001 + (c101 - c001) * fx;
                        let e11 = c011 + (c111 - c011) * fx;
                        let f0 = e00 + (e01 - e00) * fy;
                        let f1 = e10 + (e11 - e10) * fy;
                        let v = f0 + (f1 - f0) * fz;
                        out.push($to(v));
                    }
                }
            }
            out
        }};
    }

    macro_rules! nearest {
        ($src:expr) => {{
            let src = $src;
            let mut out = Vec::with_capacity(n);
            for z in &tz {
                let zb = z.nearest * plane;
                for y in &ty {
                    let b = zb + y.nearest * row;
                    for x in &tx {
                        out.push(src[b + x.nearest]);
                    }
                }
            }
            out
        }};
    }

    Ok(match grid.values() {
        Samples::CtHu(v) => Samples::CtHu(trilinear!(v, |x: f64| libm::round(x) as i16)),
        Samples::Probability(v) => {
            Samples::Probability(trilinear!(v, |x: f64| x.clamp(0.0, 1.0) as f32))
        }
        Samples::Binary(v) => Samples::Binary(nearest!(v)),
        Samples::Label(v) => Samples::Label(nearest!(v)),
    })
}

/// Resample to isotropic `target_spacing` mm. Output dims are the
/// rounded physical extent, at least 1 per axis.
pub fn resample_isotropic(
    grid: &VoxelGrid,
    target_spacing: f64,
) -> Result<(VoxelGrid, TransformStep)> {
    if !target_spacing.is_finite() || target_spacing <= 0.0 {
        return Err(invalid(format_args!(
            "target spacing must be positive, got {target_spacing}"
        )));
    }
    let dims = grid.dims();
    let spacing = grid.spacing();
    let new_dims = [
        round_dim(dims[0] as f64 * spacing[0] / target_spacing),
        round_dim(dims[1] as f64 * spacing[1] / target_spacing),
        round_dim(dims[2] as f64 * spacing[2] / target_spacing),
    ];
    let new_spacing = [target_spacing; 3];
    let scale = [
        target_spacing / spacing[0],
        target_spacing / spacing[1],
        target_spacing / spacing[2],
    ];
    let values = resample_to(grid, new_dims, scale)?;
    let out = VoxelGrid::new(new_dims, new_spacing, values)?.with_origin(grid.origin());
    let step = TransformStep::Resample {
        old_dims: dims,
        old_spacing: spacing,
        new_dims,
        new_spacing,
    };
    Ok((out, step))
}

/// Resize to explicit dims; spacing rescales so the physical extent is
/// preserved.
pub fn resize(grid: &VoxelGrid, target_dims: [usize; 3]) -> Result<(VoxelGrid, TransformStep)> {
    if target_dims.contains(&0) {
        return Err(invalid(format_args!(
            "target dims must all be >= 1, got {target_dims:?}"
        )));
    }
    let dims = grid.dims();
    let spacing = grid.spacing();
    let new_spacing = [
        spacing[0] * dims[0] as f64 / target_dims[0] as f64,
        spacing[1] * dims[1] as f64 / target_dims[1] as f64,
        spacing[2] * dims[2] as f64 / target_dims[2] as f64,
    ];
    let scale = [
        dims[0] as f64 / target_dims[0] as f64,
        dims[1] as f64 / target_dims[1] as f64,
        dims[2] as f64 / target_dims[2] as f64,
    ];
    let values = resample_to(grid, target_dims, scale)?;
    let out = VoxelGrid::new(target_dims, new_spacing, values)?.with_origin(grid.origin());
    let step = TransformStep::Resize {
        old_dims: dims,
        old_spacing: spacing,
        new_dims: target_dims,
        new_spacing,
    };
    Ok((out, step))
}

/// Copy the box region verbatim; spacing unchanged.
pub fn crop(grid: &VoxelGrid, bbox: &BoundingBox) -> Result<(VoxelGrid, TransformStep)> {
    let dims = grid.dims();
    if !bbox.contains_dims(dims) {
        return Err(Error::OutOfBounds(alloc::format!(
            "box {bbox:?} does not fit inside grid dims {dims:?}"
        )));
    }
    let ext = bbox.extents();

    fn copy_box<T: Copy>(
        src: &[T],
        dims: [usize; 3],
        bbox: &BoundingBox,
        ext: [usize; 3],
    ) -> Vec<T> {
        let mut out = Vec::with_capacity(ext[0] * ext[1] * ext[2]);
        for z in bbox.min[2]..=bbox.max[2] {
            for y in bbox.min[1]..=bbox.max[1] {
                let base = (z * dims[1] + y) * dims[0];
                out.extend_from_slice(&src[base + bbox.min[0]..=base + bbox.max[0]]);
            }
        }
        out
    }

    let values = match grid.values() {
        Samples::CtHu(v) => Samples::CtHu(copy_box(v, dims, bbox, ext)),
        Samples::Probability(v) => Samples::Probability(copy_box(v, dims, bbox, ext)),
        Samples::Binary(v) => Samples::Binary(copy_box(v, dims, bbox, ext)),
        Samples::Label(v) => Samples::Label(copy_box(v, dims, bbox, ext)),
    };
    let spacing = grid.spacing();
    let origin = grid.origin();
    let new_origin = [
        origin[0] + bbox.min[0] as f64 * spacing[0],
        origin[1] + bbox.min[1] as f64 * spacing[1],
        origin[2] + bbox.min[2] as f64 * spacing[2],
    ];
    let out = VoxelGrid::new(ext, spacing, values)?.with_origin(new_origin);
    let step = TransformStep::Crop {
        bbox: *bbox,
        old_dims: dims,
    };
    Ok((out, step))
}

/// Inverse of [`crop`]: place the grid back at `bbox` inside a zero grid
/// of `old_dims`.
pub fn paste_into_zeros(
    grid: &VoxelGrid,
    bbox: &BoundingBox,
    old_dims: [usize; 3],
) -> Result<VoxelGrid> {
    if bbox.extents() != grid.dims() {
        return Err(invalid(format_args!(
            "grid dims {:?} do not match box extents {:?}",
            grid.dims(),
            bbox.extents()
        )));
    }
    if (0..3).any(|i| bbox.max[i] >= old_dims[i]) {
        return Err(Error::OutOfBounds(alloc::format!(
            "box {bbox:?} does not fit inside dims {old_dims:?}"
        )));
    }
    let ext = bbox.extents();

    fn paste<T: Copy + Default>(
        src: &[T],
        ext: [usize; 3],
        bbox: &BoundingBox,
        old_dims: [usize; 3],
    ) -> Vec<T> {
        let mut out = vec![T::default(); old_dims[0] * old_dims[1] * old_dims[2]];
        for z in 0..ext[2] {
            for y in 0..ext[1] {
                let src_base = (z * ext[1] + y) * ext[0];
                let dst_base =
                    ((z + bbox.min[2]) * old_dims[1] + (y + bbox.min[1])) * old_dims[0]
                        + bbox.min[0];
                out[dst_base..dst_base + ext[0]]
                    .copy_from_slice(&src[src_base..src_base + ext[0]]);
            }
        }
        out
    }

    let values = match grid.values() {
        Samples::CtHu(v) => Samples::CtHu(paste(v, ext, bbox, old_dims)),
        Samples::Probability(v) => Samples::Probability(paste(v, ext, bbox, old_dims)),
        Samples::Binary(v) => Samples::Binary(paste(v, ext, bbox, old_dims)),
        Samples::Label(v) => Samples::Label(paste(v, ext, bbox, old_dims)),
    };
    let spacing = grid.spacing();
    let origin = grid.origin();
    let new_origin = [
        origin[0] - bbox.min[0] as f64 * spacing[0],
        origin[1] - bbox.min[1] as f64 * spacing[1],
        origin[2] - bbox.min[2] as f64 * spacing[2],
    ];
    Ok(VoxelGrid::new(old_dims, spacing, values)?.with_origin(new_origin))
}

/// Clamp HU values to `[lo, hi]` and map linearly onto `[0, 1]`.
pub fn clip_normalize(grid: &VoxelGrid, lo_hu: f64, hi_hu: f64) -> Result<VoxelGrid> {
    if lo_hu.is_nan() || hi_hu.is_nan() || lo_hu >= hi_hu {
        return Err(invalid(format_args!(
            "clip range must satisfy lo < hi, got [{lo_hu}, {hi_hu}]"
        )));
    }
    let src = grid.as_ct()?;
    let span = hi_hu - lo_hu;
    let values: Vec<f32> = src
        .iter()
        .map(|&v| {
            let c = (v as f64).clamp(lo_hu, hi_hu);
            (((c - lo_hu) / span) as f32).clamp(0.0, 1.0)
        })
        .collect();
    Ok(VoxelGrid::probability(grid.dims(), grid.spacing(), values)?.with_origin(grid.origin()))
}

/// Apply one recorded step forward on a grid in the step's input space.
/// The intensity clip applies to CT grids and passes other kinds through,
/// so masks and probability maps can ride the same record.
pub fn apply_step(grid: &VoxelGrid, step: &TransformStep) -> Result<VoxelGrid> {
    match step {
        TransformStep::Resample {
            old_dims,
            old_spacing,
            new_dims,
            new_spacing,
        }
        | TransformStep::Resize {
            old_dims,
            old_spacing,
            new_dims,
            new_spacing,
        } => {
            if grid.dims() != *old_dims {
                return Err(invalid(format_args!(
                    "step expects dims {old_dims:?}, grid has {:?}",
                    grid.dims()
                )));
            }
            let scale = [
                new_spacing[0] / old_spacing[0],
                new_spacing[1] / old_spacing[1],
                new_spacing[2] / old_spacing[2],
            ];
            let values = resample_to(grid, *new_dims, scale)?;
            Ok(VoxelGrid::new(*new_dims, *new_spacing, values)?.with_origin(grid.origin()))
        }
        TransformStep::Crop { bbox, .. } => crop(grid, bbox).map(|(g, _)| g),
        TransformStep::ClipNormalize { lo_hu, hi_hu } => {
            if grid.kind() == crate::grid::Kind::CtHu {
                clip_normalize(grid, *lo_hu, *hi_hu)
            } else {
                Ok(grid.clone())
            }
        }
    }
}

/// Invert one recorded step on a grid currently in the step's output
/// space. `ClipNormalize` is value-space only and restores as identity.
pub fn invert_step(grid: &VoxelGrid, step: &TransformStep) -> Result<VoxelGrid> {
    match step {
        TransformStep::Resample {
            old_dims,
            old_spacing,
            new_dims,
            new_spacing,
        }
        | TransformStep::Resize {
            old_dims,
            old_spacing,
            new_dims,
            new_spacing,
        } => {
            if grid.dims() != *new_dims {
                return Err(invalid(format_args!(
                    "grid dims {:?} do not match step output dims {new_dims:?}",
                    grid.dims()
                )));
            }
            // Original voxel i maps into the processed grid at coordinate
            // ((i + 0.5) * old_spacing) / new_spacing - 0.5.
            let scale = [
                old_spacing[0] / new_spacing[0],
                old_spacing[1] / new_spacing[1],
                old_spacing[2] / new_spacing[2],
            ];
            let values = resample_to(grid, *old_dims, scale)?;
            Ok(VoxelGrid::new(*old_dims, *old_spacing, values)?.with_origin(grid.origin()))
        }
        TransformStep::Crop { bbox, old_dims } => paste_into_zeros(grid, bbox, *old_dims),
        TransformStep::ClipNormalize { .. } => Ok(grid.clone()),
    }
}
