//! The CT preprocessing chain, slab decomposition and stitching,
//! probability-map ensembling, and restoration to the referential space
//! of the original volume.
//!
//! Preprocessing applies, in order: resampling to 1 mm isotropic
//! spacing, cropping to the lung bounding box, resizing to the working
//! resolution (256x192 axial with preserved depth for the slab route,
//! 128x128x144 for the full-volume route), and clipping intensities to
//! [-250, 500] HU normalized onto [0, 1]. All four steps land in the
//! returned [`GeometryRecord`].

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::geometry::{BoundingBox, GeometryRecord, TransformStep};
use crate::grid::{Kind, VoxelGrid};
use crate::instances::{connected_components, Connectivity};
use crate::resample::{apply_step, clip_normalize, crop, invert_step, resample_isotropic, resize};

pub const ISO_SPACING_MM: f64 = 1.0;
pub const SLAB_AXIAL_DIMS: [usize; 2] = [256, 192];
pub const FULLVOL_DIMS: [usize; 3] = [128, 128, 144];
pub const CLIP_LO_HU: f64 = -250.0;
pub const CLIP_HI_HU: f64 = 500.0;
/// Threshold for the fallback lung finder when no mask is supplied.
pub const LUNG_THRESHOLD_HU: i16 = -320;

/// Slab decomposition parameters. The stride must not exceed the slab
/// size so consecutive slabs overlap (or tile exactly).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SlabSpec {
    pub slab_size: usize,
    pub stride: usize,
}

impl SlabSpec {
    pub fn new(slab_size: usize, stride: usize) -> Result<Self> {
        if slab_size == 0 || stride == 0 {
            return Err(invalid("slab size and stride must be >= 1"));
        }
        if stride > slab_size {
            return Err(invalid(format_args!(
                "stride {stride} exceeds slab size {slab_size}"
            )));
        }
        Ok(Self { slab_size, stride })
    }

    /// Slices shared by two consecutive slabs when the depth permits.
    pub fn overlap(&self) -> usize {
        self.slab_size - self.stride
    }
}

/// One z-chunk of a parent volume. `valid_len < slab_size` only when the
/// parent was shallower than one slab and the tail is zero padding.
#[derive(Debug, Clone)]
pub struct Slab {
    pub z_start: usize,
    pub valid_len: usize,
    pub grid: VoxelGrid,
}

/// Ordered slab decomposition of one parent volume.
#[derive(Debug, Clone)]
pub struct SlabSet {
    slabs: Vec<Slab>,
    parent_dims: [usize; 3],
    parent_spacing: [f64; 3],
    parent_origin: [f64; 3],
    slab_size: usize,
}

impl SlabSet {
    pub fn slabs(&self) -> &[Slab] {
        &self.slabs
    }

    pub fn parent_dims(&self) -> [usize; 3] {
        self.parent_dims
    }

    pub fn parent_spacing(&self) -> [f64; 3] {
        self.parent_spacing
    }

    pub fn parent_origin(&self) -> [f64; 3] {
        self.parent_origin
    }

    pub fn slab_size(&self) -> usize {
        self.slab_size
    }

    pub fn z_starts(&self) -> Vec<usize> {
        self.slabs.iter().map(|s| s.z_start).collect()
    }

    /// Rebuild a slab set from stored parts, enforcing the coverage and
    /// ordering invariants; used when slab predictions come back from an
    /// external inference step.
    pub fn from_parts(
        parent_dims: [usize; 3],
        parent_spacing: [f64; 3],
        parent_origin: [f64; 3],
        slab_size: usize,
        slabs: Vec<Slab>,
    ) -> Result<Self> {
        if slabs.is_empty() {
            return Err(invalid("slab set must contain at least one slab"));
        }
        let mut covered = vec![false; parent_dims[2]];
        let mut prev: Option<usize> = None;
        for slab in &slabs {
            if let Some(p) = prev {
                if slab.z_start <= p {
                    return Err(invalid("slab starts must be strictly increasing"));
                }
            }
            prev = Some(slab.z_start);
            let dims = slab.grid.dims();
            if dims[0] != parent_dims[0] || dims[1] != parent_dims[1] || dims[2] != slab_size {
                return Err(Error::GeometryMismatch(alloc::format!(
                    "slab dims {dims:?} incompatible with parent {parent_dims:?} and slab size {slab_size}"
                )));
            }
            if slab.valid_len == 0 || slab.valid_len > slab_size {
                return Err(invalid("slab valid length out of range"));
            }
            let end = slab.z_start + slab.valid_len;
            if end > parent_dims[2] {
                return Err(Error::OutOfBounds(alloc::format!(
                    "slab [{}, {end}) exceeds parent depth {}",
                    slab.z_start,
                    parent_dims[2]
                )));
            }
            for c in &mut covered[slab.z_start..end] {
                *c = true;
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(invalid("slab set leaves parent slices uncovered"));
        }
        Ok(Self {
            slabs,
            parent_dims,
            parent_spacing,
            parent_origin,
            slab_size,
        })
    }

    /// Replace slab contents with externally predicted grids of the same
    /// shape, preserving starts and valid ranges.
    pub fn with_predictions(&self, predictions: Vec<VoxelGrid>) -> Result<SlabSet> {
        if predictions.len() != self.slabs.len() {
            return Err(invalid(format_args!(
                "{} predictions for {} slabs",
                predictions.len(),
                self.slabs.len()
            )));
        }
        let slabs = self
            .slabs
            .iter()
            .zip(predictions)
            .map(|(slab, grid)| {
                if grid.dims() != slab.grid.dims() {
                    return Err(Error::GeometryMismatch(alloc::format!(
                        "prediction dims {:?} do not match slab dims {:?}",
                        grid.dims(),
                        slab.grid.dims()
                    )));
                }
                Ok(Slab {
                    z_start: slab.z_start,
                    valid_len: slab.valid_len,
                    grid,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SlabSet::from_parts(
            self.parent_dims,
            self.parent_spacing,
            self.parent_origin,
            self.slab_size,
            slabs,
        )
    }
}

/// Decompose a volume into overlapping z-slabs. Starts advance by the
/// stride; the final start is clamped to `depth - slab_size` so the last
/// slab ends at the top without interior padding. Volumes shallower than
/// one slab produce a single zero-padded slab with its valid range
/// recorded.
pub fn extract_slabs(vol: &VoxelGrid, spec: &SlabSpec) -> Result<SlabSet> {
    let dims = vol.dims();
    let depth = dims[2];
    let plane = dims[0] * dims[1];

    let starts: Vec<usize> = if depth >= spec.slab_size {
        let mut starts: Vec<usize> = (0..)
            .map(|i| i * spec.stride)
            .take_while(|s| s + spec.slab_size <= depth)
            .collect();
        let last = depth - spec.slab_size;
        if *starts.last().expect("at least start 0") != last {
            starts.push(last);
        }
        starts
    } else {
        vec![0]
    };

    let slab_dims = [dims[0], dims[1], spec.slab_size];
    let slabs = starts
        .into_iter()
        .map(|z_start| {
            let valid_len = spec.slab_size.min(depth - z_start);
            let grid = copy_z_range(vol, slab_dims, z_start, valid_len, plane)?;
            Ok(Slab {
                z_start,
                valid_len,
                grid,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    SlabSet::from_parts(dims, vol.spacing(), vol.origin(), spec.slab_size, slabs)
}

fn copy_z_range(
    vol: &VoxelGrid,
    slab_dims: [usize; 3],
    z_start: usize,
    valid_len: usize,
    plane: usize,
) -> Result<VoxelGrid> {
    use crate::grid::Samples;

    fn fill<T: Copy + Default>(
        src: &[T],
        plane: usize,
        slab_dims: [usize; 3],
        z_start: usize,
        valid_len: usize,
    ) -> Vec<T> {
        let mut out = vec![T::default(); plane * slab_dims[2]];
        out[..plane * valid_len]
            .copy_from_slice(&src[z_start * plane..(z_start + valid_len) * plane]);
        out
    }

    let values = match vol.values() {
        Samples::CtHu(v) => Samples::CtHu(fill(v, plane, slab_dims, z_start, valid_len)),
        Samples::Probability(v) => {
            Samples::Probability(fill(v, plane, slab_dims, z_start, valid_len))
        }
        Samples::Binary(v) => Samples::Binary(fill(v, plane, slab_dims, z_start, valid_len)),
        Samples::Label(v) => Samples::Label(fill(v, plane, slab_dims, z_start, valid_len)),
    };
    let origin = vol.origin();
    let slab_origin = [
        origin[0],
        origin[1],
        origin[2] + z_start as f64 * vol.spacing()[2],
    ];
    Ok(VoxelGrid::new(slab_dims, vol.spacing(), values)?.with_origin(slab_origin))
}

/// Fuse overlapping slab predictions back into the parent volume. Each
/// output voxel is the arithmetic mean of the slab predictions covering
/// it; padded slices never contribute.
pub fn stitch_slabs(set: &SlabSet) -> Result<VoxelGrid> {
    let dims = set.parent_dims();
    let plane = dims[0] * dims[1];
    let n = plane * dims[2];
    let mut sum = vec![0.0f64; n];
    let mut count = vec![0u32; n];
    for slab in set.slabs() {
        let values = slab.grid.as_probability().map_err(|_| {
            invalid("stitching expects probability slabs")
        })?;
        for dz in 0..slab.valid_len {
            let dst = (slab.z_start + dz) * plane;
            let src = dz * plane;
            for i in 0..plane {
                sum[dst + i] += values[src + i] as f64;
                count[dst + i] += 1;
            }
        }
    }
    if count.contains(&0) {
        return Err(invalid("slab set leaves output voxels uncovered"));
    }
    let out: Vec<f32> = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| (s / c as f64) as f32)
        .collect();
    Ok(VoxelGrid::probability(dims, set.parent_spacing(), out)?.with_origin(set.parent_origin()))
}

/// Pixel-wise maximum of two probability maps.
pub fn ensemble_max(a: &VoxelGrid, b: &VoxelGrid) -> Result<VoxelGrid> {
    a.ensure_same_geometry(b)?;
    let av = a.as_probability()?;
    let bv = b.as_probability()?;
    let out: Vec<f32> = av.iter().zip(bv).map(|(&x, &y)| x.max(y)).collect();
    Ok(VoxelGrid::probability(a.dims(), a.spacing(), out)?.with_origin(a.origin()))
}

/// Fold a set of probability maps with [`ensemble_max`]; associativity
/// makes the order irrelevant.
pub fn ensemble_max_all(maps: &[VoxelGrid]) -> Result<VoxelGrid> {
    let (first, rest) = maps
        .split_first()
        .ok_or_else(|| invalid("ensemble needs at least one probability map"))?;
    let mut acc = first.clone();
    for m in rest {
        acc = ensemble_max(&acc, m)?;
    }
    Ok(acc)
}

/// Multi-channel network input: channel 0 is the normalized CT, channel
/// 1 (when present) the binary union of the anatomical prior masks.
#[derive(Debug, Clone)]
pub struct MultiChannelSample {
    channels: Vec<VoxelGrid>,
}

impl MultiChannelSample {
    pub fn channels(&self) -> &[VoxelGrid] {
        &self.channels
    }

    pub fn channel(&self, i: usize) -> Option<&VoxelGrid> {
        self.channels.get(i)
    }
}

/// Stack the normalized CT with the voxelwise OR of the prior masks. An
/// empty prior list yields a single-channel sample.
pub fn stack_priors(ct_norm: &VoxelGrid, priors: &[VoxelGrid]) -> Result<MultiChannelSample> {
    if ct_norm.kind() != Kind::Probability {
        return Err(invalid("channel 0 must be a normalized CT in [0, 1]"));
    }
    if priors.is_empty() {
        return Ok(MultiChannelSample {
            channels: vec![ct_norm.clone()],
        });
    }
    let mut union = vec![0u8; ct_norm.voxel_count()];
    for prior in priors {
        ct_norm.ensure_same_geometry(prior)?;
        for (u, &v) in union.iter_mut().zip(prior.as_binary()?) {
            *u |= v;
        }
    }
    let mask = VoxelGrid::binary(ct_norm.dims(), ct_norm.spacing(), union)?
        .with_origin(ct_norm.origin());
    Ok(MultiChannelSample {
        channels: vec![ct_norm.clone(), mask],
    })
}

/// Tightest bounding box around the lungs. With a mask, the box spans
/// all mask voxels. Without one, a stated approximation stands in for
/// the external segmentation network: voxels below -320 HU are labeled
/// with 6-connectivity and the two largest components not touching the
/// x/y border frame are kept.
pub fn lung_bbox(ct: &VoxelGrid, lung_mask: Option<&VoxelGrid>) -> Result<BoundingBox> {
    if ct.kind() != Kind::CtHu {
        return Err(invalid("lung bounding box expects a CT-HU grid"));
    }
    match lung_mask {
        Some(mask) => {
            ct.ensure_same_geometry(mask)?;
            tightest_box(mask)
        }
        None => fallback_lung_box(ct),
    }
}

fn tightest_box(mask: &VoxelGrid) -> Result<BoundingBox> {
    let values = mask.as_binary()?;
    let dims = mask.dims();
    let mut min = [usize::MAX; 3];
    let mut max = [0usize; 3];
    let mut any = false;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            let base = (z * dims[1] + y) * dims[0];
            for x in 0..dims[0] {
                if values[base + x] != 0 {
                    any = true;
                    min[0] = min[0].min(x);
                    min[1] = min[1].min(y);
                    min[2] = min[2].min(z);
                    max[0] = max[0].max(x);
                    max[1] = max[1].max(y);
                    max[2] = max[2].max(z);
                }
            }
        }
    }
    if !any {
        return Err(Error::NoLungFound);
    }
    BoundingBox::new(min, max)
}

fn fallback_lung_box(ct: &VoxelGrid) -> Result<BoundingBox> {
    let hu = ct.as_ct()?;
    let dims = ct.dims();
    let air: Vec<u8> = hu.iter().map(|&v| u8::from(v < LUNG_THRESHOLD_HU)).collect();
    let air_grid = VoxelGrid::binary(dims, ct.spacing(), air)?;
    let comps = connected_components(&air_grid, Connectivity::Six)?;

    struct Candidate {
        count: usize,
        min: [usize; 3],
        max: [usize; 3],
    }
    let mut candidates: Vec<Candidate> = Vec::new();
    for inst in comps.instances() {
        let mut min = [usize::MAX; 3];
        let mut max = [0usize; 3];
        let mut touches_frame = false;
        for &v in &inst.voxels {
            let [x, y, z] = air_grid.coords(v as usize);
            if x == 0 || x == dims[0] - 1 || y == 0 || y == dims[1] - 1 {
                touches_frame = true;
                break;
            }
            min[0] = min[0].min(x);
            min[1] = min[1].min(y);
            min[2] = min[2].min(z);
            max[0] = max[0].max(x);
            max[1] = max[1].max(y);
            max[2] = max[2].max(z);
        }
        if !touches_frame {
            candidates.push(Candidate {
                count: inst.voxel_count(),
                min,
                max,
            });
        }
    }
    if candidates.is_empty() {
        return Err(Error::NoLungFound);
    }
    candidates.sort_by_key(|c| core::cmp::Reverse(c.count));
    let keep = &candidates[..candidates.len().min(2)];
    let mut min = [usize::MAX; 3];
    let mut max = [0usize; 3];
    for c in keep {
        for i in 0..3 {
            min[i] = min[i].min(c.min[i]);
            max[i] = max[i].max(c.max[i]);
        }
    }
    BoundingBox::new(min, max)
}

/// Which working resolution the chain targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PipelineMode {
    /// High in-plane resolution, depth preserved for slab extraction.
    Slab,
    /// Heavy downsampling to a fixed whole-volume grid.
    FullVolume,
}

#[derive(Debug, Clone, Copy)]
pub struct PreprocessConfig {
    pub mode: PipelineMode,
    pub iso_spacing_mm: f64,
    pub slab_axial_dims: [usize; 2],
    pub fullvol_dims: [usize; 3],
    pub clip_lo_hu: f64,
    pub clip_hi_hu: f64,
}

impl PreprocessConfig {
    pub fn slab() -> Self {
        Self {
            mode: PipelineMode::Slab,
            ..Self::full_volume()
        }
    }

    pub fn full_volume() -> Self {
        Self {
            mode: PipelineMode::FullVolume,
            iso_spacing_mm: ISO_SPACING_MM,
            slab_axial_dims: SLAB_AXIAL_DIMS,
            fullvol_dims: FULLVOL_DIMS,
            clip_lo_hu: CLIP_LO_HU,
            clip_hi_hu: CLIP_HI_HU,
        }
    }
}

/// Run the preprocessing chain on a CT volume. The lung mask, when
/// given, must share the CT's geometry; otherwise the threshold fallback
/// locates the lungs. Returns the normalized working volume and the
/// record of all four steps.
pub fn preprocess(
    ct: &VoxelGrid,
    cfg: &PreprocessConfig,
    lung_mask: Option<&VoxelGrid>,
) -> Result<(VoxelGrid, GeometryRecord)> {
    if ct.kind() != Kind::CtHu {
        return Err(invalid("preprocess expects a CT-HU grid"));
    }
    if let Some(mask) = lung_mask {
        ct.ensure_same_geometry(mask)?;
    }

    let mut record = GeometryRecord::new();

    let (ct_iso, step) = resample_isotropic(ct, cfg.iso_spacing_mm)?;
    record.push(step);
    let mask_iso = lung_mask
        .map(|m| resample_isotropic(m, cfg.iso_spacing_mm).map(|(g, _)| g))
        .transpose()?;

    let bbox = lung_bbox(&ct_iso, mask_iso.as_ref())?;
    let (ct_crop, step) = crop(&ct_iso, &bbox)?;
    record.push(step);

    let target = match cfg.mode {
        PipelineMode::Slab => [
            cfg.slab_axial_dims[0],
            cfg.slab_axial_dims[1],
            ct_crop.dims()[2],
        ],
        PipelineMode::FullVolume => cfg.fullvol_dims,
    };
    let (ct_resized, step) = resize(&ct_crop, target)?;
    record.push(step);

    let out = clip_normalize(&ct_resized, cfg.clip_lo_hu, cfg.clip_hi_hu)?;
    record.push(TransformStep::ClipNormalize {
        lo_hu: cfg.clip_lo_hu,
        hi_hu: cfg.clip_hi_hu,
    });

    Ok((out, record))
}

/// Push any grid forward through a record's steps, e.g. to carry a
/// ground-truth mask into the processed space. The grid must share the
/// geometry the record was built from.
pub fn apply_record(grid: &VoxelGrid, record: &GeometryRecord) -> Result<VoxelGrid> {
    let mut current = grid.clone();
    for step in &record.steps {
        current = apply_step(&current, step)?;
    }
    Ok(current)
}

/// Invert a record on a grid living in the processed space, producing a
/// grid with the original volume's dims and spacing. Voxels outside the
/// crop box restore to exactly zero; the clip step restores as identity.
pub fn restore_original_space(grid: &VoxelGrid, record: &GeometryRecord) -> Result<VoxelGrid> {
    if let Some(original) = record.original_dims() {
        let expected = record.replay_dims(original)?;
        if grid.dims() != expected {
            return Err(invalid(format_args!(
                "grid dims {:?} do not match the record's processed dims {expected:?}",
                grid.dims()
            )));
        }
    }
    let mut current = grid.clone();
    for step in record.steps.iter().rev() {
        current = invert_step(&current, step)?;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn prob_const(dims: [usize; 3], v: f32) -> VoxelGrid {
        VoxelGrid::probability(dims, [1.0; 3], vec![v; dims[0] * dims[1] * dims[2]]).unwrap()
    }

    #[test]
    fn slab_spec_invariants() {
        assert!(SlabSpec::new(32, 8).is_ok());
        assert!(SlabSpec::new(32, 32).is_ok());
        assert!(SlabSpec::new(32, 33).is_err());
        assert!(SlabSpec::new(0, 1).is_err());
        assert!(SlabSpec::new(32, 0).is_err());
        assert_eq!(SlabSpec::new(32, 8).unwrap().overlap(), 24);
        assert_eq!(SlabSpec::new(64, 8).unwrap().overlap(), 56);
    }

    #[test]
    fn depth64_slab32_stride8_gives_five_slabs() {
        let vol = prob_const([4, 4, 64], 0.0);
        let set = extract_slabs(&vol, &SlabSpec::new(32, 8).unwrap()).unwrap();
        assert_eq!(set.z_starts(), vec![0, 8, 16, 24, 32]);
        // Full coverage of every parent slice.
        let mut covered = [false; 64];
        for slab in set.slabs() {
            for z in slab.z_start..slab.z_start + slab.valid_len {
                covered[z] = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn exact_depth_gives_single_slab() {
        let vol = prob_const([4, 4, 32], 0.0);
        let set = extract_slabs(&vol, &SlabSpec::new(32, 8).unwrap()).unwrap();
        assert_eq!(set.z_starts(), vec![0]);
        assert_eq!(set.slabs()[0].valid_len, 32);
    }

    #[test]
    fn consecutive_slabs_share_slab_minus_stride_slices() {
        for (slab_size, expected) in [(32usize, 24usize), (64, 56)] {
            let vol = prob_const([2, 2, 200], 0.0);
            let set = extract_slabs(&vol, &SlabSpec::new(slab_size, 8).unwrap()).unwrap();
            let starts = set.z_starts();
            for w in starts.windows(2) {
                let overlap = (w[0] + slab_size).saturating_sub(w[1]);
                // The clamped final start may overlap more, never less.
                assert!(overlap >= expected || w[1] + slab_size == 200);
                if w[1] - w[0] == 8 {
                    assert_eq!(overlap, expected);
                }
            }
        }
    }

    #[test]
    fn shallow_volume_zero_pads_one_slab() {
        let mut vals = Vec::new();
        for z in 0..5 {
            for _ in 0..4 {
                vals.push(z as f32 / 10.0);
            }
        }
        let vol = VoxelGrid::probability([2, 2, 5], [1.0; 3], vals).unwrap();
        let set = extract_slabs(&vol, &SlabSpec::new(8, 4).unwrap()).unwrap();
        assert_eq!(set.slabs().len(), 1);
        let slab = &set.slabs()[0];
        assert_eq!(slab.valid_len, 5);
        assert_eq!(slab.grid.dims(), [2, 2, 8]);
        let v = slab.grid.as_probability().unwrap();
        assert_eq!(v[4 * 4], 0.4);
        assert!(v[5 * 4..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn stitch_constant_slabs_returns_constant() {
        let vol = prob_const([3, 3, 50], 0.7);
        let set = extract_slabs(&vol, &SlabSpec::new(16, 8).unwrap()).unwrap();
        let out = stitch_slabs(&set).unwrap();
        assert!(out.as_probability().unwrap().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn stitch_averages_two_covering_slabs() {
        let parent_dims = [1, 1, 12];
        let mk = |v: f32| prob_const([1, 1, 8], v);
        let slabs = vec![
            Slab { z_start: 0, valid_len: 8, grid: mk(0.2) },
            Slab { z_start: 4, valid_len: 8, grid: mk(0.8) },
        ];
        let set = SlabSet::from_parts(parent_dims, [1.0; 3], [0.0; 3], 8, slabs).unwrap();
        let out = stitch_slabs(&set).unwrap();
        let v = out.as_probability().unwrap();
        assert_eq!(v[0], 0.2);
        assert_eq!(v[5], 0.5);
        assert_eq!(v[11], 0.8);
    }

    #[test]
    fn stitching_slab_views_reproduces_source_bit_for_bit() {
        let n = 4 * 4 * 37;
        let vals: Vec<f32> = (0..n).map(|i| (i as f32 * 0.618) % 1.0).collect();
        let vol = VoxelGrid::probability([4, 4, 37], [1.0; 3], vals).unwrap();
        let set = extract_slabs(&vol, &SlabSpec::new(8, 3).unwrap()).unwrap();
        let out = stitch_slabs(&set).unwrap();
        assert_eq!(out.as_probability().unwrap(), vol.as_probability().unwrap());
    }

    #[test]
    fn slab_set_rejects_gaps_and_disorder() {
        let mk = |v: f32| prob_const([1, 1, 4], v);
        let gap = vec![
            Slab { z_start: 0, valid_len: 4, grid: mk(0.1) },
            Slab { z_start: 6, valid_len: 4, grid: mk(0.2) },
        ];
        assert!(SlabSet::from_parts([1, 1, 10], [1.0; 3], [0.0; 3], 4, gap).is_err());
        let disorder = vec![
            Slab { z_start: 4, valid_len: 4, grid: mk(0.1) },
            Slab { z_start: 0, valid_len: 4, grid: mk(0.2) },
        ];
        assert!(SlabSet::from_parts([1, 1, 8], [1.0; 3], [0.0; 3], 4, disorder).is_err());
    }

    #[test]
    fn ensemble_max_algebra() {
        let dims = [2, 2, 2];
        let vals: Vec<f32> = (0..8).map(|i| i as f32 / 10.0).collect();
        let p = VoxelGrid::probability(dims, [1.0; 3], vals).unwrap();
        let zero = prob_const(dims, 0.0);
        assert_eq!(ensemble_max(&p, &p).unwrap(), p);
        assert_eq!(ensemble_max(&p, &zero).unwrap().as_probability().unwrap(), p.as_probability().unwrap());
        let q_vals: Vec<f32> = (0..8).map(|i| 0.7 - i as f32 / 20.0).collect();
        let q = VoxelGrid::probability(dims, [1.0; 3], q_vals).unwrap();
        let pq = ensemble_max(&p, &q).unwrap();
        let qp = ensemble_max(&q, &p).unwrap();
        assert_eq!(pq, qp);
        for i in 0..8 {
            let a = p.as_probability().unwrap()[i];
            let b = q.as_probability().unwrap()[i];
            assert_eq!(pq.as_probability().unwrap()[i], a.max(b));
        }
        // 0.3 vs 0.6 picks 0.6.
        assert_eq!(pq.as_probability().unwrap()[6], 0.6);
    }

    #[test]
    fn ensemble_rejects_geometry_mismatch() {
        let a = prob_const([2, 2, 2], 0.5);
        let b = prob_const([2, 2, 3], 0.5);
        assert!(matches!(ensemble_max(&a, &b), Err(Error::GeometryMismatch(_))));
    }

    #[test]
    fn stack_priors_builds_union_channel() {
        let dims = [4, 4, 1];
        let ct = prob_const(dims, 0.4);
        let empty = stack_priors(&ct, &[]).unwrap();
        assert_eq!(empty.channels().len(), 1);

        let mut a = vec![0u8; 16];
        for i in 0..5 {
            a[i] = 1;
        }
        let mut b = vec![0u8; 16];
        for i in 8..15 {
            b[i] = 1;
        }
        let pa = VoxelGrid::binary(dims, [1.0; 3], a).unwrap();
        let pb = VoxelGrid::binary(dims, [1.0; 3], b).unwrap();
        let sample = stack_priors(&ct, &[pa.clone(), pb.clone()]).unwrap();
        assert_eq!(sample.channels().len(), 2);
        assert_eq!(sample.channel(1).unwrap().foreground_count(), 12);

        // Overlapping masks count the union, not the sum.
        let mut c = vec![0u8; 16];
        for i in 3..10 {
            c[i] = 1;
        }
        let pc = VoxelGrid::binary(dims, [1.0; 3], c).unwrap();
        let overlap = stack_priors(&ct, &[pa, pc]).unwrap();
        assert_eq!(overlap.channel(1).unwrap().foreground_count(), 10);
    }

    #[test]
    fn lung_bbox_from_mask_is_tightest() {
        let dims = [32, 32, 32];
        let ct = VoxelGrid::zeros(dims, [1.0; 3], Kind::CtHu).unwrap();
        let mut mask_vals = vec![0u8; 32 * 32 * 32];
        for z in 10..=20 {
            for y in 10..=20 {
                for x in 10..=20 {
                    mask_vals[(z * 32 + y) * 32 + x] = 1;
                }
            }
        }
        let mask = VoxelGrid::binary(dims, [1.0; 3], mask_vals).unwrap();
        let bbox = lung_bbox(&ct, Some(&mask)).unwrap();
        assert_eq!(bbox.min, [10, 10, 10]);
        assert_eq!(bbox.max, [20, 20, 20]);
    }

    #[test]
    fn empty_mask_means_no_lung() {
        let dims = [8, 8, 8];
        let ct = VoxelGrid::zeros(dims, [1.0; 3], Kind::CtHu).unwrap();
        let mask = VoxelGrid::zeros(dims, [1.0; 3], Kind::Binary).unwrap();
        assert!(matches!(lung_bbox(&ct, Some(&mask)), Err(Error::NoLungFound)));
        // Body at +30 HU without any air pocket inside: fallback fails too.
        let body = VoxelGrid::ct(dims, [1.0; 3], vec![30; 512]).unwrap();
        assert!(matches!(lung_bbox(&body, None), Err(Error::NoLungFound)));
    }

    #[test]
    fn fallback_excludes_border_air_keeps_interior_pockets() {
        // -1000 HU air frame around a +30 HU body with two -800 pockets.
        let dims = [24, 24, 8];
        let mut hu = vec![-1000i16; 24 * 24 * 8];
        for z in 0..8 {
            for y in 2..22 {
                for x in 2..22 {
                    hu[(z * 24 + y) * 24 + x] = 30;
                }
            }
        }
        for z in 1..7 {
            for y in 8..16 {
                for x in 4..9 {
                    hu[(z * 24 + y) * 24 + x] = -800;
                }
                for x in 15..20 {
                    hu[(z * 24 + y) * 24 + x] = -800;
                }
            }
        }
        let ct = VoxelGrid::ct(dims, [1.0; 3], hu).unwrap();
        let bbox = lung_bbox(&ct, None).unwrap();
        assert_eq!(bbox.min, [4, 8, 1]);
        assert_eq!(bbox.max, [19, 15, 6]);
    }

    fn synthetic_ct(dims: [usize; 3], spacing: [f64; 3]) -> VoxelGrid {
        let mut hu = vec![-1000i16; dims[0] * dims[1] * dims[2]];
        let (bx0, bx1) = (dims[0] / 8, dims[0] - dims[0] / 8);
        let (by0, by1) = (dims[1] / 8, dims[1] - dims[1] / 8);
        for z in 0..dims[2] {
            for y in by0..by1 {
                for x in bx0..bx1 {
                    hu[(z * dims[1] + y) * dims[0] + x] = 30;
                }
            }
        }
        // One interior air pocket standing in for the lungs.
        for z in dims[2] / 4..dims[2] * 3 / 4 {
            for y in dims[1] / 3..dims[1] * 2 / 3 {
                for x in dims[0] / 3..dims[0] * 2 / 3 {
                    hu[(z * dims[1] + y) * dims[0] + x] = -820;
                }
            }
        }
        VoxelGrid::ct(dims, spacing, hu).unwrap()
    }

    #[test]
    fn preprocess_full_volume_hits_fixed_dims() {
        let ct = synthetic_ct([40, 40, 30], [1.5, 1.5, 2.0]);
        let (out, record) = preprocess(&ct, &PreprocessConfig::full_volume(), None).unwrap();
        assert_eq!(out.dims(), FULLVOL_DIMS);
        assert_eq!(out.kind(), Kind::Probability);
        assert_eq!(record.steps.len(), 4);
        assert_eq!(record.replay_dims(ct.dims()).unwrap(), FULLVOL_DIMS);
    }

    #[test]
    fn preprocess_slab_mode_keeps_depth() {
        let ct = synthetic_ct([40, 40, 30], [1.0, 1.0, 1.0]);
        let (out, record) = preprocess(&ct, &PreprocessConfig::slab(), None).unwrap();
        let dims = out.dims();
        assert_eq!([dims[0], dims[1]], SLAB_AXIAL_DIMS);
        // Depth equals the cropped-then-resampled depth, found in the
        // crop step of the record.
        let crop_depth = record
            .steps
            .iter()
            .find_map(|s| match s {
                TransformStep::Crop { bbox, .. } => Some(bbox.extents()[2]),
                _ => None,
            })
            .unwrap();
        assert_eq!(dims[2], crop_depth);
    }

    #[test]
    fn preprocess_is_deterministic() {
        let ct = synthetic_ct([32, 32, 24], [1.3, 0.9, 2.1]);
        let cfg = PreprocessConfig::full_volume();
        let (a, ra) = preprocess(&ct, &cfg, None).unwrap();
        let (b, rb) = preprocess(&ct, &cfg, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn restore_identity_record_is_identity() {
        let p = prob_const([3, 3, 3], 0.42);
        let restored = restore_original_space(&p, &GeometryRecord::new()).unwrap();
        assert_eq!(restored, p);
    }

    #[test]
    fn restore_returns_original_dims_and_zero_outside_crop() {
        let ct = synthetic_ct([36, 30, 26], [1.1, 1.2, 1.8]);
        let (processed, record) = preprocess(&ct, &PreprocessConfig::full_volume(), None).unwrap();
        let restored = restore_original_space(&processed, &record).unwrap();
        assert_eq!(restored.dims(), ct.dims());
        // Corner voxel lies outside any lung crop: restored exactly 0.
        let v = restored.as_probability().unwrap();
        assert_eq!(v[0], 0.0);
        let dims = ct.dims();
        assert_eq!(v[dims[0] * dims[1] * dims[2] - 1], 0.0);
    }

    #[test]
    fn constant_grid_survives_full_round_trip() {
        let ct = synthetic_ct([30, 30, 22], [1.0; 3]);
        let (_, record) = preprocess(&ct, &PreprocessConfig::full_volume(), None).unwrap();
        let processed_dims = record.replay_dims(ct.dims()).unwrap();
        let c = prob_const(processed_dims, 0.37);
        let restored = restore_original_space(&c, &record).unwrap();
        // Inside the crop box the constant survives exactly; outside is 0.
        for &v in restored.as_probability().unwrap() {
            assert!(v == 0.37 || v == 0.0);
        }
    }

    #[test]
    fn apply_record_pushes_mask_to_processed_dims() {
        let ct = synthetic_ct([36, 30, 26], [1.1, 1.2, 1.8]);
        let (processed, record) = preprocess(&ct, &PreprocessConfig::full_volume(), None).unwrap();
        let mask = VoxelGrid::zeros(ct.dims(), ct.spacing(), Kind::Binary).unwrap();
        let pushed = apply_record(&mask, &record).unwrap();
        assert_eq!(pushed.dims(), processed.dims());
        assert_eq!(pushed.kind(), Kind::Binary);
    }
}
