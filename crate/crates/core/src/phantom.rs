//! Synthetic CT phantoms with known node geometry, degraded probability
//! maps, and an independent brute-force metrics oracle.
//!
//! The oracle reimplements every measurement with deliberately naive
//! algorithms (stack-based flood fill, exhaustive all-pairs matching,
//! direct set arithmetic) and shares no code with the production
//! labeling and evaluation paths; agreement between the two is what the
//! test suite leans on. Keep it slow and obvious.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::eval::PatientMetrics;
use crate::grid::VoxelGrid;
use crate::instances::Connectivity;
use crate::rng::SplitMix64;
use crate::station::{Annotation, Laterality, Station, StationInfo};

/// Axis-aligned ellipsoid in physical (mm) coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Ellipsoid {
    pub center_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
}

impl Ellipsoid {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let mut acc = 0.0;
        for i in 0..3 {
            let d = (p[i] - self.center_mm[i]) / self.semi_axes_mm[i];
            acc += d * d;
        }
        acc <= 1.0
    }
}

/// One synthetic lymph node.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NodeSpec {
    pub shape: Ellipsoid,
    pub hu: f64,
    pub stations: BTreeSet<Station>,
    pub primary: Station,
    pub laterality: Laterality,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LungSpec {
    pub shape: Ellipsoid,
    pub hu: f64,
}

/// Full phantom description: a soft-tissue body ellipsoid in air, lung
/// ellipsoids, and labeled node ellipsoids, plus seeded Gaussian HU
/// noise.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub air_hu: f64,
    pub body: Ellipsoid,
    pub body_hu: f64,
    pub lungs: Vec<LungSpec>,
    pub nodes: Vec<NodeSpec>,
    pub noise_sigma_hu: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// A thorax-like default: body ellipsoid filling most of the grid,
    /// two lungs at -800 HU, no nodes yet.
    pub fn thorax(dims: [usize; 3], spacing: [f64; 3], seed: u64) -> Self {
        let extent = [
            dims[0] as f64 * spacing[0],
            dims[1] as f64 * spacing[1],
            dims[2] as f64 * spacing[2],
        ];
        let center = [extent[0] / 2.0, extent[1] / 2.0, extent[2] / 2.0];
        let body = Ellipsoid {
            center_mm: center,
            semi_axes_mm: [extent[0] * 0.45, extent[1] * 0.45, extent[2] * 0.48],
        };
        let lung_semi = [extent[0] * 0.16, extent[1] * 0.28, extent[2] * 0.38];
        let lungs = vec![
            LungSpec {
                shape: Ellipsoid {
                    center_mm: [extent[0] * 0.30, center[1], center[2]],
                    semi_axes_mm: lung_semi,
                },
                hu: -800.0,
            },
            LungSpec {
                shape: Ellipsoid {
                    center_mm: [extent[0] * 0.70, center[1], center[2]],
                    semi_axes_mm: lung_semi,
                },
                hu: -800.0,
            },
        ];
        Self {
            dims,
            spacing,
            air_hu: -1000.0,
            body,
            body_hu: 30.0,
            lungs,
            nodes: Vec::new(),
            noise_sigma_hu: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) || self.spacing.iter().any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(invalid("phantom dims/spacing invalid"));
        }
        for shape in self
            .nodes
            .iter()
            .map(|n| &n.shape)
            .chain(core::iter::once(&self.body))
            .chain(self.lungs.iter().map(|l| &l.shape))
        {
            if shape.semi_axes_mm.iter().any(|&a| !a.is_finite() || a <= 0.0) {
                return Err(invalid("ellipsoid semi-axes must be positive"));
            }
        }
        // Nodes must lie within the body: check the six axis extremes.
        for (i, node) in self.nodes.iter().enumerate() {
            for axis in 0..3 {
                for sign in [-1.0, 1.0] {
                    let mut p = node.shape.center_mm;
                    p[axis] += sign * node.shape.semi_axes_mm[axis];
                    if !self.body.contains(p) {
                        return Err(invalid(format_args!(
                            "node {i} extends outside the body ellipsoid"
                        )));
                    }
                }
            }
        }
        if self.nodes.len() >= u16::MAX as usize {
            return Err(invalid("too many nodes for 16-bit labels"));
        }
        Ok(())
    }
}

fn voxel_center(idx: [usize; 3], spacing: [f64; 3]) -> [f64; 3] {
    [
        (idx[0] as f64 + 0.5) * spacing[0],
        (idx[1] as f64 + 0.5) * spacing[1],
        (idx[2] as f64 + 0.5) * spacing[2],
    ]
}

/// Voxel index ranges whose centers can fall inside the shape.
fn shape_bounds(shape: &Ellipsoid, dims: [usize; 3], spacing: [f64; 3]) -> [(usize, usize); 3] {
    core::array::from_fn(|i| {
        let lo = (shape.center_mm[i] - shape.semi_axes_mm[i]) / spacing[i] - 1.0;
        let hi = (shape.center_mm[i] + shape.semi_axes_mm[i]) / spacing[i] + 1.0;
        let lo = if lo < 0.0 { 0 } else { lo as usize };
        let hi = if hi < 0.0 { 0 } else { (hi as usize + 1).min(dims[i]) };
        (lo.min(dims[i]), hi)
    })
}

fn rasterize<F: FnMut(usize)>(shape: &Ellipsoid, dims: [usize; 3], spacing: [f64; 3], mut f: F) {
    let b = shape_bounds(shape, dims, spacing);
    for z in b[2].0..b[2].1 {
        for y in b[1].0..b[1].1 {
            let row = (z * dims[1] + y) * dims[0];
            for x in b[0].0..b[0].1 {
                if shape.contains(voxel_center([x, y, z], spacing)) {
                    f(row + x);
                }
            }
        }
    }
}

/// Rasterize the phantom into a CT volume and its annotation. Nodes are
/// labeled 1..n in spec order; where node ellipsoids overlap, the later
/// spec wins the contested voxels. A node left without any voxel is a
/// spec error.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(VoxelGrid, Annotation)> {
    spec.validate()?;
    let dims = spec.dims;
    let spacing = spec.spacing;
    let n = dims[0] * dims[1] * dims[2];

    let mut hu = vec![spec.air_hu; n];
    rasterize(&spec.body, dims, spacing, |i| hu[i] = spec.body_hu);
    for lung in &spec.lungs {
        rasterize(&lung.shape, dims, spacing, |i| hu[i] = lung.hu);
    }

    let mut labels = vec![0u16; n];
    for (k, node) in spec.nodes.iter().enumerate() {
        let label = (k + 1) as u16;
        let mut count = 0usize;
        rasterize(&node.shape, dims, spacing, |i| {
            hu[i] = node.hu;
            labels[i] = label;
            count += 1;
        });
        if count == 0 {
            return Err(invalid(format_args!(
                "node {k} rasterizes to zero voxels"
            )));
        }
    }
    // Overlapping nodes may swallow earlier ones entirely; that breaks
    // the label/annotation bijection, so reject it here.
    let surviving: BTreeSet<u16> = labels.iter().copied().filter(|&v| v != 0).collect();
    if surviving.len() != spec.nodes.len() {
        return Err(invalid("a node was fully overwritten by a later node"));
    }

    let mut rng = SplitMix64::new(spec.seed);
    let ct_vals: Vec<i16> = if spec.noise_sigma_hu > 0.0 {
        hu.iter()
            .map(|&v| {
                let noisy = v + spec.noise_sigma_hu * rng.next_normal();
                libm::round(noisy.clamp(i16::MIN as f64, i16::MAX as f64)) as i16
            })
            .collect()
    } else {
        hu.iter()
            .map(|&v| libm::round(v.clamp(i16::MIN as f64, i16::MAX as f64)) as i16)
            .collect()
    };

    let ct = VoxelGrid::ct(dims, spacing, ct_vals)?;
    let label_grid = VoxelGrid::label(dims, spacing, labels)?;
    let mut table = BTreeMap::new();
    for (k, node) in spec.nodes.iter().enumerate() {
        table.insert(
            (k + 1) as u16,
            StationInfo::new(node.stations.clone(), node.primary, node.laterality)?,
        );
    }
    let ann = Annotation::new(label_grid, table)?;
    Ok((ct, ann))
}

/// Controlled degradation of a perfect probability map.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Degradation {
    /// Ground-truth labels to drop entirely (misses).
    pub drop_labels: Vec<u16>,
    /// Iterations of 6-neighborhood erosion applied to each kept node.
    pub boundary_erosion_voxels: usize,
    /// Number of spherical false-positive blobs to inject, kept disjoint
    /// from the ground truth and from each other.
    pub fp_blobs: usize,
    pub fp_blob_radius_mm: f64,
    /// Gaussian blur sigma in voxels; 0 disables blurring.
    pub blur_sigma_voxels: f64,
    pub seed: u64,
}

impl Default for Degradation {
    fn default() -> Self {
        Self {
            drop_labels: Vec::new(),
            boundary_erosion_voxels: 0,
            fp_blobs: 0,
            fp_blob_radius_mm: 4.0,
            blur_sigma_voxels: 0.0,
            seed: 0,
        }
    }
}

/// Probability 1 inside kept (optionally eroded) nodes, plus injected
/// false-positive blobs, then optional blur; values stay in [0, 1].
pub fn synth_probability(ann: &Annotation, q: &Degradation) -> Result<VoxelGrid> {
    let labels = ann.labels().as_label()?;
    let dims = ann.labels().dims();
    let spacing = ann.labels().spacing();
    let n = labels.len();
    let dropped: BTreeSet<u16> = q.drop_labels.iter().copied().collect();

    let mut kept = vec![0u8; n];
    for (i, &v) in labels.iter().enumerate() {
        if v != 0 && !dropped.contains(&v) {
            kept[i] = 1;
        }
    }
    for _ in 0..q.boundary_erosion_voxels {
        kept = erode6(&kept, dims);
    }

    let mut prob: Vec<f32> = kept.iter().map(|&v| v as f32).collect();

    if q.fp_blobs > 0 {
        let mut rng = SplitMix64::new(q.seed);
        // Forbid blob voxels within 2 voxels of any GT voxel so blobs
        // never merge with detections of real nodes at any connectivity.
        let forbidden = dilate(labels, dims, 2);
        let mut blob_mask = vec![0u8; n];
        for blob in 0..q.fp_blobs {
            let mut placed = false;
            'attempts: for _ in 0..10_000 {
                let cx = rng.below(dims[0] as u64) as usize;
                let cy = rng.below(dims[1] as u64) as usize;
                let cz = rng.below(dims[2] as u64) as usize;
                let shape = Ellipsoid {
                    center_mm: voxel_center([cx, cy, cz], spacing),
                    semi_axes_mm: [q.fp_blob_radius_mm; 3],
                };
                let mut voxels = Vec::new();
                rasterize(&shape, dims, spacing, |i| voxels.push(i));
                if voxels.is_empty() {
                    continue;
                }
                let blob_dilated = {
                    let mut m = vec![0u8; n];
                    for &i in &voxels {
                        m[i] = 1;
                    }
                    dilate(&m, dims, 2)
                };
                for i in 0..n {
                    if blob_dilated[i] != 0 && (forbidden[i] != 0 || blob_mask[i] != 0) {
                        continue 'attempts;
                    }
                }
                for &i in &voxels {
                    blob_mask[i] = 1;
                    prob[i] = 1.0;
                }
                placed = true;
                break;
            }
            if !placed {
                return Err(invalid(format_args!(
                    "could not place false-positive blob {blob}; grid too crowded"
                )));
            }
        }
    }

    if q.blur_sigma_voxels > 0.0 {
        prob = gaussian_blur(&prob, dims, q.blur_sigma_voxels);
    }

    VoxelGrid::probability(dims, spacing, prob)
}

fn erode6(mask: &[u8], dims: [usize; 3]) -> Vec<u8> {
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let mut out = vec![0u8; mask.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = (z * ny + y) * nx + x;
                if mask[i] == 0 {
                    continue;
                }
                let keep = x > 0
                    && mask[i - 1] != 0
                    && x + 1 < nx
                    && mask[i + 1] != 0
                    && y > 0
                    && mask[i - nx] != 0
                    && y + 1 < ny
                    && mask[i + nx] != 0
                    && z > 0
                    && mask[i - nx * ny] != 0
                    && z + 1 < nz
                    && mask[i + nx * ny] != 0;
                if keep {
                    out[i] = 1;
                }
            }
        }
    }
    out
}

fn dilate<T: Copy + PartialEq + Default>(mask: &[T], dims: [usize; 3], radius: usize) -> Vec<u8> {
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let zero = T::default();
    let r = radius as isize;
    let mut out = vec![0u8; mask.len()];
    for z in 0..nz as isize {
        for y in 0..ny as isize {
            for x in 0..nx as isize {
                let i = ((z as usize) * ny + y as usize) * nx + x as usize;
                if mask[i] == zero {
                    continue;
                }
                for dz in -r..=r {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (qx, qy, qz) = (x + dx, y + dy, z + dz);
                            if qx < 0
                                || qy < 0
                                || qz < 0
                                || qx >= nx as isize
                                || qy >= ny as isize
                                || qz >= nz as isize
                            {
                                continue;
                            }
                            out[((qz as usize) * ny + qy as usize) * nx + qx as usize] = 1;
                        }
                    }
                }
            }
        }
    }
    out
}

fn gaussian_blur(values: &[f32], dims: [usize; 3], sigma: f64) -> Vec<f32> {
    let radius = libm::ceil(3.0 * sigma) as usize;
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    let mut sum = 0.0;
    for k in 0..=2 * radius {
        let d = k as f64 - radius as f64;
        let w = libm::exp(-d * d / (2.0 * sigma * sigma));
        kernel.push(w);
        sum += w;
    }
    for w in &mut kernel {
        *w /= sum;
    }

    let mut buf: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    for axis in 0..3 {
        buf = blur_axis(&buf, dims, axis, &kernel, radius);
    }
    buf.iter().map(|&v| (v as f32).clamp(0.0, 1.0)).collect()
}

fn blur_axis(src: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64], radius: usize) -> Vec<f64> {
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let stride = match axis {
        0 => 1,
        1 => nx,
        _ => nx * ny,
    };
    let len = dims[axis];
    let mut out = vec![0.0f64; src.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let pos = [x, y, z][axis];
                let i = (z * ny + y) * nx + x;
                let mut acc = 0.0;
                for (k, &w) in kernel.iter().enumerate() {
                    let q = pos as isize + k as isize - radius as isize;
                    let q = q.clamp(0, len as isize - 1) as usize;
                    let j = i as isize + (q as isize - pos as isize) * stride as isize;
                    acc += w * src[j as usize];
                }
                out[i] = acc;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------
// Brute-force oracle. Everything below recomputes the metric path with
// naive algorithms and no shared code with `instances`/`eval`.
// ---------------------------------------------------------------------

fn oracle_offsets(conn: Connectivity) -> Vec<[isize; 3]> {
    let mut offs = Vec::new();
    for dz in -1isize..=1 {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if dx == 0 && dy == 0 && dz == 0 {
                    continue;
                }
                let manhattan = dx.abs() + dy.abs() + dz.abs();
                let keep = match conn {
                    Connectivity::Six => manhattan == 1,
                    Connectivity::Eighteen => manhattan <= 2,
                    Connectivity::TwentySix => true,
                };
                if keep {
                    offs.push([dx, dy, dz]);
                }
            }
        }
    }
    offs
}

/// Stack-based flood fill labeling; component ids are assigned in scan
/// order, i.e. ascending minimal linear index.
fn oracle_flood_fill(fg: &[bool], dims: [usize; 3], conn: Connectivity) -> (Vec<u32>, u32) {
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let offs = oracle_offsets(conn);
    let mut comp = vec![0u32; fg.len()];
    let mut next = 0u32;
    let mut stack: Vec<usize> = Vec::new();
    for start in 0..fg.len() {
        if !fg[start] || comp[start] != 0 {
            continue;
        }
        next += 1;
        comp[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let x = (i % nx) as isize;
            let y = ((i / nx) % ny) as isize;
            let z = (i / (nx * ny)) as isize;
            for off in &offs {
                let (qx, qy, qz) = (x + off[0], y + off[1], z + off[2]);
                if qx < 0
                    || qy < 0
                    || qz < 0
                    || qx >= nx as isize
                    || qy >= ny as isize
                    || qz >= nz as isize
                {
                    continue;
                }
                let j = ((qz as usize) * ny + qy as usize) * nx + qx as usize;
                if fg[j] && comp[j] == 0 {
                    comp[j] = next;
                    stack.push(j);
                }
            }
        }
    }
    (comp, next)
}

/// Recompute every per-patient measurement with the naive path:
/// inclusive thresholding, flood-fill labeling of prediction and
/// binarized ground truth, exhaustive pair Dice, and greedy matching
/// with the same descending-Dice / lower-gt-id / lower-det-id order.
/// Ground-truth cluster ids are the minimal member label, mirroring the
/// production clustering, so tie-breaking agrees by construction of the
/// ids rather than shared code.
pub fn oracle_metrics(
    prob: &VoxelGrid,
    ann: &Annotation,
    pt: f64,
    conn: Connectivity,
) -> Result<PatientMetrics> {
    if !(0.0..=1.0).contains(&pt) {
        return Err(invalid(format_args!("threshold {pt} outside [0, 1]")));
    }
    prob.ensure_same_geometry(ann.labels())?;
    let dims = prob.dims();
    let pv = prob.as_probability()?;
    let labels = ann.labels().as_label()?;

    let det_fg: Vec<bool> = pv.iter().map(|&v| v as f64 >= pt).collect();
    let gt_fg: Vec<bool> = labels.iter().map(|&v| v != 0).collect();

    let (det_comp, n_det) = oracle_flood_fill(&det_fg, dims, conn);
    let (gt_comp_scan, n_gt_comp) = oracle_flood_fill(&gt_fg, dims, conn);

    // Rename gt components to their minimal member label.
    let mut min_label: Vec<u16> = vec![u16::MAX; n_gt_comp as usize + 1];
    for i in 0..labels.len() {
        let c = gt_comp_scan[i] as usize;
        if c != 0 && labels[i] < min_label[c] {
            min_label[c] = labels[i];
        }
    }

    let mut det_sizes = vec![0usize; n_det as usize + 1];
    for &c in &det_comp {
        det_sizes[c as usize] += 1;
    }
    let mut gt_sizes: BTreeMap<u16, usize> = BTreeMap::new();
    let mut covered: BTreeMap<u16, usize> = BTreeMap::new();
    let mut overlaps: BTreeMap<(u16, u32), usize> = BTreeMap::new();
    let mut det_total = 0usize;
    let mut inter_total = 0usize;
    for i in 0..labels.len() {
        if det_comp[i] != 0 {
            det_total += 1;
        }
        if gt_comp_scan[i] != 0 {
            let gid = min_label[gt_comp_scan[i] as usize];
            *gt_sizes.entry(gid).or_insert(0) += 1;
            if det_comp[i] != 0 {
                inter_total += 1;
                *covered.entry(gid).or_insert(0) += 1;
                *overlaps.entry((gid, det_comp[i])).or_insert(0) += 1;
            }
        }
    }
    let gt_total: usize = gt_sizes.values().sum();

    // Exhaustive candidate list, greedy in descending Dice with ties to
    // the lower gt id then lower det id.
    let mut candidates: Vec<(f64, u16, u32)> = overlaps
        .iter()
        .map(|(&(g, d), &inter)| {
            let dice = 2.0 * inter as f64 / (gt_sizes[&g] + det_sizes[d as usize]) as f64;
            (dice, g, d)
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("dice never NaN")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut used_gt: BTreeSet<u16> = BTreeSet::new();
    let mut used_det: BTreeSet<u32> = BTreeSet::new();
    let mut pair_dices: Vec<f64> = Vec::new();
    for (dice, g, d) in candidates {
        if dice <= 0.0 {
            break;
        }
        if used_gt.contains(&g) || used_det.contains(&d) {
            continue;
        }
        used_gt.insert(g);
        used_det.insert(d);
        pair_dices.push(dice);
    }

    let tp = pair_dices.len();
    let fn_count = gt_sizes.len() - tp;
    let fp = n_det as usize - used_det.len();
    let dice = if det_total + gt_total == 0 {
        1.0
    } else {
        2.0 * inter_total as f64 / (det_total + gt_total) as f64
    };
    let dice_tp = if pair_dices.is_empty() {
        None
    } else {
        Some(pair_dices.iter().sum::<f64>() / pair_dices.len() as f64)
    };
    let gt_perc = if gt_sizes.is_empty() {
        None
    } else {
        let sum: f64 = gt_sizes
            .iter()
            .map(|(g, &size)| 100.0 * covered.get(g).copied().unwrap_or(0) as f64 / size as f64)
            .sum();
        Some(sum / gt_sizes.len() as f64)
    };

    Ok(PatientMetrics {
        patient_id: String::from("oracle"),
        pt,
        dice,
        dice_tp,
        gt_perc,
        tp,
        fn_count,
        fp,
    })
}
