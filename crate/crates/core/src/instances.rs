//! Instance extraction: thresholding, 3D connected components, ground
//! truth clustering, and short-axis morphometrics.
//!
//! Labeling is run-based: maximal x-runs of foreground are built per
//! (y, z) line and merged with a union-find over runs, which keeps the
//! scan linear in the voxel count. Component ids are assigned in
//! ascending order of each component's minimal linear voxel index, so
//! the labeling is deterministic.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::grid::VoxelGrid;
use crate::station::{Annotation, Station, StationInfo};

/// Voxel neighborhood used for component labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    Eighteen,
    TwentySix,
}

impl Connectivity {
    pub fn neighbor_count(&self) -> u8 {
        match self {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }

    pub fn from_neighbor_count(n: u8) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(invalid(format_args!(
                "connectivity must be 6, 18, or 26, got {n}"
            ))),
        }
    }

    /// Causal neighbor lines as (dy, dz, x-dilation): lines already
    /// scanned whose runs can touch a run on the current line, and the
    /// interval dilation under which intervals count as touching.
    fn causal_lines(&self) -> &'static [(isize, isize, u32)] {
        match self {
            Connectivity::Six => &[(-1, 0, 0), (0, -1, 0)],
            Connectivity::Eighteen => &[(-1, 0, 1), (0, -1, 1), (-1, -1, 0), (1, -1, 0)],
            Connectivity::TwentySix => &[(-1, 0, 1), (0, -1, 1), (-1, -1, 1), (1, -1, 1)],
        }
    }
}

/// One connected foreground component.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u32,
    /// Linear voxel indices in ascending order.
    pub voxels: Vec<u32>,
    pub volume_ml: f64,
    pub short_axis_mm: f64,
    pub stations: BTreeSet<Station>,
    /// Primary stations of all members merged into this instance; a
    /// single unmerged node carries exactly its own primary.
    pub primaries: BTreeSet<Station>,
}

impl Instance {
    pub fn voxel_count(&self) -> usize {
        self.voxels.len()
    }
}

/// A disjoint exact cover of the foreground of one grid.
#[derive(Debug, Clone)]
pub struct InstanceSet {
    instances: Vec<Instance>,
    dims: [usize; 3],
    spacing: [f64; 3],
    connectivity: Connectivity,
    /// Per-voxel instance id, 0 for background.
    label_map: Vec<u32>,
}

impl InstanceSet {
    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn label_map(&self) -> &[u32] {
        &self.label_map
    }

    pub fn instance(&self, id: u32) -> Option<&Instance> {
        self.instances
            .binary_search_by_key(&id, |inst| inst.id)
            .ok()
            .map(|i| &self.instances[i])
    }

    pub fn foreground_count(&self) -> usize {
        self.instances.iter().map(Instance::voxel_count).sum()
    }

    /// Binary grid over all instance voxels.
    pub fn foreground_binary(&self) -> VoxelGrid {
        let vals: Vec<u8> = self.label_map.iter().map(|&v| u8::from(v != 0)).collect();
        VoxelGrid::binary(self.dims, self.spacing, vals)
            .expect("label map matches instance-set geometry")
    }
}

/// Binarize a probability map: foreground iff `value >= pt` (inclusive,
/// so `pt = 1.0` keeps full-confidence voxels).
pub fn threshold(prob: &VoxelGrid, pt: f64) -> Result<VoxelGrid> {
    if !(0.0..=1.0).contains(&pt) {
        return Err(invalid(format_args!(
            "threshold must lie in [0, 1], got {pt}"
        )));
    }
    let src = prob.as_probability()?;
    let vals: Vec<u8> = src.iter().map(|&v| u8::from(v as f64 >= pt)).collect();
    Ok(VoxelGrid::binary(prob.dims(), prob.spacing(), vals)?.with_origin(prob.origin()))
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    /// The smaller root wins, keeping roots at minimal run index.
    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
    }
}

/// Partition the foreground of a binary grid into maximal connected
/// components under the chosen neighborhood.
pub fn connected_components(bin: &VoxelGrid, conn: Connectivity) -> Result<InstanceSet> {
    let src = bin.as_binary()?;
    if src.len() > u32::MAX as usize {
        return Err(invalid("grids beyond 2^32 voxels are not supported"));
    }
    let dims = bin.dims();
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);

    // Pass 1: maximal x-runs per (y, z) line, CSR-indexed by line.
    let mut runs: Vec<(u32, u32)> = Vec::new();
    let mut line_offsets: Vec<u32> = Vec::with_capacity(ny * nz + 1);
    line_offsets.push(0);
    for z in 0..nz {
        for y in 0..ny {
            let base = (z * ny + y) * nx;
            let row = &src[base..base + nx];
            let mut x = 0;
            while x < nx {
                if row[x] != 0 {
                    let x0 = x;
                    while x < nx && row[x] != 0 {
                        x += 1;
                    }
                    runs.push((x0 as u32, (x - 1) as u32));
                } else {
                    x += 1;
                }
            }
            line_offsets.push(runs.len() as u32);
        }
    }

    // Pass 2: merge runs with causal neighbor lines.
    let mut uf = UnionFind::new(runs.len());
    let lines = conn.causal_lines();
    for z in 0..nz {
        for y in 0..ny {
            let line = z * ny + y;
            let (lo, hi) = (line_offsets[line] as usize, line_offsets[line + 1] as usize);
            if lo == hi {
                continue;
            }
            for &(dy, dz, dil) in lines {
                let nyi = y as isize + dy;
                let nzi = z as isize + dz;
                if nyi < 0 || nzi < 0 || nyi >= ny as isize || nzi >= nz as isize {
                    continue;
                }
                let nline = (nzi as usize) * ny + nyi as usize;
                let (nlo, nhi) = (
                    line_offsets[nline] as usize,
                    line_offsets[nline + 1] as usize,
                );
                if nlo == nhi {
                    continue;
                }
                let mut j = nlo;
                for r in lo..hi {
                    let (a0, a1) = runs[r];
                    // Advance past neighbor runs that end before this
                    // run's dilated start.
                    while j < nhi && runs[j].1 + dil < a0 {
                        j += 1;
                    }
                    let mut k = j;
                    while k < nhi && runs[k].0 <= a1 + dil {
                        uf.union(r as u32, k as u32);
                        k += 1;
                    }
                }
            }
        }
    }

    // Pass 3: ids in first-appearance (scan) order, which is ascending
    // minimal linear voxel index per component.
    let mut root_id: BTreeMap<u32, u32> = BTreeMap::new();
    let mut run_ids: Vec<u32> = Vec::with_capacity(runs.len());
    let mut next = 0u32;
    for r in 0..runs.len() {
        let root = uf.find(r as u32);
        let id = *root_id.entry(root).or_insert_with(|| {
            next += 1;
            next
        });
        run_ids.push(id);
    }

    let n_inst = next as usize;
    let mut label_map = vec![0u32; src.len()];
    let mut voxel_lists: Vec<Vec<u32>> = vec![Vec::new(); n_inst];
    let mut run_idx = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            let line = z * ny + y;
            let end = line_offsets[line + 1] as usize;
            let base = ((z * ny + y) * nx) as u32;
            while run_idx < end {
                let (x0, x1) = runs[run_idx];
                let id = run_ids[run_idx];
                let list = &mut voxel_lists[(id - 1) as usize];
                for x in x0..=x1 {
                    let lin = base + x;
                    label_map[lin as usize] = id;
                    list.push(lin);
                }
                run_idx += 1;
            }
        }
    }

    let spacing = bin.spacing();
    let voxel_ml = bin.voxel_volume_mm3() / 1000.0;
    let instances = voxel_lists
        .into_iter()
        .enumerate()
        .map(|(i, voxels)| {
            let short_axis_mm = short_axis_from_voxels(&voxels, dims, spacing);
            Instance {
                id: (i + 1) as u32,
                volume_ml: voxels.len() as f64 * voxel_ml,
                short_axis_mm,
                voxels,
                stations: BTreeSet::new(),
                primaries: BTreeSet::new(),
            }
        })
        .collect();

    Ok(InstanceSet {
        instances,
        dims,
        spacing,
        connectivity: conn,
        label_map,
    })
}

/// Physical volume of an instance in ml.
pub fn instance_volume_ml(voxel_count: usize, spacing: [f64; 3]) -> f64 {
    voxel_count as f64 * spacing[0] * spacing[1] * spacing[2] / 1000.0
}

/// Short-axis diameter in mm: for each axial slice the instance
/// intersects, the minor-axis length of the ellipse with the same second
/// central moments as the slice's pixel set (computed in physical
/// coordinates); the reported value is the maximum over slices.
/// Single-pixel slices have zero central moments and contribute 0.
pub fn short_axis_diameter(inst: &Instance, dims: [usize; 3], spacing: [f64; 3]) -> Result<f64> {
    if inst.voxels.is_empty() {
        return Err(invalid("short axis of an empty instance is undefined"));
    }
    Ok(short_axis_from_voxels(&inst.voxels, dims, spacing))
}

fn short_axis_from_voxels(voxels: &[u32], dims: [usize; 3], spacing: [f64; 3]) -> f64 {
    let plane = (dims[0] * dims[1]) as u32;
    let nx = dims[0] as u32;
    let mut best = 0.0f64;
    let mut i = 0usize;
    while i < voxels.len() {
        let z = voxels[i] / plane;
        let mut j = i;
        while j < voxels.len() && voxels[j] / plane == z {
            j += 1;
        }
        let minor = slice_minor_axis(&voxels[i..j], nx, plane, spacing);
        if minor > best {
            best = minor;
        }
        i = j;
    }
    best
}

fn slice_minor_axis(slice: &[u32], nx: u32, plane: u32, spacing: [f64; 3]) -> f64 {
    let n = slice.len() as f64;
    let mut sx = 0.0f64;
    let mut sy = 0.0f64;
    for &v in slice {
        let rem = v % plane;
        sx += (rem % nx) as f64;
        sy += (rem / nx) as f64;
    }
    let mx = sx / n;
    let my = sy / n;
    let mut mu20 = 0.0f64;
    let mut mu02 = 0.0f64;
    let mut mu11 = 0.0f64;
    for &v in slice {
        let rem = v % plane;
        let dx = (rem % nx) as f64 - mx;
        let dy = (rem / nx) as f64 - my;
        mu20 += dx * dx;
        mu02 += dy * dy;
        mu11 += dx * dy;
    }
    // Scale pixel moments into mm^2 so anisotropic in-plane spacing is
    // handled; for square pixels this equals the pixel formula times
    // the spacing.
    let a = mu20 * spacing[0] * spacing[0] / n;
    let c = mu02 * spacing[1] * spacing[1] / n;
    let b = mu11 * spacing[0] * spacing[1] / n;
    let disc = libm::sqrt((a - c) * (a - c) + 4.0 * b * b);
    let lambda_min = (a + c - disc) / 2.0;
    4.0 * libm::sqrt(lambda_min.max(0.0))
}

/// Size class around the 7 mm and 10 mm short-axis thresholds; 10 mm is
/// inclusive ("at least 10 mm"), so 7 <= v < 10 forms the middle band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SizeCategory {
    Lt7,
    SevenToTen,
    Ge10,
}

pub fn size_category(short_axis_mm: f64) -> Result<SizeCategory> {
    if short_axis_mm.is_nan() || short_axis_mm < 0.0 {
        return Err(invalid(format_args!(
            "short axis must be >= 0, got {short_axis_mm}"
        )));
    }
    Ok(if short_axis_mm < 7.0 {
        SizeCategory::Lt7
    } else if short_axis_mm < 10.0 {
        SizeCategory::SevenToTen
    } else {
        SizeCategory::Ge10
    })
}

/// Re-run component labeling over the binarized ground truth so touching
/// or collocated nodes merge into clusters; each cluster receives the
/// union of its members' station sets and the set of their primary
/// stations.
///
/// Cluster ids are the minimal member label, so annotations without
/// touching labels come back unchanged. The relabeled annotation's
/// per-cluster primary and laterality are taken from the smallest member
/// label.
pub fn cluster_ground_truth(
    ann: &Annotation,
    conn: Connectivity,
) -> Result<(Annotation, InstanceSet)> {
    let labels = ann.labels().as_label()?;
    let bin = ann.foreground();
    let mut set = connected_components(&bin, conn)?;

    let mut new_table: BTreeMap<u16, StationInfo> = BTreeMap::new();
    let mut id_remap: Vec<u32> = vec![0; set.instances.len() + 1];
    let mut seen_members: BTreeSet<u16> = BTreeSet::new();
    for inst in &mut set.instances {
        let mut members: BTreeSet<u16> = BTreeSet::new();
        for &v in &inst.voxels {
            members.insert(labels[v as usize]);
        }
        debug_assert!(!members.contains(&0));
        // A label split across several components has no well-defined
        // cluster identity; annotations are expected to label each node
        // as one connected region.
        for &m in &members {
            if !seen_members.insert(m) {
                return Err(invalid(format_args!(
                    "label {m} is not connected at the chosen connectivity"
                )));
            }
        }
        let rep = *members.iter().next().expect("non-empty component");
        let mut stations = BTreeSet::new();
        let mut primaries = BTreeSet::new();
        for m in &members {
            let info = ann
                .station_table()
                .get(m)
                .expect("annotation invariant: every grid label has an entry");
            stations.extend(info.stations().iter().copied());
            primaries.insert(info.primary());
        }
        let rep_info = &ann.station_table()[&rep];
        new_table.insert(
            rep,
            StationInfo::new(stations.clone(), rep_info.primary(), rep_info.laterality())?,
        );
        id_remap[inst.id as usize] = rep as u32;
        inst.id = rep as u32;
        inst.stations = stations;
        inst.primaries = primaries;
    }

    for v in set.label_map.iter_mut() {
        if *v != 0 {
            *v = id_remap[*v as usize];
        }
    }
    set.instances.sort_by_key(|inst| inst.id);

    let new_labels: Vec<u16> = set.label_map.iter().map(|&v| v as u16).collect();
    let grid = VoxelGrid::label(bin.dims(), bin.spacing(), new_labels)?
        .with_origin(ann.labels().origin());
    let clustered = Annotation::new(grid, new_table)?;
    Ok((clustered, set))
}

/// Instances taken directly from annotation labels without any merging:
/// one instance per label id, regardless of adjacency. `connectivity`
/// only records the downstream pairing configuration.
pub fn annotation_instances(ann: &Annotation, connectivity: Connectivity) -> Result<InstanceSet> {
    let grid = ann.labels();
    let labels = grid.as_label()?;
    let mut voxels: BTreeMap<u16, Vec<u32>> = BTreeMap::new();
    for (i, &v) in labels.iter().enumerate() {
        if v != 0 {
            voxels.entry(v).or_default().push(i as u32);
        }
    }
    let spacing = grid.spacing();
    let dims = grid.dims();
    let voxel_ml = grid.voxel_volume_mm3() / 1000.0;
    let instances = voxels
        .into_iter()
        .map(|(label, voxels)| {
            let info = &ann.station_table()[&label];
            let mut primaries = BTreeSet::new();
            primaries.insert(info.primary());
            Instance {
                id: label as u32,
                volume_ml: voxels.len() as f64 * voxel_ml,
                short_axis_mm: short_axis_from_voxels(&voxels, dims, spacing),
                voxels,
                stations: info.stations().clone(),
                primaries,
            }
        })
        .collect();
    let label_map = labels.iter().map(|&v| v as u32).collect();
    Ok(InstanceSet {
        instances,
        dims,
        spacing,
        connectivity,
        label_map,
    })
}
