//! Shared helpers for integration tests: randomized phantom cohorts and
//! an independent flood-fill labeling reference.
// Each test binary pulls in a different subset of these helpers.
#![allow(dead_code)]

use std::collections::BTreeSet;

use lnseg_core::eval::PatientMetrics;
use lnseg_core::instances::Connectivity;
use lnseg_core::phantom::{Degradation, Ellipsoid, NodeSpec, PhantomSpec};
use lnseg_core::rng::SplitMix64;
use lnseg_core::station::{Annotation, Laterality, Station};
use lnseg_core::VoxelGrid;

pub fn station_for(i: usize) -> Station {
    let all = [
        Station::S2,
        Station::S4,
        Station::S5,
        Station::S7,
        Station::S8,
        Station::S10,
        Station::S11,
        Station::S1,
        Station::Na,
    ];
    all[i % all.len()]
}

/// Random phantom spec with nodes scattered inside the body; nodes may
/// touch or partially overlap, which exercises ground-truth clustering.
pub fn random_phantom_spec(dims: [usize; 3], n_nodes: usize, seed: u64) -> PhantomSpec {
    let mut spec = PhantomSpec::thorax(dims, [1.0; 3], seed);
    spec.noise_sigma_hu = 12.0;
    let mut rng = SplitMix64::new(seed.wrapping_mul(0x9E37_79B9).wrapping_add(1));
    let body = spec.body;
    let mut placed = 0usize;
    let mut guard = 0usize;
    while placed < n_nodes {
        guard += 1;
        assert!(guard < 10_000, "node placement stalled");
        let semi = [
            1.5 + 2.5 * rng.next_f64(),
            1.5 + 2.5 * rng.next_f64(),
            1.5 + 2.5 * rng.next_f64(),
        ];
        let center = [
            body.center_mm[0] + (rng.next_f64() - 0.5) * body.semi_axes_mm[0],
            body.center_mm[1] + (rng.next_f64() - 0.5) * body.semi_axes_mm[1],
            body.center_mm[2] + (rng.next_f64() - 0.5) * body.semi_axes_mm[2],
        ];
        let shape = Ellipsoid {
            center_mm: center,
            semi_axes_mm: semi,
        };
        let inside = (0..3).all(|axis| {
            [-1.0, 1.0].into_iter().all(|sign| {
                let mut p = center;
                p[axis] += sign * semi[axis];
                body.contains(p)
            })
        });
        if !inside {
            continue;
        }
        let mut stations = BTreeSet::new();
        let primary = station_for(placed);
        stations.insert(primary);
        if rng.below(3) == 0 {
            stations.insert(station_for(placed + 1));
        }
        spec.nodes.push(NodeSpec {
            shape,
            hu: 40.0,
            stations,
            primary,
            laterality: Laterality::Unspecified,
        });
        placed += 1;
    }
    spec
}

/// Generate a random annotated phantom, retrying seeds that produce
/// degenerate node layouts (fully swallowed or split labels).
pub fn random_phantom(dims: [usize; 3], n_nodes: usize, seed: u64) -> (VoxelGrid, Annotation) {
    let mut attempt = seed;
    loop {
        let spec = random_phantom_spec(dims, n_nodes, attempt);
        if let Ok((ct, ann)) = lnseg_core::phantom::generate_phantom(&spec) {
            if lnseg_core::instances::cluster_ground_truth(&ann, Connectivity::TwentySix).is_ok() {
                return (ct, ann);
            }
        }
        attempt = attempt.wrapping_add(0x5151_5151);
    }
}

/// Random degradation settings; blob placement can fail on crowded
/// grids, so callers should retry via the seed.
pub fn random_degradation(rng: &mut SplitMix64, n_labels: usize) -> Degradation {
    let n_drop = if n_labels > 1 {
        rng.below(n_labels as u64 / 2 + 1) as usize
    } else {
        0
    };
    let mut drop_labels = Vec::new();
    let mut pool: Vec<u16> = (1..=n_labels as u16).collect();
    for _ in 0..n_drop {
        let i = rng.below(pool.len() as u64) as usize;
        drop_labels.push(pool.remove(i));
    }
    Degradation {
        drop_labels,
        boundary_erosion_voxels: rng.below(2) as usize,
        fp_blobs: rng.below(4) as usize,
        fp_blob_radius_mm: 2.0 + rng.next_f64() * 1.5,
        blur_sigma_voxels: if rng.below(3) == 0 { 0.7 } else { 0.0 },
        seed: rng.next_u64(),
    }
}

/// Brute-force flood-fill labeling used as the test-side reference for
/// connected components; kept independent of the production path.
pub fn flood_fill_partition(
    bin: &VoxelGrid,
    conn: Connectivity,
) -> BTreeSet<Vec<u32>> {
    let dims = bin.dims();
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let src = bin.as_binary().unwrap();
    let mut offs: Vec<[isize; 3]> = Vec::new();
    for dz in -1isize..=1 {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if (dx, dy, dz) == (0, 0, 0) {
                    continue;
                }
                let m = dx.abs() + dy.abs() + dz.abs();
                let keep = match conn {
                    Connectivity::Six => m == 1,
                    Connectivity::Eighteen => m <= 2,
                    Connectivity::TwentySix => true,
                };
                if keep {
                    offs.push([dx, dy, dz]);
                }
            }
        }
    }
    let mut visited = vec![false; src.len()];
    let mut partition = BTreeSet::new();
    for start in 0..src.len() {
        if src[start] == 0 || visited[start] {
            continue;
        }
        let mut component = Vec::new();
        let mut stack = vec![start];
        visited[start] = true;
        while let Some(i) = stack.pop() {
            component.push(i as u32);
            let x = (i % nx) as isize;
            let y = ((i / nx) % ny) as isize;
            let z = (i / (nx * ny)) as isize;
            for off in &offs {
                let (qx, qy, qz) = (x + off[0], y + off[1], z + off[2]);
                if qx < 0 || qy < 0 || qz < 0 {
                    continue;
                }
                let (qx, qy, qz) = (qx as usize, qy as usize, qz as usize);
                if qx >= nx || qy >= ny || qz >= nz {
                    continue;
                }
                let j = (qz * ny + qy) * nx + qx;
                if src[j] != 0 && !visited[j] {
                    visited[j] = true;
                    stack.push(j);
                }
            }
        }
        component.sort_unstable();
        partition.insert(component);
    }
    partition
}

/// Random binary grid for labeling comparisons.
pub fn random_binary_grid(dims: [usize; 3], density_pct: u64, rng: &mut SplitMix64) -> VoxelGrid {
    let n = dims[0] * dims[1] * dims[2];
    let vals: Vec<u8> = (0..n).map(|_| (rng.below(100) < density_pct) as u8).collect();
    VoxelGrid::binary(dims, [1.0; 3], vals).unwrap()
}

/// Field-by-field comparison of the production metrics against the
/// oracle's; the patient id is reporting metadata and not compared.
pub fn assert_metrics_match(ours: &PatientMetrics, oracle: &PatientMetrics, tol: f64) {
    assert_eq!(ours.pt, oracle.pt, "pt");
    assert_eq!(ours.tp, oracle.tp, "tp");
    assert_eq!(ours.fn_count, oracle.fn_count, "fn");
    assert_eq!(ours.fp, oracle.fp, "fp");
    assert!(
        (ours.dice - oracle.dice).abs() <= tol,
        "dice {} vs {}",
        ours.dice,
        oracle.dice
    );
    match (ours.dice_tp, oracle.dice_tp) {
        (None, None) => {}
        (Some(a), Some(b)) => assert!((a - b).abs() <= tol, "dice_tp {a} vs {b}"),
        other => panic!("dice_tp mismatch: {other:?}"),
    }
    match (ours.gt_perc, oracle.gt_perc) {
        (None, None) => {}
        (Some(a), Some(b)) => assert!((a - b).abs() <= tol, "gt_perc {a} vs {b}"),
        other => panic!("gt_perc mismatch: {other:?}"),
    }
}
