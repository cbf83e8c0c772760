//! Property tests over the grid, labeling, pipeline, and metric
//! invariants.

use proptest::prelude::*;

use lnseg_core::eval::{dice_counts, pair_instances, pt_lattice};
use lnseg_core::geometry::BoundingBox;
use lnseg_core::instances::{connected_components, threshold, Connectivity};
use lnseg_core::pipeline::{
    ensemble_max, extract_slabs, restore_original_space, stitch_slabs, SlabSpec,
};
use lnseg_core::resample::{clip_normalize, crop, invert_step, resample_isotropic, resize};
use lnseg_core::VoxelGrid;

fn arb_dims() -> impl Strategy<Value = [usize; 3]> {
    (1usize..=12, 1usize..=12, 1usize..=12).prop_map(|(x, y, z)| [x, y, z])
}

fn arb_binary_grid() -> impl Strategy<Value = VoxelGrid> {
    arb_dims().prop_flat_map(|dims| {
        let n = dims[0] * dims[1] * dims[2];
        proptest::collection::vec(0u8..=1, n)
            .prop_map(move |vals| VoxelGrid::binary(dims, [1.0; 3], vals).unwrap())
    })
}

fn arb_prob_grid() -> impl Strategy<Value = VoxelGrid> {
    arb_dims().prop_flat_map(|dims| {
        let n = dims[0] * dims[1] * dims[2];
        proptest::collection::vec(0.0f32..=1.0, n)
            .prop_map(move |vals| VoxelGrid::probability(dims, [1.0; 3], vals).unwrap())
    })
}

fn arb_connectivity() -> impl Strategy<Value = Connectivity> {
    prop_oneof![
        Just(Connectivity::Six),
        Just(Connectivity::Eighteen),
        Just(Connectivity::TwentySix),
    ]
}

proptest! {
    #[test]
    fn components_form_disjoint_exact_cover(bin in arb_binary_grid(), conn in arb_connectivity()) {
        let set = connected_components(&bin, conn).unwrap();
        let fg: usize = bin.foreground_count();
        let total: usize = set.instances().iter().map(|i| i.voxel_count()).sum();
        prop_assert_eq!(total, fg);
        let mut seen = std::collections::BTreeSet::new();
        for inst in set.instances() {
            prop_assert!(inst.voxel_count() >= 1);
            for &v in &inst.voxels {
                prop_assert!(seen.insert(v));
                prop_assert_eq!(set.label_map()[v as usize], inst.id);
            }
        }
        for (i, &l) in set.label_map().iter().enumerate() {
            let in_fg = bin.as_binary().unwrap()[i] != 0;
            prop_assert_eq!(l != 0, in_fg);
        }
    }

    #[test]
    fn component_partition_invariant_under_axis_flip(bin in arb_binary_grid(), conn in arb_connectivity()) {
        // Flip x: relabeled partition must match.
        let dims = bin.dims();
        let src = bin.as_binary().unwrap();
        let mut flipped = vec![0u8; src.len()];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    flipped[(z * dims[1] + y) * dims[0] + (dims[0] - 1 - x)] =
                        src[(z * dims[1] + y) * dims[0] + x];
                }
            }
        }
        let flipped_grid = VoxelGrid::binary(dims, [1.0; 3], flipped).unwrap();
        let a = connected_components(&bin, conn).unwrap();
        let b = connected_components(&flipped_grid, conn).unwrap();
        prop_assert_eq!(a.len(), b.len());
        // Canonical form: sets of sorted flipped voxel coordinates.
        let flip = |v: u32| {
            let v = v as usize;
            let x = v % dims[0];
            let rest = v / dims[0];
            (rest * dims[0] + (dims[0] - 1 - x)) as u32
        };
        let canon_a: std::collections::BTreeSet<Vec<u32>> = a
            .instances()
            .iter()
            .map(|i| {
                let mut vs: Vec<u32> = i.voxels.iter().map(|&v| flip(v)).collect();
                vs.sort_unstable();
                vs
            })
            .collect();
        let canon_b: std::collections::BTreeSet<Vec<u32>> =
            b.instances().iter().map(|i| i.voxels.clone()).collect();
        prop_assert_eq!(canon_a, canon_b);
    }

    #[test]
    fn component_partition_invariant_under_axis_swap(bin in arb_binary_grid(), conn in arb_connectivity()) {
        // Transposing x and y permutes voxels; components must follow.
        let dims = bin.dims();
        let src = bin.as_binary().unwrap();
        let tdims = [dims[1], dims[0], dims[2]];
        let mut swapped = vec![0u8; src.len()];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    swapped[(z * tdims[1] + x) * tdims[0] + y] =
                        src[(z * dims[1] + y) * dims[0] + x];
                }
            }
        }
        let swapped_grid = VoxelGrid::binary(tdims, [1.0; 3], swapped).unwrap();
        let a = connected_components(&bin, conn).unwrap();
        let b = connected_components(&swapped_grid, conn).unwrap();
        prop_assert_eq!(a.len(), b.len());
        let swap = |v: u32| {
            let v = v as usize;
            let x = v % dims[0];
            let y = (v / dims[0]) % dims[1];
            let z = v / (dims[0] * dims[1]);
            ((z * tdims[1] + x) * tdims[0] + y) as u32
        };
        let canon_a: std::collections::BTreeSet<Vec<u32>> = a
            .instances()
            .iter()
            .map(|i| {
                let mut vs: Vec<u32> = i.voxels.iter().map(|&v| swap(v)).collect();
                vs.sort_unstable();
                vs
            })
            .collect();
        let canon_b: std::collections::BTreeSet<Vec<u32>> =
            b.instances().iter().map(|i| i.voxels.clone()).collect();
        prop_assert_eq!(canon_a, canon_b);
    }

    #[test]
    fn threshold_foreground_monotone(prob in arb_prob_grid()) {
        let mut last = usize::MAX;
        for pt in pt_lattice() {
            let fg = threshold(&prob, pt).unwrap().foreground_count();
            prop_assert!(fg <= last);
            last = fg;
        }
    }

    #[test]
    fn ensemble_max_dominates_and_commutes(a in arb_prob_grid()) {
        let dims = a.dims();
        let n = a.voxel_count();
        let av = a.as_probability().unwrap().to_vec();
        let bv: Vec<f32> = av.iter().rev().copied().collect();
        let b = VoxelGrid::probability(dims, [1.0; 3], bv).unwrap();
        let ab = ensemble_max(&a, &b).unwrap();
        let ba = ensemble_max(&b, &a).unwrap();
        prop_assert_eq!(&ab, &ba);
        let idempotent = ensemble_max(&a, &a).unwrap();
        prop_assert_eq!(&idempotent, &a);
        for i in 0..n {
            let m = ab.as_probability().unwrap()[i];
            prop_assert!(m >= a.as_probability().unwrap()[i]);
            prop_assert!(m >= b.as_probability().unwrap()[i]);
        }
    }

    #[test]
    fn slab_coverage_every_depth(depth in 1usize..=200, slab in prop_oneof![Just(32usize), Just(64usize)]) {
        let vol = VoxelGrid::probability([1, 1, depth], [1.0; 3], vec![0.5; depth]).unwrap();
        let spec = SlabSpec::new(slab, 8).unwrap();
        let set = extract_slabs(&vol, &spec).unwrap();
        let mut covered = vec![0u32; depth];
        for s in set.slabs() {
            for z in s.z_start..s.z_start + s.valid_len {
                covered[z] += 1;
            }
        }
        prop_assert!(covered.iter().all(|&c| c > 0));
        // Consecutive slabs share slab - stride slices when the stride
        // was not clamped.
        let starts = set.z_starts();
        for w in starts.windows(2) {
            if w[1] - w[0] == 8 {
                prop_assert_eq!(w[0] + slab - w[1], slab - 8);
            }
        }
        // Stitching views of a constant grid returns it bit for bit.
        let out = stitch_slabs(&set).unwrap();
        prop_assert_eq!(out.as_probability().unwrap(), vol.as_probability().unwrap());
    }

    #[test]
    fn stitch_reproduces_arbitrary_grid(depth in 1usize..=80, seed in 0u64..1000) {
        let mut rng = lnseg_core::rng::SplitMix64::new(seed);
        let n = 3 * 2 * depth;
        let vals: Vec<f32> = (0..n).map(|_| rng.next_f64() as f32).collect();
        let vol = VoxelGrid::probability([3, 2, depth], [1.0; 3], vals).unwrap();
        let set = extract_slabs(&vol, &SlabSpec::new(16, 5).unwrap()).unwrap();
        let out = stitch_slabs(&set).unwrap();
        prop_assert_eq!(out.as_probability().unwrap(), vol.as_probability().unwrap());
    }

    #[test]
    fn crop_paste_round_trip(bin in arb_binary_grid()) {
        let dims = bin.dims();
        let max = [dims[0] - 1, dims[1] - 1, dims[2] - 1];
        let min = [max[0] / 2, max[1] / 2, max[2] / 2];
        let bbox = BoundingBox::new(min, max).unwrap();
        let (cropped, step) = crop(&bin, &bbox).unwrap();
        let restored = invert_step(&cropped, &step).unwrap();
        prop_assert_eq!(restored.dims(), dims);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let idx = (z * dims[1] + y) * dims[0] + x;
                    let inside = x >= min[0] && y >= min[1] && z >= min[2];
                    let want = if inside { bin.as_binary().unwrap()[idx] } else { 0 };
                    prop_assert_eq!(restored.as_binary().unwrap()[idx], want);
                }
            }
        }
    }

    #[test]
    fn resample_preserves_label_set(dims in arb_dims(), seed in 0u64..500) {
        let mut rng = lnseg_core::rng::SplitMix64::new(seed);
        let n = dims[0] * dims[1] * dims[2];
        let vals: Vec<u16> = (0..n).map(|_| rng.below(4) as u16).collect();
        let grid = VoxelGrid::label(dims, [0.8, 1.3, 1.9], vals.clone()).unwrap();
        let input_set: std::collections::BTreeSet<u16> = vals.into_iter().collect();
        let (out, _) = resample_isotropic(&grid, 1.0).unwrap();
        for &v in out.as_label().unwrap() {
            prop_assert!(input_set.contains(&v), "label {} not in input set", v);
        }
        let (resized, _) = resize(&grid, [5, 5, 5]).unwrap();
        for &v in resized.as_label().unwrap() {
            prop_assert!(input_set.contains(&v));
        }
    }

    #[test]
    fn clip_normalize_bounded_and_monotone(values in proptest::collection::vec(-2000i16..3000, 1..64)) {
        let n = values.len();
        let grid = VoxelGrid::ct([n, 1, 1], [1.0; 3], values.clone()).unwrap();
        let out = clip_normalize(&grid, -250.0, 500.0).unwrap();
        let ov = out.as_probability().unwrap();
        for i in 0..n {
            prop_assert!((0.0..=1.0).contains(&ov[i]));
            for j in 0..n {
                if values[i] <= values[j] {
                    prop_assert!(ov[i] <= ov[j]);
                }
            }
        }
    }

    #[test]
    fn dice_bounds_and_symmetry(na in 0usize..50, nb in 0usize..50) {
        let inter = na.min(nb) / 2;
        let d = dice_counts(na, nb, inter);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, dice_counts(nb, na, inter));
    }

    #[test]
    fn pairing_one_to_one_accounting(a in arb_binary_grid(), seed in 0u64..100) {
        let dims = a.dims();
        let n = a.voxel_count();
        let mut rng = lnseg_core::rng::SplitMix64::new(seed);
        let bv: Vec<u8> = (0..n).map(|_| (rng.below(3) == 0) as u8).collect();
        let b = VoxelGrid::binary(dims, [1.0; 3], bv).unwrap();
        let gts = connected_components(&a, Connectivity::TwentySix).unwrap();
        let dets = connected_components(&b, Connectivity::TwentySix).unwrap();
        let pairing = pair_instances(&dets, &gts, 0.0).unwrap();
        prop_assert!(pairing.pairs.len() <= gts.len().min(dets.len()));
        prop_assert_eq!(pairing.pairs.len() + pairing.unmatched_gt.len(), gts.len());
        prop_assert_eq!(pairing.pairs.len() + pairing.unmatched_det.len(), dets.len());
        let mut gt_seen = std::collections::BTreeSet::new();
        let mut det_seen = std::collections::BTreeSet::new();
        for p in &pairing.pairs {
            prop_assert!(p.dice > 0.0);
            prop_assert!(gt_seen.insert(p.gt_id));
            prop_assert!(det_seen.insert(p.det_id));
        }
    }

    #[test]
    fn restore_dims_match_original(x in 6usize..20, y in 6usize..20, z in 6usize..20) {
        // A crafted record: resample + crop + resize, then invert.
        let dims = [x, y, z];
        let n = x * y * z;
        let mut hu = vec![-1000i16; n];
        for zz in 1..z - 1 {
            for yy in 1..y - 1 {
                for xx in 1..x - 1 {
                    hu[(zz * y + yy) * x + xx] = if xx % 2 == 0 { 30 } else { -820 };
                }
            }
        }
        let ct = VoxelGrid::ct(dims, [1.4, 0.9, 2.2], hu).unwrap();
        let cfg = lnseg_core::pipeline::PreprocessConfig::full_volume();
        if let Ok((processed, record)) = lnseg_core::pipeline::preprocess(&ct, &cfg, None) {
            let restored = restore_original_space(&processed, &record).unwrap();
            prop_assert_eq!(restored.dims(), dims);
        }
    }
}
