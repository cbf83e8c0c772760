//! Threshold sweeps, instance pairing, and the detection/segmentation
//! metric suite with stratified aggregation.
//!
//! Conventions, stated once here because they shape every number this
//! module reports:
//! - Dice of two empty sets is 1.0 (a perfect negative is not a
//!   failure); exactly one empty side gives 0.0.
//! - Patients without ground-truth instances are excluded from the
//!   patient-wise recall mean but still contribute false positives.
//! - Cohort `dice_tp`/`gt_perc` are mean +/- std over patients for which
//!   the per-patient value is defined; std is the population form.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::grid::VoxelGrid;
use crate::instances::{connected_components, threshold, Connectivity, InstanceSet};
use crate::station::{Station, StationInfo};

/// The ten equally-spaced probability thresholds swept over (0, 1].
pub fn pt_lattice() -> [f64; 10] {
    core::array::from_fn(|i| (i as f64 + 1.0) / 10.0)
}

/// `2|A n B| / (|A| + |B|)`; 1.0 when both sides are empty, 0.0 when
/// exactly one is.
pub fn dice_counts(na: usize, nb: usize, inter: usize) -> f64 {
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

/// Dice between two binary grids of identical geometry.
pub fn dice_binary(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    a.ensure_same_geometry(b)?;
    let av = a.as_binary()?;
    let bv = b.as_binary()?;
    let mut na = 0usize;
    let mut nb = 0usize;
    let mut inter = 0usize;
    for (&x, &y) in av.iter().zip(bv) {
        na += x as usize;
        nb += y as usize;
        inter += (x & y) as usize;
    }
    Ok(dice_counts(na, nb, inter))
}

/// Patient Dice at each lattice threshold, plus this patient's best
/// threshold (ties resolve to the lower threshold).
pub fn sweep_thresholds(prob: &VoxelGrid, gt_bin: &VoxelGrid) -> Result<(Vec<(f64, f64)>, f64)> {
    prob.ensure_same_geometry(gt_bin)?;
    let pv = prob.as_probability()?;
    let gv = gt_bin.as_binary()?;
    let lattice = pt_lattice();
    let mut fg = [0usize; 10];
    let mut inter = [0usize; 10];
    let mut n_gt = 0usize;
    for (&p, &g) in pv.iter().zip(gv) {
        n_gt += g as usize;
        let p = p as f64;
        for (i, &pt) in lattice.iter().enumerate() {
            if p >= pt {
                fg[i] += 1;
                inter[i] += g as usize;
            }
        }
    }
    let curve: Vec<(f64, f64)> = lattice
        .iter()
        .enumerate()
        .map(|(i, &pt)| (pt, dice_counts(fg[i], n_gt, inter[i])))
        .collect();
    let best = best_threshold(core::slice::from_ref(&curve)).0;
    Ok((curve, best))
}

/// Cohort-level best threshold: argmax of the cohort-mean patient Dice
/// over the lattice, ties resolving to the lower threshold. Returns the
/// chosen threshold and the mean curve. Every curve must come from
/// [`sweep_thresholds`], i.e. cover the full lattice.
pub fn best_threshold(curves: &[Vec<(f64, f64)>]) -> (f64, Vec<(f64, f64)>) {
    debug_assert!(curves.iter().all(|c| c.len() == 10));
    let lattice = pt_lattice();
    let mut mean = Vec::with_capacity(lattice.len());
    for (i, &pt) in lattice.iter().enumerate() {
        let sum: f64 = curves.iter().map(|c| c[i].1).sum();
        let m = if curves.is_empty() {
            0.0
        } else {
            sum / curves.len() as f64
        };
        mean.push((pt, m));
    }
    let mut best = lattice[0];
    let mut best_val = mean[0].1;
    for &(pt, v) in &mean[1..] {
        if v > best_val {
            best_val = v;
            best = pt;
        }
    }
    (best, mean)
}

/// One accepted (ground truth, detection) match.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InstancePair {
    pub gt_id: u32,
    pub det_id: u32,
    pub dice: f64,
}

/// Outcome of greedy one-to-one instance matching.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingResult {
    pub pairs: Vec<InstancePair>,
    pub unmatched_gt: Vec<u32>,
    pub unmatched_det: Vec<u32>,
}

/// Voxel overlap counts of every overlapping (gt, det) pair, plus the
/// per-gt covered voxel totals and whole-map counts.
struct OverlapTable {
    pairs: BTreeMap<(u32, u32), usize>,
    covered: BTreeMap<u32, usize>,
    det_fg: usize,
    gt_fg: usize,
    inter: usize,
}

fn overlap_table(dets: &InstanceSet, gts: &InstanceSet) -> Result<OverlapTable> {
    if dets.dims() != gts.dims() {
        return Err(crate::error::Error::GeometryMismatch(alloc::format!(
            "detection dims {:?} vs ground truth dims {:?}",
            dets.dims(),
            gts.dims()
        )));
    }
    let det_map = dets.label_map();
    let mut pairs: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    let mut covered: BTreeMap<u32, usize> = BTreeMap::new();
    let mut inter = 0usize;
    for gt in gts.instances() {
        let mut cov = 0usize;
        for &v in &gt.voxels {
            let d = det_map[v as usize];
            if d != 0 {
                cov += 1;
                *pairs.entry((gt.id, d)).or_insert(0) += 1;
            }
        }
        inter += cov;
        covered.insert(gt.id, cov);
    }
    Ok(OverlapTable {
        pairs,
        covered,
        det_fg: dets.foreground_count(),
        gt_fg: gts.foreground_count(),
        inter,
    })
}

/// Greedy one-to-one matching by descending pair Dice; ties resolve to
/// the lower ground-truth id, then the lower detection id. Pairs with
/// Dice <= `min_pair_dice` are rejected.
pub fn pair_instances(
    dets: &InstanceSet,
    gts: &InstanceSet,
    min_pair_dice: f64,
) -> Result<PairingResult> {
    let table = overlap_table(dets, gts)?;
    pair_from_overlaps(&table.pairs, dets, gts, min_pair_dice)
}

fn pair_from_overlaps(
    overlaps: &BTreeMap<(u32, u32), usize>,
    dets: &InstanceSet,
    gts: &InstanceSet,
    min_pair_dice: f64,
) -> Result<PairingResult> {
    let mut candidates: Vec<InstancePair> = overlaps
        .iter()
        .map(|(&(gt_id, det_id), &inter)| {
            let ng = gts.instance(gt_id).expect("gt id from overlap scan").voxel_count();
            let nd = dets
                .instance(det_id)
                .expect("det id from overlap scan")
                .voxel_count();
            InstancePair {
                gt_id,
                det_id,
                dice: dice_counts(nd, ng, inter),
            }
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.dice
            .partial_cmp(&a.dice)
            .expect("pair dice is never NaN")
            .then(a.gt_id.cmp(&b.gt_id))
            .then(a.det_id.cmp(&b.det_id))
    });

    let mut used_gt: BTreeSet<u32> = BTreeSet::new();
    let mut used_det: BTreeSet<u32> = BTreeSet::new();
    let mut pairs = Vec::new();
    for cand in candidates {
        if cand.dice <= min_pair_dice {
            break;
        }
        if used_gt.contains(&cand.gt_id) || used_det.contains(&cand.det_id) {
            continue;
        }
        used_gt.insert(cand.gt_id);
        used_det.insert(cand.det_id);
        pairs.push(cand);
    }
    let unmatched_gt = gts
        .instances()
        .iter()
        .map(|i| i.id)
        .filter(|id| !used_gt.contains(id))
        .collect();
    let unmatched_det = dets
        .instances()
        .iter()
        .map(|i| i.id)
        .filter(|id| !used_det.contains(id))
        .collect();
    Ok(PairingResult {
        pairs,
        unmatched_gt,
        unmatched_det,
    })
}

/// Per-patient measurements at one threshold.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PatientMetrics {
    pub patient_id: String,
    pub pt: f64,
    /// Whole-map Dice between the thresholded prediction and the ground
    /// truth foreground.
    pub dice: f64,
    /// Mean pair Dice over matched instances; None without any pair.
    pub dice_tp: Option<f64>,
    /// Mean over GT instances of the covered voxel percentage; None for
    /// patients without GT instances.
    pub gt_perc: Option<f64>,
    pub tp: usize,
    pub fn_count: usize,
    pub fp: usize,
}

/// Assemble per-patient metrics from a pairing and the instance sets it
/// was computed from. `dets` must be the component set of the
/// probability map thresholded at `pt`.
pub fn patient_metrics(
    patient_id: &str,
    pairing: &PairingResult,
    dets: &InstanceSet,
    gts: &InstanceSet,
    pt: f64,
) -> Result<PatientMetrics> {
    let table = overlap_table(dets, gts)?;
    let dice = dice_counts(table.det_fg, table.gt_fg, table.inter);
    let dice_tp = mean_of(pairing.pairs.iter().map(|p| p.dice));
    let gt_perc = mean_of(gts.instances().iter().map(|gt| {
        100.0 * table.covered[&gt.id] as f64 / gt.voxel_count() as f64
    }));
    Ok(PatientMetrics {
        patient_id: String::from(patient_id),
        pt,
        dice,
        dice_tp,
        gt_perc,
        tp: pairing.pairs.len(),
        fn_count: pairing.unmatched_gt.len(),
        fp: pairing.unmatched_det.len(),
    })
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Outcome of one ground-truth instance under a fixed threshold, carrying
/// everything stratification needs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GtOutcome {
    pub gt_id: u32,
    pub voxel_count: usize,
    pub short_axis_mm: f64,
    pub stations: BTreeSet<Station>,
    pub primaries: BTreeSet<Station>,
    /// Pair Dice when matched.
    pub pair_dice: Option<f64>,
    /// Percentage of this instance's voxels covered by the prediction.
    pub covered_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PatientEvaluation {
    pub metrics: PatientMetrics,
    pub gt_outcomes: Vec<GtOutcome>,
}

/// Knobs shared by the evaluation paths.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub connectivity: Connectivity,
    pub min_pair_dice: f64,
    /// Unmatched detections below this voxel count are not counted as
    /// false positives (0 = no floor).
    pub fp_min_voxels: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            connectivity: Connectivity::TwentySix,
            min_pair_dice: 0.0,
            fp_min_voxels: 0,
        }
    }
}

/// Threshold, label, pair, and measure one patient.
pub fn evaluate_patient(
    patient_id: &str,
    prob: &VoxelGrid,
    gts: &InstanceSet,
    pt: f64,
    opts: &EvalOptions,
) -> Result<PatientEvaluation> {
    let spacing_close = prob.spacing().iter().zip(gts.spacing()).all(|(&a, b)| {
        libm::fabs(a - b) <= 1e-9 * libm::fabs(a).max(libm::fabs(b)).max(1.0)
    });
    if prob.dims() != gts.dims() || !spacing_close {
        return Err(crate::error::Error::GeometryMismatch(alloc::format!(
            "probability map {:?} @ {:?} vs ground truth {:?} @ {:?}",
            prob.dims(),
            prob.spacing(),
            gts.dims(),
            gts.spacing()
        )));
    }
    let bin = threshold(prob, pt)?;
    let dets = connected_components(&bin, opts.connectivity)?;
    let table = overlap_table(&dets, gts)?;
    let pairing = pair_from_overlaps(&table.pairs, &dets, gts, opts.min_pair_dice)?;

    let fp = pairing
        .unmatched_det
        .iter()
        .filter(|id| {
            dets.instance(**id).expect("det id").voxel_count() >= opts.fp_min_voxels
        })
        .count();

    let dice = dice_counts(table.det_fg, table.gt_fg, table.inter);
    let dice_tp = mean_of(pairing.pairs.iter().map(|p| p.dice));
    let pair_by_gt: BTreeMap<u32, f64> = pairing
        .pairs
        .iter()
        .map(|p| (p.gt_id, p.dice))
        .collect();
    let gt_outcomes: Vec<GtOutcome> = gts
        .instances()
        .iter()
        .map(|gt| GtOutcome {
            gt_id: gt.id,
            voxel_count: gt.voxel_count(),
            short_axis_mm: gt.short_axis_mm,
            stations: gt.stations.clone(),
            primaries: gt.primaries.clone(),
            pair_dice: pair_by_gt.get(&gt.id).copied(),
            covered_pct: 100.0 * table.covered[&gt.id] as f64 / gt.voxel_count() as f64,
        })
        .collect();
    let gt_perc = mean_of(gt_outcomes.iter().map(|o| o.covered_pct));

    Ok(PatientEvaluation {
        metrics: PatientMetrics {
            patient_id: String::from(patient_id),
            pt,
            dice,
            dice_tp,
            gt_perc,
            tp: pairing.pairs.len(),
            fn_count: pairing.unmatched_gt.len(),
            fp,
        },
        gt_outcomes,
    })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some(MeanStd {
        mean,
        std: libm::sqrt(var),
    })
}

/// Cohort-level aggregation of per-patient metrics.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CohortMetrics {
    pub n_patients: usize,
    pub n_gt_instances: usize,
    pub tp: usize,
    pub fn_count: usize,
    pub fp: usize,
    /// Pooled recall over all patients' instance counts.
    pub recall_global: Option<f64>,
    /// Mean +/- std of per-patient recall, over patients with GT.
    pub recall_pw: Option<MeanStd>,
    pub fppp: MeanStd,
    pub dice: MeanStd,
    pub dice_tp: Option<MeanStd>,
    pub gt_perc: Option<MeanStd>,
}

/// Pool patient metrics into cohort metrics. Recall is reported both
/// count-pooled (`recall_global`) and per-patient averaged (`recall_pw`).
pub fn aggregate(patients: &[PatientMetrics]) -> Result<CohortMetrics> {
    if patients.is_empty() {
        return Err(invalid("cohort aggregation needs at least one patient"));
    }
    let tp: usize = patients.iter().map(|p| p.tp).sum();
    let fn_count: usize = patients.iter().map(|p| p.fn_count).sum();
    let fp: usize = patients.iter().map(|p| p.fp).sum();
    let n_gt = tp + fn_count;
    let recall_global = (n_gt > 0).then(|| tp as f64 / n_gt as f64);
    let per_patient_recall: Vec<f64> = patients
        .iter()
        .filter(|p| p.tp + p.fn_count > 0)
        .map(|p| p.tp as f64 / (p.tp + p.fn_count) as f64)
        .collect();
    let fppp_vals: Vec<f64> = patients.iter().map(|p| p.fp as f64).collect();
    let dice_vals: Vec<f64> = patients.iter().map(|p| p.dice).collect();
    let dice_tp_vals: Vec<f64> = patients.iter().filter_map(|p| p.dice_tp).collect();
    let gt_perc_vals: Vec<f64> = patients.iter().filter_map(|p| p.gt_perc).collect();
    Ok(CohortMetrics {
        n_patients: patients.len(),
        n_gt_instances: n_gt,
        tp,
        fn_count,
        fp,
        recall_global,
        recall_pw: mean_std(&per_patient_recall),
        fppp: mean_std(&fppp_vals).expect("non-empty cohort"),
        dice: mean_std(&dice_vals).expect("non-empty cohort"),
        dice_tp: mean_std(&dice_tp_vals),
        gt_perc: mean_std(&gt_perc_vals),
    })
}

/// Short-axis stratum rows, cumulative as reported in the size analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SizeStratum {
    All,
    Ge7,
    Ge10,
}

impl SizeStratum {
    pub const ALL: [SizeStratum; 3] = [SizeStratum::All, SizeStratum::Ge7, SizeStratum::Ge10];

    pub fn contains(&self, short_axis_mm: f64) -> bool {
        match self {
            SizeStratum::All => true,
            SizeStratum::Ge7 => short_axis_mm >= 7.0,
            SizeStratum::Ge10 => short_axis_mm >= 10.0,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            SizeStratum::All => "all",
            SizeStratum::Ge7 => "ge7",
            SizeStratum::Ge10 => "ge10",
        }
    }
}

/// Station grouping: everything, or everything except station 1 and NA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StationGroup {
    All,
    Relevant,
}

impl StationGroup {
    pub const ALL: [StationGroup; 2] = [StationGroup::All, StationGroup::Relevant];

    /// An instance belongs to the relevant group when at least one of
    /// its primary stations is neither 1 nor NA.
    pub fn contains(&self, primaries: &BTreeSet<Station>) -> bool {
        match self {
            StationGroup::All => true,
            StationGroup::Relevant => primaries.iter().any(Station::is_relevant),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            StationGroup::All => "all",
            StationGroup::Relevant => "relevant",
        }
    }
}

fn outcome_in(o: &GtOutcome, size: SizeStratum, group: StationGroup) -> bool {
    size.contains(o.short_axis_mm) && group.contains(&o.primaries)
}

/// Per-patient measurements restricted to one stratum.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PatientStratumMetrics {
    pub recall_num: usize,
    pub recall_den: usize,
    pub dice_tp: Option<f64>,
    pub gt_perc: Option<f64>,
}

pub fn patient_stratum_metrics(
    eval: &PatientEvaluation,
    size: SizeStratum,
    group: StationGroup,
) -> PatientStratumMetrics {
    let selected: Vec<&GtOutcome> = eval
        .gt_outcomes
        .iter()
        .filter(|o| outcome_in(o, size, group))
        .collect();
    let recall_den = selected.len();
    let recall_num = selected.iter().filter(|o| o.pair_dice.is_some()).count();
    let dice_tp = mean_of(selected.iter().filter_map(|o| o.pair_dice));
    let gt_perc = mean_of(selected.iter().map(|o| o.covered_pct));
    PatientStratumMetrics {
        recall_num,
        recall_den,
        dice_tp,
        gt_perc,
    }
}

/// Cohort measurements restricted to one stratum.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StratumMetrics {
    pub size: SizeStratum,
    pub group: StationGroup,
    pub gt_total: usize,
    pub tp: usize,
    pub recall: Option<f64>,
    pub recall_pw: Option<MeanStd>,
    pub dice_tp: Option<MeanStd>,
    pub gt_perc: Option<MeanStd>,
}

/// Recompute recall, Dice-TP, and GT coverage restricted to the ground
/// truth instances of each (size, station-group) stratum.
pub fn stratify(evals: &[PatientEvaluation]) -> Vec<StratumMetrics> {
    let mut rows = Vec::with_capacity(6);
    for size in SizeStratum::ALL {
        for group in StationGroup::ALL {
            let per_patient: Vec<PatientStratumMetrics> = evals
                .iter()
                .map(|e| patient_stratum_metrics(e, size, group))
                .collect();
            let gt_total: usize = per_patient.iter().map(|p| p.recall_den).sum();
            let tp: usize = per_patient.iter().map(|p| p.recall_num).sum();
            let recall = (gt_total > 0).then(|| tp as f64 / gt_total as f64);
            let pw: Vec<f64> = per_patient
                .iter()
                .filter(|p| p.recall_den > 0)
                .map(|p| p.recall_num as f64 / p.recall_den as f64)
                .collect();
            let dice_tp_vals: Vec<f64> = per_patient.iter().filter_map(|p| p.dice_tp).collect();
            let gt_perc_vals: Vec<f64> = per_patient.iter().filter_map(|p| p.gt_perc).collect();
            rows.push(StratumMetrics {
                size,
                group,
                gt_total,
                tp,
                recall,
                recall_pw: mean_std(&pw),
                dice_tp: mean_std(&dice_tp_vals),
                gt_perc: mean_std(&gt_perc_vals),
            });
        }
    }
    rows
}

/// (station, detected, total) triples over ground-truth instances; an
/// instance counts toward every station in its primary set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StationRecall {
    pub station: Station,
    pub detected: usize,
    pub total: usize,
}

pub fn per_station_recall(evals: &[PatientEvaluation]) -> Vec<StationRecall> {
    let mut totals: BTreeMap<Station, (usize, usize)> = BTreeMap::new();
    for eval in evals {
        for o in &eval.gt_outcomes {
            for &st in &o.primaries {
                let entry = totals.entry(st).or_insert((0, 0));
                entry.1 += 1;
                if o.pair_dice.is_some() {
                    entry.0 += 1;
                }
            }
        }
    }
    totals
        .into_iter()
        .map(|(station, (detected, total))| StationRecall {
            station,
            detected,
            total,
        })
        .collect()
}

/// Counts per disjoint size category, ordered [lt7, 7to10, ge10].
pub fn size_strata_counts(short_axes: impl IntoIterator<Item = f64>) -> Result<[usize; 3]> {
    let mut counts = [0usize; 3];
    for v in short_axes {
        let cat = crate::instances::size_category(v)?;
        counts[cat as usize] += 1;
    }
    Ok(counts)
}

/// One patient's inputs for cohort evaluation.
#[derive(Debug, Clone)]
pub struct CohortItem {
    pub patient_id: String,
    pub prob: VoxelGrid,
    pub gts: InstanceSet,
    /// Binary union of the ground-truth labels, used by the sweep.
    pub gt_bin: VoxelGrid,
}

/// Threshold policy for a plain (non cross-validated) evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PtChoice {
    Fixed(f64),
    Sweep,
}

/// Per-patient and cohort metrics, with stratification axes; the shape
/// serialized by the report writers.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub pt: f64,
    /// Cohort-mean Dice per lattice threshold when a sweep ran.
    pub sweep: Option<Vec<(f64, f64)>>,
    pub cohort: CohortMetrics,
    pub strata: Vec<StratumMetrics>,
    pub per_station: Vec<StationRecall>,
    pub patients: Vec<PatientEvaluation>,
}

/// Evaluate a cohort at a fixed threshold or at the best swept one.
/// Patients are reported in sorted id order regardless of input order.
pub fn evaluate_cohort(
    items: &[CohortItem],
    pt: PtChoice,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(invalid("cohort evaluation needs at least one patient"));
    }
    let (chosen_pt, sweep) = match pt {
        PtChoice::Fixed(pt) => {
            if !(0.0..=1.0).contains(&pt) {
                return Err(invalid(format_args!("threshold {pt} outside [0, 1]")));
            }
            (pt, None)
        }
        PtChoice::Sweep => {
            let curves: Vec<Vec<(f64, f64)>> = items
                .iter()
                .map(|item| sweep_thresholds(&item.prob, &item.gt_bin).map(|(c, _)| c))
                .collect::<Result<_>>()?;
            let (best, mean_curve) = best_threshold(&curves);
            (best, Some(mean_curve))
        }
    };
    let mut evals: Vec<PatientEvaluation> = items
        .iter()
        .map(|item| evaluate_patient(&item.patient_id, &item.prob, &item.gts, chosen_pt, opts))
        .collect::<Result<_>>()?;
    evals.sort_by(|a, b| a.metrics.patient_id.cmp(&b.metrics.patient_id));
    let metrics: Vec<PatientMetrics> = evals.iter().map(|e| e.metrics.clone()).collect();
    Ok(EvalReport {
        pt: chosen_pt,
        sweep,
        cohort: aggregate(&metrics)?,
        strata: stratify(&evals),
        per_station: per_station_recall(&evals),
        patients: evals,
    })
}

/// Inter-rater station agreement grade.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum AgreementGrade {
    /// Annotators agree on the primary station.
    Perfect,
    /// Station sets agree but the primaries differ.
    Good,
    /// Anything else.
    Bad,
}

pub fn station_agreement_grade(a: &StationInfo, b: &StationInfo) -> AgreementGrade {
    if a.primary() == b.primary() {
        AgreementGrade::Perfect
    } else if a.stations() == b.stations() {
        AgreementGrade::Good
    } else {
        AgreementGrade::Bad
    }
}
