//! Patient-level fold splitting and cross-validation reporting.
//!
//! Training is external: the harness consumes one precomputed
//! probability map per (patient, model) through a [`CohortProvider`] and
//! evaluates each test fold, so fold rows never touch the probability
//! maps of patients outside that fold. Ensembles fuse member maps with
//! the pixel-wise maximum before evaluation.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::eval::{
    aggregate, best_threshold, evaluate_patient, per_station_recall, stratify, sweep_thresholds,
    CohortMetrics, EvalOptions, PatientEvaluation, PatientMetrics, StationRecall, StratumMetrics,
};
use crate::grid::VoxelGrid;
use crate::instances::{annotation_instances, cluster_ground_truth, Connectivity, InstanceSet};
use crate::pipeline::ensemble_max;
use crate::rng::SplitMix64;

/// Deterministic patient-to-fold assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FoldSplit {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldSplit {
    /// Patients of one fold, in sorted id order.
    pub fn fold_patients(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = alloc::vec![0usize; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffle patients with the seeded generator and deal them round-robin,
/// so fold sizes differ by at most one. Ids are sorted before shuffling,
/// making the split a pure function of (ids, k, seed).
pub fn split_folds(patient_ids: &[String], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(invalid(format_args!("fold count must be >= 2, got {k}")));
    }
    if patient_ids.len() < k {
        return Err(invalid(format_args!(
            "{} patients cannot fill {k} folds",
            patient_ids.len()
        )));
    }
    let mut ids: Vec<String> = patient_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != patient_ids.len() {
        return Err(invalid("duplicate patient ids"));
    }
    let mut rng = SplitMix64::new(seed);
    rng.shuffle(&mut ids);
    let assignment = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, i % k))
        .collect();
    Ok(FoldSplit {
        k,
        seed,
        assignment,
    })
}

/// Source of per-patient artifacts. Implementations should load lazily;
/// the harness asks for each patient's probability maps only while that
/// patient's fold is being evaluated.
pub trait CohortProvider {
    fn patient_ids(&self) -> Result<Vec<String>>;
    fn load_annotation(&self, patient: &str) -> Result<crate::station::Annotation>;
    fn load_probability(&self, patient: &str, model: &str) -> Result<VoxelGrid>;
}

/// How the probability threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PtSelection {
    /// Sweep the lattice on each test fold and keep the fold's argmax.
    SweepPerFold,
    /// Sweep once over the whole cohort, then evaluate every fold at the
    /// single winning threshold.
    SweepGlobal,
    Fixed(f64),
}

/// One evaluated configuration: a single model, or an ensemble fusing
/// several members' probability maps.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    pub name: String,
    pub members: Vec<String>,
}

impl ModelSpec {
    pub fn single(name: &str) -> Self {
        Self {
            name: String::from(name),
            members: alloc::vec![String::from(name)],
        }
    }

    pub fn ensemble(name: &str, members: &[&str]) -> Self {
        Self {
            name: String::from(name),
            members: members.iter().map(|m| String::from(*m)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub connectivity: Connectivity,
    pub min_pair_dice: f64,
    pub fp_min_voxels: usize,
    pub pt: PtSelection,
    /// Merge touching ground-truth labels into clusters before pairing.
    pub cluster_gt: bool,
    pub models: Vec<ModelSpec>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            connectivity: Connectivity::TwentySix,
            min_pair_dice: 0.0,
            fp_min_voxels: 0,
            pt: PtSelection::SweepPerFold,
            cluster_gt: true,
            models: Vec::new(),
        }
    }
}

impl CvConfig {
    fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            connectivity: self.connectivity,
            min_pair_dice: self.min_pair_dice,
            fp_min_voxels: self.fp_min_voxels,
        }
    }
}

/// One row of the per-fold table; `fold` is None for the pooled Total
/// row.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FoldRow {
    pub fold: Option<usize>,
    pub pt: f64,
    pub n_gt: usize,
    pub metrics: CohortMetrics,
}

/// Full report for one model configuration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelReport {
    pub model: String,
    pub fold_rows: Vec<FoldRow>,
    pub total: FoldRow,
    pub strata: Vec<StratumMetrics>,
    pub per_station: Vec<StationRecall>,
    pub patients: Vec<PatientMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CvReport {
    pub folds: usize,
    pub seed: u64,
    pub split: FoldSplit,
    pub models: Vec<ModelReport>,
}

impl CvReport {
    /// Cross-check pooled counts against the per-fold rows; they are
    /// computed along different paths and must agree.
    pub fn validate(&self) -> Result<()> {
        for model in &self.models {
            let n_sum: usize = model.fold_rows.iter().map(|r| r.n_gt).sum();
            if n_sum != model.total.n_gt {
                return Err(invalid(format_args!(
                    "model {}: fold instance counts sum to {n_sum}, total row has {}",
                    model.model, model.total.n_gt
                )));
            }
            let tp_sum: usize = model.fold_rows.iter().map(|r| r.metrics.tp).sum();
            if tp_sum != model.total.metrics.tp {
                return Err(invalid(format_args!(
                    "model {}: fold tp counts sum to {tp_sum}, total row has {}",
                    model.model, model.total.metrics.tp
                )));
            }
            let patients: usize = model
                .fold_rows
                .iter()
                .map(|r| r.metrics.n_patients)
                .sum();
            if patients != model.total.metrics.n_patients {
                return Err(invalid(format_args!(
                    "model {}: fold patient counts sum to {patients}, total row has {}",
                    model.model, model.total.metrics.n_patients
                )));
            }
        }
        Ok(())
    }
}

struct LoadedPatient {
    id: String,
    prob: VoxelGrid,
    gts: InstanceSet,
    gt_bin: VoxelGrid,
}

fn load_patient(
    provider: &dyn CohortProvider,
    patient: &str,
    model: &ModelSpec,
    cfg: &CvConfig,
) -> Result<LoadedPatient> {
    let ann = provider.load_annotation(patient)?;
    let gts = if cfg.cluster_gt {
        cluster_ground_truth(&ann, cfg.connectivity)?.1
    } else {
        annotation_instances(&ann, cfg.connectivity)?
    };
    let gt_bin = ann.foreground();
    let mut prob: Option<VoxelGrid> = None;
    for member in &model.members {
        let map = provider.load_probability(patient, member)?;
        prob = Some(match prob {
            None => map,
            Some(acc) => ensemble_max(&acc, &map)?,
        });
    }
    let prob = prob.ok_or_else(|| invalid("model has no members"))?;
    prob.ensure_same_geometry(ann.labels())?;
    Ok(LoadedPatient {
        id: String::from(patient),
        prob,
        gts,
        gt_bin,
    })
}

/// Evaluate every model configuration across all test folds and emit
/// per-fold rows, a pooled Total row, size/station strata, and
/// per-station recall counts.
pub fn run_cross_validation(provider: &dyn CohortProvider, cfg: &CvConfig) -> Result<CvReport> {
    if cfg.models.is_empty() {
        return Err(invalid("cross-validation needs at least one model"));
    }
    let ids = provider.patient_ids()?;
    let split = split_folds(&ids, cfg.folds, cfg.seed)?;
    let opts = cfg.eval_options();

    let mut models = Vec::with_capacity(cfg.models.len());
    for model in &cfg.models {
        let global_pt = match cfg.pt {
            PtSelection::SweepGlobal => {
                let mut curves = Vec::new();
                for fold in 0..cfg.folds {
                    for patient in split.fold_patients(fold) {
                        let loaded = load_patient(provider, patient, model, cfg)?;
                        let (curve, _) = sweep_thresholds(&loaded.prob, &loaded.gt_bin)?;
                        curves.push(curve);
                    }
                }
                Some(best_threshold(&curves).0)
            }
            _ => None,
        };

        let mut fold_rows = Vec::with_capacity(cfg.folds);
        let mut all_evals: Vec<PatientEvaluation> = Vec::new();
        for fold in 0..cfg.folds {
            let loaded: Vec<LoadedPatient> = split
                .fold_patients(fold)
                .iter()
                .map(|p| load_patient(provider, p, model, cfg))
                .collect::<Result<_>>()?;
            let pt = match cfg.pt {
                PtSelection::Fixed(pt) => pt,
                PtSelection::SweepGlobal => global_pt.expect("computed above"),
                PtSelection::SweepPerFold => {
                    let curves: Vec<_> = loaded
                        .iter()
                        .map(|l| sweep_thresholds(&l.prob, &l.gt_bin).map(|(c, _)| c))
                        .collect::<Result<_>>()?;
                    best_threshold(&curves).0
                }
            };
            let evals: Vec<PatientEvaluation> = loaded
                .iter()
                .map(|l| evaluate_patient(&l.id, &l.prob, &l.gts, pt, &opts))
                .collect::<Result<_>>()?;
            let metrics: Vec<PatientMetrics> = evals.iter().map(|e| e.metrics.clone()).collect();
            let n_gt = evals.iter().map(|e| e.gt_outcomes.len()).sum();
            fold_rows.push(FoldRow {
                fold: Some(fold),
                pt,
                n_gt,
                metrics: aggregate(&metrics)?,
            });
            all_evals.extend(evals);
        }

        all_evals.sort_by(|a, b| a.metrics.patient_id.cmp(&b.metrics.patient_id));
        let patients: Vec<PatientMetrics> =
            all_evals.iter().map(|e| e.metrics.clone()).collect();
        let total_pt = if fold_rows.iter().all(|r| r.pt == fold_rows[0].pt) {
            fold_rows[0].pt
        } else {
            f64::NAN
        };
        let total = FoldRow {
            fold: None,
            pt: total_pt,
            n_gt: patients.iter().map(|p| p.tp + p.fn_count).sum(),
            metrics: aggregate(&patients)?,
        };
        let strata = stratify(&all_evals);
        let per_station = per_station_recall(&all_evals);
        models.push(ModelReport {
            model: model.name.clone(),
            fold_rows,
            total,
            strata,
            per_station,
            patients,
        });
    }

    let report = CvReport {
        folds: cfg.folds,
        seed: cfg.seed,
        split,
        models,
    };
    report.validate()?;
    Ok(report)
}
