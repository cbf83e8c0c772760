//! Wall-clock timing of the non-neural pipeline stages, repeated over
//! the same CT volume.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use lnseg_core::eval::{evaluate_patient, mean_std, EvalOptions, MeanStd};
use lnseg_core::instances::{connected_components, threshold, Connectivity};
use lnseg_core::pipeline::{
    ensemble_max, extract_slabs, preprocess, restore_original_space, stitch_slabs,
    PreprocessConfig, SlabSpec,
};
use lnseg_core::VoxelGrid;

use crate::{Result, ToolError};

pub const STAGES: [&str; 6] = [
    "preprocess",
    "slab_stitch",
    "restore",
    "ensemble",
    "instancer",
    "metrics",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: String,
    pub mean_s: f64,
    pub std_s: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingReport {
    pub repeats: usize,
    pub stages: Vec<StageStats>,
    pub total_mean_s: f64,
    pub total_std_s: f64,
}

impl TimingReport {
    pub fn stage(&self, name: &str) -> Option<&StageStats> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

/// Run the dual-route pipeline `repeats` times over one CT volume and
/// time each stage: slab-route and full-volume preprocessing, slab
/// extraction and stitching (the normalized volume stands in for the
/// network prediction), restoration of both route maps to patient
/// space, their pixel-wise maximum, instance extraction, and a
/// self-comparison metrics pass.
pub fn benchmark_timing(
    ct: &VoxelGrid,
    lung_mask: Option<&VoxelGrid>,
    slab_spec: &SlabSpec,
    repeats: usize,
) -> Result<TimingReport> {
    if repeats == 0 {
        return Err(ToolError::Invalid("repeats must be >= 1".into()));
    }
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(repeats); STAGES.len()];
    let mut totals = Vec::with_capacity(repeats);

    for _ in 0..repeats {
        let run_start = Instant::now();
        let mut clock = Instant::now();
        let mut lap = |bucket: &mut Vec<f64>| {
            let now = Instant::now();
            bucket.push((now - clock).as_secs_f64());
            clock = now;
        };

        let (slab_vol, slab_record) = preprocess(ct, &PreprocessConfig::slab(), lung_mask)?;
        let (fv_vol, fv_record) = preprocess(ct, &PreprocessConfig::full_volume(), lung_mask)?;
        lap(&mut samples[0]);

        let slabs = extract_slabs(&slab_vol, slab_spec)?;
        let stitched = stitch_slabs(&slabs)?;
        lap(&mut samples[1]);

        let slab_restored = restore_original_space(&stitched, &slab_record)?;
        let fv_restored = restore_original_space(&fv_vol, &fv_record)?;
        lap(&mut samples[2]);

        let fused = ensemble_max(&slab_restored, &fv_restored)?;
        lap(&mut samples[3]);

        let bin = threshold(&fused, 0.5)?;
        let dets = connected_components(&bin, Connectivity::TwentySix)?;
        lap(&mut samples[4]);

        let _metrics = evaluate_patient("bench", &fused, &dets, 0.5, &EvalOptions::default())?;
        lap(&mut samples[5]);

        totals.push(run_start.elapsed().as_secs_f64());
    }

    let stages = STAGES
        .iter()
        .zip(samples)
        .map(|(name, vals)| {
            let MeanStd { mean, std } = mean_std(&vals).expect("repeats >= 1");
            StageStats {
                stage: name.to_string(),
                mean_s: mean,
                std_s: std,
                samples: vals,
            }
        })
        .collect();
    let MeanStd { mean, std } = mean_std(&totals).expect("repeats >= 1");
    Ok(TimingReport {
        repeats,
        stages,
        total_mean_s: mean,
        total_std_s: std,
    })
}
