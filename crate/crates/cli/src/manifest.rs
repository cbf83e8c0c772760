//! Cohort manifest: maps each patient to its CT, ground-truth
//! annotation, optional lung mask, and per-model probability maps.
//! Paths are resolved relative to the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use lnseg_core::cv::CohortProvider;
use lnseg_core::station::Annotation;
use lnseg_core::VoxelGrid;

use crate::sidecar::{read_annotation, read_json};
use crate::{nifti, Result, ToolError};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct PatientEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ct: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_stations: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lung_mask: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub prob_maps: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub patients: BTreeMap<String, PatientEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::sidecar::write_json(self, path)
    }
}

fn missing(patient: &str, role: &str) -> ToolError {
    ToolError::Manifest {
        patient: patient.to_string(),
        role: role.to_string(),
    }
}

/// Filesystem-backed cohort: loads artifacts lazily per patient, with an
/// optional parallel prefetch cache for probability maps.
pub struct FsCohort {
    manifest: Manifest,
    base: PathBuf,
    prefetched: Mutex<BTreeMap<(String, String), VoxelGrid>>,
}

impl FsCohort {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::read(manifest_path)?;
        let base = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(Self {
            manifest,
            base,
            prefetched: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base.join(rel)
    }

    fn entry(&self, patient: &str) -> Result<&PatientEntry> {
        self.manifest
            .patients
            .get(patient)
            .ok_or_else(|| missing(patient, "manifest entry"))
    }

    pub fn prob_path(&self, patient: &str, model: &str) -> Result<PathBuf> {
        let entry = self.entry(patient)?;
        let rel = entry
            .prob_maps
            .get(model)
            .ok_or_else(|| missing(patient, &format!("probability map '{model}'")))?;
        Ok(self.resolve(rel))
    }

    pub fn ct_path(&self, patient: &str) -> Result<PathBuf> {
        let entry = self.entry(patient)?;
        entry
            .ct
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| missing(patient, "ct"))
    }

    pub fn lung_mask_path(&self, patient: &str) -> Result<Option<PathBuf>> {
        Ok(self.entry(patient)?.lung_mask.as_deref().map(|p| self.resolve(p)))
    }

    /// Check that a patient's manifest entry carries every role needed
    /// for evaluation, without touching the files; errors name the
    /// first missing role in sorted patient order.
    pub fn require_roles(&self, patient: &str, members: &[String]) -> Result<()> {
        let entry = self.entry(patient)?;
        if entry.gt_labels.is_none() {
            return Err(missing(patient, "gt_labels"));
        }
        if entry.gt_stations.is_none() {
            return Err(missing(patient, "gt_stations"));
        }
        for member in members {
            if !entry.prob_maps.contains_key(member) {
                return Err(missing(patient, &format!("probability map '{member}'")));
            }
        }
        Ok(())
    }

    /// Load a patient's annotation with full file-level error context.
    pub fn annotation(&self, patient: &str) -> Result<Annotation> {
        let entry = self.entry(patient)?;
        let labels = entry
            .gt_labels
            .as_deref()
            .ok_or_else(|| missing(patient, "gt_labels"))?;
        let stations = entry
            .gt_stations
            .as_deref()
            .ok_or_else(|| missing(patient, "gt_stations"))?;
        read_annotation(&self.resolve(labels), &self.resolve(stations))
    }

    /// Read every (patient, model) probability map in parallel into the
    /// cache; results and report bytes do not depend on the thread
    /// count, only wall-clock does.
    pub fn prefetch_probabilities(&self, models: &[String]) -> Result<()> {
        let mut wanted: Vec<(String, String, PathBuf)> = Vec::new();
        for patient in self.manifest.patients.keys() {
            for model in models {
                wanted.push((patient.clone(), model.clone(), self.prob_path(patient, model)?));
            }
        }
        let loaded: Vec<((String, String), VoxelGrid)> = wanted
            .into_par_iter()
            .map(|(patient, model, path)| {
                nifti::read_volume(&path).map(|grid| ((patient, model), grid))
            })
            .collect::<Result<_>>()?;
        let mut cache = self.prefetched.lock().expect("cache lock");
        cache.extend(loaded);
        Ok(())
    }
}

impl CohortProvider for FsCohort {
    fn patient_ids(&self) -> lnseg_core::Result<Vec<String>> {
        Ok(self.manifest.patients.keys().cloned().collect())
    }

    fn load_annotation(&self, patient: &str) -> lnseg_core::Result<Annotation> {
        self.annotation(patient).map_err(into_core)
    }

    fn load_probability(&self, patient: &str, model: &str) -> lnseg_core::Result<VoxelGrid> {
        let key = (patient.to_string(), model.to_string());
        if let Some(grid) = self.prefetched.lock().expect("cache lock").remove(&key) {
            return Ok(grid);
        }
        let path = self.prob_path(patient, model).map_err(into_core)?;
        nifti::read_volume(&path).map_err(into_core)
    }
}

/// The cross-validation core reports errors through the core error
/// type; IO details are preserved in the message.
fn into_core(err: ToolError) -> lnseg_core::Error {
    match err {
        ToolError::Core(e) => e,
        other => lnseg_core::Error::InvalidArgument(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_parses_and_flags_missing_roles() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(
            &path,
            r#"{"patients": {"p0": {"gt_labels": "p0/labels.nii.gz",
                                     "gt_stations": "p0/stations.json",
                                     "prob_maps": {"sw": "p0/sw.nii.gz"}},
                            "p1": {}}}"#,
        )
        .unwrap();
        let cohort = FsCohort::open(&path).unwrap();
        assert_eq!(cohort.patient_ids().unwrap(), vec!["p0", "p1"]);
        assert!(cohort.prob_path("p0", "sw").is_ok());
        let err = cohort.prob_path("p0", "fv").unwrap_err();
        assert!(err.to_string().contains("p0"));
        assert!(err.to_string().contains("fv"));
        let err = cohort.ct_path("p1").unwrap_err();
        assert!(err.to_string().contains("ct"));
        let err = cohort.prob_path("nope", "sw").unwrap_err();
        assert!(err.to_string().contains("nope"));
    }
}
