//! JSON sidecar formats: station metadata, geometry records, slab-set
//! metadata, instance exports, and phantom specs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use lnseg_core::geometry::GeometryRecord;
use lnseg_core::instances::{Connectivity, InstanceSet};
use lnseg_core::pipeline::{Slab, SlabSet};
use lnseg_core::station::{Annotation, Laterality, Station, StationInfo};

use crate::nifti;
use crate::{Result, ToolError};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| ToolError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| ToolError::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Serialize as pretty JSON with a trailing newline; output is
/// deterministic for a fixed value.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| ToolError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| ToolError::io(path, e))
}

/// Station sidecar schema: `{"labels": [{"id": 3, "stations": ["4","7"],
/// "primary": "4", "laterality": "right"}]}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct StationSidecar {
    pub labels: Vec<SidecarEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub id: u16,
    pub stations: Vec<Station>,
    pub primary: Station,
    pub laterality: Laterality,
}

pub fn annotation_sidecar(ann: &Annotation) -> StationSidecar {
    StationSidecar {
        labels: ann
            .station_table()
            .iter()
            .map(|(&id, info)| SidecarEntry {
                id,
                stations: info.stations().iter().copied().collect(),
                primary: info.primary(),
                laterality: info.laterality(),
            })
            .collect(),
    }
}

/// Load a label volume plus its station sidecar into a validated
/// annotation; the bijection between grid labels and sidecar entries is
/// enforced, never assumed.
pub fn read_annotation(label_path: &Path, sidecar_path: &Path) -> Result<Annotation> {
    let labels = nifti::read_volume(label_path)?;
    let sidecar: StationSidecar = read_json(sidecar_path)?;
    let mut table = BTreeMap::new();
    for entry in sidecar.labels {
        let info = StationInfo::new(
            entry.stations.into_iter().collect(),
            entry.primary,
            entry.laterality,
        )?;
        if table.insert(entry.id, info).is_some() {
            return Err(ToolError::format(
                sidecar_path,
                format!("duplicate label id {}", entry.id),
            ));
        }
    }
    Ok(Annotation::new(labels, table)?)
}

pub fn write_annotation(ann: &Annotation, label_path: &Path, sidecar_path: &Path) -> Result<()> {
    nifti::write_volume(ann.labels(), label_path)?;
    write_json(&annotation_sidecar(ann), sidecar_path)
}

pub fn read_geometry_record(path: &Path) -> Result<GeometryRecord> {
    read_json(path)
}

pub fn write_geometry_record(record: &GeometryRecord, path: &Path) -> Result<()> {
    write_json(record, path)
}

/// Slab-set metadata, persisted next to the per-slab volumes so slab
/// inference and stitching can run in separate invocations.
#[derive(Debug, Serialize, Deserialize)]
pub struct SlabMeta {
    pub parent_dims: [usize; 3],
    pub parent_spacing: [f64; 3],
    #[serde(default)]
    pub parent_origin: [f64; 3],
    pub slab_size: usize,
    pub slabs: Vec<SlabMetaEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SlabMetaEntry {
    pub z_start: usize,
    pub valid_len: usize,
    pub file: String,
}

pub fn slab_file_name(index: usize) -> String {
    format!("slab_{index:03}.nii.gz")
}

/// Write every slab volume plus the metadata file into `dir`.
pub fn write_slab_set(set: &SlabSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ToolError::io(dir, e))?;
    let mut entries = Vec::with_capacity(set.slabs().len());
    for (i, slab) in set.slabs().iter().enumerate() {
        let file = slab_file_name(i);
        nifti::write_volume(&slab.grid, &dir.join(&file))?;
        entries.push(SlabMetaEntry {
            z_start: slab.z_start,
            valid_len: slab.valid_len,
            file,
        });
    }
    let meta = SlabMeta {
        parent_dims: set.parent_dims(),
        parent_spacing: set.parent_spacing(),
        parent_origin: set.parent_origin(),
        slab_size: set.slab_size(),
        slabs: entries,
    };
    write_json(&meta, &dir.join("slabs.json"))
}

/// Rebuild a slab set from a metadata file; `pred_dir` overrides where
/// the per-slab volumes are read from, so externally predicted slabs can
/// replace the extracted ones.
pub fn read_slab_set(meta_path: &Path, pred_dir: Option<&Path>) -> Result<SlabSet> {
    let meta: SlabMeta = read_json(meta_path)?;
    let base = pred_dir
        .map(Path::to_path_buf)
        .or_else(|| meta_path.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    let slabs = meta
        .slabs
        .iter()
        .map(|entry| {
            let grid = nifti::read_volume(&base.join(&entry.file))?;
            Ok(Slab {
                z_start: entry.z_start,
                valid_len: entry.valid_len,
                grid,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SlabSet::from_parts(
        meta.parent_dims,
        meta.parent_spacing,
        meta.parent_origin,
        meta.slab_size,
        slabs,
    )?)
}

/// Instance-set export: one record per instance with its measurements
/// and station assignments.
#[derive(Debug, Serialize, Deserialize)]
pub struct InstanceExport {
    pub connectivity: u8,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub instances: Vec<InstanceRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: u32,
    pub voxel_count: usize,
    pub volume_ml: f64,
    pub short_axis_mm: f64,
    pub stations: Vec<Station>,
    pub primaries: Vec<Station>,
}

pub fn instance_export(set: &InstanceSet) -> InstanceExport {
    InstanceExport {
        connectivity: set.connectivity().neighbor_count(),
        dims: set.dims(),
        spacing: set.spacing(),
        instances: set
            .instances()
            .iter()
            .map(|inst| InstanceRecord {
                id: inst.id,
                voxel_count: inst.voxel_count(),
                volume_ml: inst.volume_ml,
                short_axis_mm: inst.short_axis_mm,
                stations: inst.stations.iter().copied().collect(),
                primaries: inst.primaries.iter().copied().collect(),
            })
            .collect(),
    }
}

pub fn parse_connectivity(n: u8) -> Result<Connectivity> {
    Ok(Connectivity::from_neighbor_count(n)?)
}
