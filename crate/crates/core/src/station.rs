//! IASLC station metadata and label annotations.
//!
//! The regional map defines fourteen numbered mediastinal stations, with
//! 3a/3p kept as distinct codes; nodes that cannot be mapped are `NA`.
//! Grouping never uses laterality, which is stored for completeness only.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::grid::VoxelGrid;

/// One IASLC station code, ordered by map position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Station {
    S1,
    S2,
    S3a,
    S3p,
    S4,
    S5,
    S6,
    S7,
    S8,
    S9,
    S10,
    S11,
    S12,
    S13,
    S14,
    Na,
}

impl Station {
    pub const ALL: [Station; 16] = [
        Station::S1,
        Station::S2,
        Station::S3a,
        Station::S3p,
        Station::S4,
        Station::S5,
        Station::S6,
        Station::S7,
        Station::S8,
        Station::S9,
        Station::S10,
        Station::S11,
        Station::S12,
        Station::S13,
        Station::S14,
        Station::Na,
    ];

    pub fn code(&self) -> &'static str {
        match self {
            Station::S1 => "1",
            Station::S2 => "2",
            Station::S3a => "3a",
            Station::S3p => "3p",
            Station::S4 => "4",
            Station::S5 => "5",
            Station::S6 => "6",
            Station::S7 => "7",
            Station::S8 => "8",
            Station::S9 => "9",
            Station::S10 => "10",
            Station::S11 => "11",
            Station::S12 => "12",
            Station::S13 => "13",
            Station::S14 => "14",
            Station::Na => "NA",
        }
    }

    pub fn parse(s: &str) -> Result<Station> {
        Station::ALL
            .iter()
            .find(|st| st.code() == s || (s == "na" && **st == Station::Na))
            .copied()
            .ok_or_else(|| invalid(format_args!("unknown station code {s:?}")))
    }

    /// Stations kept by the "relevant stations" grouping, which excludes
    /// 1 and NA.
    pub fn is_relevant(&self) -> bool {
        !matches!(self, Station::S1 | Station::Na)
    }
}

impl core::fmt::Display for Station {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.code())
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for Station {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for Station {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = <alloc::string::String as serde::Deserialize>::deserialize(d)?;
        Station::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Laterality {
    Left,
    Right,
    Unspecified,
}

/// Station assignment for one labeled lymph node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StationInfo {
    stations: BTreeSet<Station>,
    primary: Station,
    laterality: Laterality,
}

impl StationInfo {
    pub fn new(
        stations: BTreeSet<Station>,
        primary: Station,
        laterality: Laterality,
    ) -> Result<Self> {
        if stations.is_empty() {
            return Err(invalid("station set must be non-empty (NA alone is legal)"));
        }
        if !stations.contains(&primary) {
            return Err(invalid(format_args!(
                "primary station {primary} not in station set"
            )));
        }
        Ok(Self {
            stations,
            primary,
            laterality,
        })
    }

    /// Single-station assignment.
    pub fn single(station: Station, laterality: Laterality) -> Self {
        let mut set = BTreeSet::new();
        set.insert(station);
        Self {
            stations: set,
            primary: station,
            laterality,
        }
    }

    pub fn stations(&self) -> &BTreeSet<Station> {
        &self.stations
    }

    pub fn primary(&self) -> Station {
        self.primary
    }

    pub fn laterality(&self) -> Laterality {
        self.laterality
    }
}

/// Label grid plus per-label station metadata. Construction enforces the
/// bijection between nonzero grid labels and table entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    labels: VoxelGrid,
    table: BTreeMap<u16, StationInfo>,
}

impl Annotation {
    pub fn new(labels: VoxelGrid, table: BTreeMap<u16, StationInfo>) -> Result<Self> {
        let grid_labels: BTreeSet<u16> = labels
            .as_label()?
            .iter()
            .copied()
            .filter(|&v| v != 0)
            .collect();
        if table.contains_key(&0) {
            return Err(invalid("station table must not contain label 0"));
        }
        let table_labels: BTreeSet<u16> = table.keys().copied().collect();
        let missing_in_table: Vec<u16> = grid_labels.difference(&table_labels).copied().collect();
        let missing_in_grid: Vec<u16> = table_labels.difference(&grid_labels).copied().collect();
        if !missing_in_table.is_empty() || !missing_in_grid.is_empty() {
            return Err(Error::InconsistentAnnotation {
                missing_in_table,
                missing_in_grid,
            });
        }
        Ok(Self { labels, table })
    }

    pub fn labels(&self) -> &VoxelGrid {
        &self.labels
    }

    pub fn station_table(&self) -> &BTreeMap<u16, StationInfo> {
        &self.table
    }

    pub fn label_count(&self) -> usize {
        self.table.len()
    }

    /// Binary foreground mask over all labels.
    pub fn foreground(&self) -> VoxelGrid {
        let src = self.labels.as_label().expect("annotation holds labels");
        let vals: Vec<u8> = src.iter().map(|&v| u8::from(v != 0)).collect();
        VoxelGrid::binary(self.labels.dims(), self.labels.spacing(), vals)
            .expect("same geometry as label grid")
            .with_origin(self.labels.origin())
    }
}
