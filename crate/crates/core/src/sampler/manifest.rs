use serde::{Deserialize, Serialize};

use crate::volume::{Index3, SubRegion, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub start: Index3,
    pub size: Index3,
    pub center: Vec3,
}

/// Placement record for one volume's sampled regions, exported as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionManifest {
    pub volume_id: u64,
    pub regions: Vec<RegionRecord>,
}

impl RegionManifest {
    pub fn from_regions(volume_id: u64, regions: &[SubRegion]) -> Self {
        RegionManifest {
            volume_id,
            regions: regions
                .iter()
                .map(|r| RegionRecord {
                    start: r.start,
                    size: r.size,
                    center: r.center,
                })
                .collect(),
        }
    }
}
