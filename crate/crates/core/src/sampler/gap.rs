use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{SubRegion, Vec3};

/// Square matrix of pairwise Euclidean distances, mm, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapMatrix {
    n: usize,
    values: Vec<f64>,
}

impl GapMatrix {
    pub fn from_points(points: &[Vec3]) -> Self {
        let n = points.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = (0..3)
                    .map(|a| (points[i][a] - points[j][a]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        GapMatrix { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Distances between the physical centers of same-volume regions.
pub fn gap_ground_truth(regions: &[SubRegion]) -> Result<GapMatrix> {
    if regions.len() < 2 {
        return Err(Error::validation("regions", "at least two regions are required"));
    }
    if regions.iter().any(|r| r.volume_id != regions[0].volume_id) {
        return Err(Error::validation("regions", "all regions must come from one volume"));
    }
    let centers: Vec<Vec3> = regions.iter().map(|r| r.center).collect();
    Ok(GapMatrix::from_points(&centers))
}
