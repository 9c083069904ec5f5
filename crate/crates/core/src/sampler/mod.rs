//! Sub-region placement and the geometric ground truth derived from it.

mod coupled;
mod expectation;
mod gap;
mod manifest;

pub use coupled::{build_coupled_unit, build_units, Corner, CoupledUnit, MemberBlock, MemberRole};
pub use expectation::{center_expectation, CenterExpectation};
pub use gap::{gap_ground_truth, GapMatrix};
pub use manifest::{RegionManifest, RegionRecord};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{extract, foreground_fraction, Index3, SubRegion, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Rejection-sampled uniform starts; regions may overlap.
    #[default]
    Random,
    /// Non-overlapping grid of patch-sized tiles anchored at the volume origin.
    Tiling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingParams {
    pub alpha: usize,
    pub patch: Index3,
    /// Minimum fraction of above-threshold voxels for a placement to count.
    pub min_foreground: f64,
    pub threshold: f64,
    pub max_attempts: usize,
    pub placement: Placement,
}

impl SamplingParams {
    pub fn new(alpha: usize, patch: Index3) -> Self {
        SamplingParams {
            alpha,
            patch,
            min_foreground: 0.25,
            threshold: 0.05,
            max_attempts: 10_000,
            placement: Placement::Random,
        }
    }
}

/// Draws `alpha` foreground-rich patches from `volume`.
pub fn sample_subregions<R: Rng + ?Sized>(
    volume: &Volume,
    params: &SamplingParams,
    rng: &mut R,
) -> Result<Vec<SubRegion>> {
    if params.alpha < 2 {
        return Err(Error::validation("alpha", format!("must be at least 2, got {}", params.alpha)));
    }
    volume.check_region([0; 3], params.patch)?;
    match params.placement {
        Placement::Random => sample_random(volume, params, rng),
        Placement::Tiling => sample_tiles(volume, params, rng),
    }
}

fn sample_random<R: Rng + ?Sized>(
    volume: &Volume,
    params: &SamplingParams,
    rng: &mut R,
) -> Result<Vec<SubRegion>> {
    let shape = volume.shape();
    let mut regions = Vec::with_capacity(params.alpha);
    let mut attempts = 0;
    while regions.len() < params.alpha {
        if attempts == params.max_attempts {
            return Err(Error::SamplingExhausted {
                attempts,
                found: regions.len(),
                wanted: params.alpha,
            });
        }
        attempts += 1;
        let start: Index3 = std::array::from_fn(|a| rng.random_range(0..=shape[a] - params.patch[a]));
        if foreground_fraction(volume, start, params.patch, params.threshold)? >= params.min_foreground {
            regions.push(extract(volume, start, params.patch)?);
        }
    }
    Ok(regions)
}

fn sample_tiles<R: Rng + ?Sized>(
    volume: &Volume,
    params: &SamplingParams,
    rng: &mut R,
) -> Result<Vec<SubRegion>> {
    let shape = volume.shape();
    let counts: Index3 = std::array::from_fn(|a| shape[a] / params.patch[a]);
    let mut valid = Vec::new();
    let mut attempts = 0;
    for z in 0..counts[0] {
        for y in 0..counts[1] {
            for x in 0..counts[2] {
                attempts += 1;
                let start = [z * params.patch[0], y * params.patch[1], x * params.patch[2]];
                if foreground_fraction(volume, start, params.patch, params.threshold)? >= params.min_foreground {
                    valid.push(start);
                }
            }
        }
    }
    if valid.len() < params.alpha {
        return Err(Error::SamplingExhausted {
            attempts,
            found: valid.len(),
            wanted: params.alpha,
        });
    }
    index::sample(rng, valid.len(), params.alpha)
        .into_iter()
        .map(|i| extract(volume, valid[i], params.patch))
        .collect()
}
