use serde::{Deserialize, Serialize};

use super::batch::EncodedBatch;
use super::crsc::{crsc_loss, unit_embeddings, UnitEmbeddings};
use super::gmp::gmp_loss;
use super::rbcs::{rbcs_loss, RouteMode};
use super::routes::RouteSet;
use crate::encoder::{head_position, Encoder, Head};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};
use crate::sampler::{build_units, gap_ground_truth, CoupledUnit, GapMatrix};
use crate::volume::{Index3, SubRegion, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub crsc: f64,
    pub gmp: f64,
    pub rbcs: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            crsc: 1.0,
            gmp: 1.0,
            rbcs: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub weights: LossWeights,
    pub gap_eps_mm: f64,
    /// Maximum number of routes per batch.
    pub route_cap: usize,
    pub route_mode: RouteMode,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            weights: LossWeights::default(),
            gap_eps_mm: 1.0,
            route_cap: 64,
            route_mode: RouteMode::Aggregate,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.weights;
        for (name, v) in [("tasks.weights.crsc", w.crsc), ("tasks.weights.gmp", w.gmp), ("tasks.weights.rbcs", w.rbcs)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(name, "must be finite and non-negative"));
            }
        }
        if !(self.gap_eps_mm > 0.0 && self.gap_eps_mm.is_finite()) {
            return Err(Error::validation("tasks.gap_eps_mm", "must be positive"));
        }
        if self.route_cap == 0 {
            return Err(Error::validation("tasks.route_cap", "must be at least 1"));
        }
        Ok(())
    }
}

/// Geometric ground truth for one batch of regions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchTargets {
    pub units: Vec<CoupledUnit>,
    pub gaps: GapMatrix,
    pub centers: Vec<Vec3>,
}

impl BatchTargets {
    pub fn from_regions(regions: &[SubRegion], member_size: Index3) -> Result<Self> {
        Ok(BatchTargets {
            units: build_units(regions, member_size)?,
            gaps: gap_ground_truth(regions)?,
            centers: regions.iter().map(|r| r.center).collect(),
        })
    }
}

/// Loss nodes and intermediate outputs of one batch.
#[derive(Debug, Clone)]
pub struct BatchLosses {
    pub crsc: Var,
    pub gmp: Var,
    pub rbcs: Var,
    pub total: Var,
    pub units: Vec<UnitEmbeddings>,
    /// Gap-head positions in mm.
    pub gap_positions: Vec<Var>,
    /// Route-head centers in mm.
    pub route_positions: Vec<Var>,
}

/// Weighted sum of the three task losses.
pub fn total_loss(tape: &mut Tape<'_>, components: [Var; 3], weights: LossWeights) -> Var {
    tape.weighted_sum(&[
        (components[0], weights.crsc),
        (components[1], weights.gmp),
        (components[2], weights.rbcs),
    ])
}

/// Applies both heads and all three objectives to an encoded batch.
pub fn batch_losses(
    tape: &mut Tape<'_>,
    encoder: &Encoder,
    batch: &EncodedBatch,
    targets: &BatchTargets,
    routes: &RouteSet,
    config: &TaskConfig,
) -> Result<BatchLosses> {
    let enc = encoder.config();
    let units: Vec<UnitEmbeddings> = targets
        .units
        .iter()
        .map(|u| unit_embeddings(tape, encoder, batch, u))
        .collect();
    let crsc = crsc_loss(tape, &units)?;
    let gap_positions = batch
        .patches
        .iter()
        .map(|&e| head_position(tape, enc, Head::Gap, e))
        .collect::<Result<Vec<_>>>()?;
    let gmp = gmp_loss(tape, &gap_positions, &targets.gaps, config.gap_eps_mm)?;
    let route_positions = batch
        .patches
        .iter()
        .map(|&e| head_position(tape, enc, Head::Route, e))
        .collect::<Result<Vec<_>>>()?;
    let rbcs = rbcs_loss(tape, &route_positions, &targets.centers, routes, config.route_mode)?;
    let total = total_loss(tape, [crsc, gmp, rbcs], config.weights);
    Ok(BatchLosses {
        crsc,
        gmp,
        rbcs,
        total,
        units,
        gap_positions,
        route_positions,
    })
}
