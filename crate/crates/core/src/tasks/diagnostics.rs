use serde::Serialize;

use super::crsc::crsc_infer;
use super::gmp::predicted_gaps;
use super::routes::RouteSet;
use super::total::{BatchLosses, BatchTargets};
use crate::numerics::{kernels, Tape};
use crate::volume::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapPoint {
    pub truth: f64,
    pub predicted: f64,
}

/// One step of a route: where it starts and the predicted and true displacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RouteArrow {
    pub start: Vec3,
    pub predicted: Vec3,
    pub truth: Vec3,
}

/// Per-iteration diagnostics: losses, similarity accuracy, gap scatter and
/// the arrows of the first route.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: u64,
    pub l_crsc: f64,
    pub l_gmp: f64,
    pub l_rbcs: f64,
    pub l_total: f64,
    pub crsc_accuracy: f64,
    /// `(cos_adj, cos_dst)` per unit.
    pub crsc_pairs: Vec<(f64, f64)>,
    pub gap_points: Vec<GapPoint>,
    pub route_arrows: Vec<RouteArrow>,
}

fn point(tape: &Tape<'_>, v: crate::numerics::Var) -> Vec3 {
    let x = tape.value(v);
    [x[0], x[1], x[2]]
}

impl IterationRecord {
    pub fn collect(tape: &Tape<'_>, iter: u64, losses: &BatchLosses, targets: &BatchTargets, routes: &RouteSet) -> Self {
        let crsc_pairs: Vec<(f64, f64)> = losses
            .units
            .iter()
            .map(|u| {
                let (a1, a2) = u.adjacent();
                let (d1, d2) = u.distant();
                (
                    kernels::cosine(tape.value(a1), tape.value(a2)).0,
                    kernels::cosine(tape.value(d1), tape.value(d2)).0,
                )
            })
            .collect();
        let correct = crsc_pairs.iter().filter(|(a, d)| crsc_infer(*a, *d).correct()).count();
        let crsc_accuracy = correct as f64 / crsc_pairs.len().max(1) as f64;

        let pred = predicted_gaps(tape, &losses.gap_positions);
        let n = pred.len();
        let mut gap_points = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                gap_points.push(GapPoint {
                    truth: targets.gaps.get(i, j),
                    predicted: pred.get(i, j),
                });
            }
        }

        let centers: Vec<Vec3> = losses.route_positions.iter().map(|&v| point(tape, v)).collect();
        let route_arrows = routes
            .routes
            .first()
            .map(|r| {
                r.windows(2)
                    .map(|w| {
                        let (a, b) = (w[0], w[1]);
                        RouteArrow {
                            start: targets.centers[a],
                            predicted: std::array::from_fn(|k| centers[b][k] - centers[a][k]),
                            truth: std::array::from_fn(|k| targets.centers[b][k] - targets.centers[a][k]),
                        }
                    })
                    .collect()
            })
            .unwrap_or_default();

        IterationRecord {
            iter,
            l_crsc: tape.scalar(losses.crsc),
            l_gmp: tape.scalar(losses.gmp),
            l_rbcs: tape.scalar(losses.rbcs),
            l_total: tape.scalar(losses.total),
            crsc_accuracy,
            crsc_pairs,
            gap_points,
            route_arrows,
        }
    }
}
