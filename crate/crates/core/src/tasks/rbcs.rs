use serde::{Deserialize, Serialize};

use super::routes::{validate_route, RouteSet};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};
use crate::volume::Vec3;

/// Where the ground-truth displacement enters the route error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteMode {
    /// Predicted steps are summed, then the true endpoint displacement is
    /// subtracted once.
    #[default]
    Aggregate,
    /// The true endpoint displacement is subtracted once per step, `alpha - 1` times.
    Literal,
}

fn delta_vector(tape: &mut Tape<'_>, predicted: &[Var], truth: &[Vec3], route: &[usize], mode: RouteMode) -> Result<Var> {
    let alpha = predicted.len();
    if truth.len() != alpha {
        return Err(Error::validation("centers", format!("{} true centers for {alpha} predictions", truth.len())));
    }
    validate_route(route, alpha)?;
    let mut steps = Vec::with_capacity(2 * (alpha - 1));
    for w in route.windows(2) {
        steps.push((predicted[w[1]], 1.0));
        steps.push((predicted[w[0]], -1.0));
    }
    let travelled = tape.weighted_sum(&steps);
    let (first, last) = (truth[route[0]], truth[route[alpha - 1]]);
    let times = match mode {
        RouteMode::Aggregate => 1.0,
        RouteMode::Literal => (alpha - 1) as f64,
    };
    let target = tape.input((0..3).map(|a| times * (last[a] - first[a])).collect());
    Ok(tape.sub(travelled, target))
}

/// Route error `|sum of predicted steps - true displacement|`.
pub fn rbcs_delta(tape: &mut Tape<'_>, predicted: &[Var], truth: &[Vec3], route: &[usize], mode: RouteMode) -> Result<Var> {
    let d = delta_vector(tape, predicted, truth, route, mode)?;
    Ok(tape.norm(d))
}

/// Mean squared route error over `routes`.
pub fn rbcs_loss(tape: &mut Tape<'_>, predicted: &[Var], truth: &[Vec3], routes: &RouteSet, mode: RouteMode) -> Result<Var> {
    if routes.is_empty() {
        return Err(Error::validation("routes", "need at least one route"));
    }
    let w = 1.0 / routes.len() as f64;
    let mut terms = Vec::with_capacity(routes.len());
    for route in &routes.routes {
        let d = delta_vector(tape, predicted, truth, route, mode)?;
        terms.push((tape.dot(d, d), w));
    }
    Ok(tape.weighted_sum(&terms))
}

/// `|(p_j - p_i) - (t_j - t_i)|` for every ordered pair `i != j`.
pub fn endpoint_errors(predicted: &[Vec3], truth: &[Vec3]) -> Vec<f64> {
    let n = predicted.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let e: f64 = (0..3)
                    .map(|a| {
                        let r = (predicted[j][a] - predicted[i][a]) - (truth[j][a] - truth[i][a]);
                        r * r
                    })
                    .sum();
                out.push(e.sqrt());
            }
        }
    }
    out
}
