use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};
use crate::sampler::GapMatrix;
use crate::volume::Vec3;

/// Pairwise distances between predicted positions.
pub fn predicted_gaps(tape: &Tape<'_>, positions: &[Var]) -> GapMatrix {
    let points: Vec<Vec3> = positions
        .iter()
        .map(|&p| {
            let v = tape.value(p);
            [v[0], v[1], v[2]]
        })
        .collect();
    GapMatrix::from_points(&points)
}

/// `(1/a^2) sum_{i != j} ((|p_i - p_j| - g_ij) / (g_ij + eps))^2`.
pub fn gmp_loss(tape: &mut Tape<'_>, positions: &[Var], truth: &GapMatrix, eps: f64) -> Result<Var> {
    let n = positions.len();
    if n != truth.len() {
        return Err(Error::validation(
            "positions",
            format!("{n} predictions for a {}x{} gap matrix", truth.len(), truth.len()),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::validation("gap_eps_mm", "must be positive"));
    }
    if n < 2 {
        return Err(Error::validation("alpha", "need at least two positions"));
    }
    // Each unordered pair stands for both ordered pairs.
    let w = 2.0 / (n * n) as f64;
    let mut terms = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let g = truth.get(i, j);
            let diff = tape.sub(positions[i], positions[j]);
            let d = tape.norm(diff);
            let r = tape.shift(d, -g);
            let r = tape.scale(r, 1.0 / (g + eps));
            let sq = tape.mul(r, r);
            terms.push((sq, w));
        }
    }
    Ok(tape.weighted_sum(&terms))
}
