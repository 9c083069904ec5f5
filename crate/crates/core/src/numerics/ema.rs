use super::params::ParamVector;
use crate::error::{Error, Result};

/// Momentum average `target <- m * target + (1 - m) * online`, elementwise.
///
/// Evaluated as `target + (1 - m) * (online - target)` and clamped to the
/// interval spanned by the two inputs, so equal inputs and `m = 1` leave the
/// target bit-identical and every result is a convex combination.
pub fn ema_update(target: &mut ParamVector, online: &ParamVector, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::validation("momentum", format!("must lie in [0, 1], got {m}")));
    }
    if !target.same_layout(online) {
        return Err(Error::validation("momentum", "target and online parameters have different segment tables"));
    }
    let rate = 1.0 - m;
    for (t, &o) in target.values_mut().iter_mut().zip(online.values()) {
        let (lo, hi) = if *t <= o { (*t, o) } else { (o, *t) };
        *t = (*t + rate * (o - *t)).clamp(lo, hi);
    }
    Ok(())
}
