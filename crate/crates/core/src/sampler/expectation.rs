use crate::error::{Error, Result};
use crate::volume::Vec3;

/// Expected per-axis member-center coordinates for corner members of a
/// uniformly placed parent, measured from the volume boundary on the side
/// facing the partner region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterExpectation {
    /// `(s - p + v) / 2`: the member anchored towards the partner.
    pub adjacent: Vec3,
    /// `(s + p - v) / 2`: the member anchored away from the partner.
    pub distant: Vec3,
}

/// `volume`, `parent` and `member` are physical extents per axis with
/// `volume >= parent > member`.
pub fn center_expectation(volume: Vec3, parent: Vec3, member: Vec3) -> Result<CenterExpectation> {
    for a in 0..3 {
        if !(parent[a] > member[a]) {
            return Err(Error::validation(
                format!("member[{a}]"),
                format!("parent extent {} must exceed member extent {}", parent[a], member[a]),
            ));
        }
        if !(member[a] > 0.0) {
            return Err(Error::validation(format!("member[{a}]"), "must be positive"));
        }
        if volume[a] < parent[a] {
            return Err(Error::validation(
                format!("volume[{a}]"),
                format!("volume extent {} is smaller than parent extent {}", volume[a], parent[a]),
            ));
        }
    }
    Ok(CenterExpectation {
        adjacent: std::array::from_fn(|a| (volume[a] - parent[a] + member[a]) / 2.0),
        distant: std::array::from_fn(|a| (volume[a] + parent[a] - member[a]) / 2.0),
    })
}
