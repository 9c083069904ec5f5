use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{block_center, Index3, SubRegion, Vec3};

/// One of the eight corner anchors of a block, encoded as three bits
/// `(z, y, x)` with `z` the most significant. Bit set means the high end of
/// that axis. Lexicographic order of corners is numeric order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Corner(pub u8);

impl Corner {
    pub const ALL: [Corner; 8] = [
        Corner(0),
        Corner(1),
        Corner(2),
        Corner(3),
        Corner(4),
        Corner(5),
        Corner(6),
        Corner(7),
    ];

    #[inline]
    pub fn is_high(self, axis: usize) -> bool {
        self.0 >> (2 - axis) & 1 == 1
    }

    /// Voxel offset of a `member`-sized block anchored at this corner of a `parent`-sized block.
    pub fn offset(self, parent: Index3, member: Index3) -> Index3 {
        std::array::from_fn(|a| if self.is_high(a) { parent[a] - member[a] } else { 0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MemberRole {
    Adj1,
    Adj2,
    Dst1,
    Dst2,
}

impl MemberRole {
    pub const ALL: [MemberRole; 4] = [MemberRole::Adj1, MemberRole::Adj2, MemberRole::Dst1, MemberRole::Dst2];

    /// Which parent (0 or 1) the member is drawn from.
    pub fn parent(self) -> usize {
        match self {
            MemberRole::Adj1 | MemberRole::Dst1 => 0,
            MemberRole::Adj2 | MemberRole::Dst2 => 1,
        }
    }
}

/// A corner-anchored block inside one parent region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemberBlock {
    pub corner: Corner,
    /// Voxel offset of the block within its parent.
    pub offset: Index3,
    pub size: Index3,
    /// Physical center in mm.
    pub center: Vec3,
}

impl MemberBlock {
    /// The block as a normalized box `[lo, hi]` in the parent's unit cube.
    pub fn unit_box(&self, parent: Index3) -> ([f64; 3], [f64; 3]) {
        let lo = std::array::from_fn(|a| self.offset[a] as f64 / parent[a] as f64);
        let hi = std::array::from_fn(|a| (self.offset[a] + self.size[a]) as f64 / parent[a] as f64);
        (lo, hi)
    }
}

/// Closest and antipodal member pairs drawn from two parent regions.
///
/// Members are stored in the order adj1, adj2, dst1, dst2; members 1 come
/// from the first parent and members 2 from the second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledUnit {
    /// Indices of the parent regions within their batch.
    pub parents: [usize; 2],
    pub parent_size: Index3,
    pub members: [MemberBlock; 4],
}

impl CoupledUnit {
    pub fn member(&self, role: MemberRole) -> &MemberBlock {
        &self.members[role as usize]
    }

    pub fn adjacent_distance(&self) -> f64 {
        distance(self.members[0].center, self.members[1].center)
    }

    pub fn distant_distance(&self) -> f64 {
        distance(self.members[2].center, self.members[3].center)
    }

    pub fn with_parents(mut self, parents: [usize; 2]) -> Self {
        self.parents = parents;
        self
    }

    /// Copies a member's voxels out of its parent region.
    pub fn member_region(&self, role: MemberRole, parent: &SubRegion) -> SubRegion {
        let m = self.member(role);
        let [_, py, px] = parent.size;
        let mut voxels = Vec::with_capacity(m.size.iter().product());
        for z in m.offset[0]..m.offset[0] + m.size[0] {
            for y in m.offset[1]..m.offset[1] + m.size[1] {
                let row = (z * py + y) * px;
                voxels.extend_from_slice(&parent.voxels[row + m.offset[2]..row + m.offset[2] + m.size[2]]);
            }
        }
        let start = std::array::from_fn(|a| parent.start[a] + m.offset[a]);
        SubRegion {
            volume_id: parent.volume_id,
            start,
            size: m.size,
            center: m.center,
            spacing: parent.spacing,
            origin: parent.origin,
            voxels,
        }
    }
}

fn distance(a: Vec3, b: Vec3) -> f64 {
    squared_distance(a, b).sqrt()
}

fn squared_distance(a: Vec3, b: Vec3) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

fn member(parent: &SubRegion, corner: Corner, size: Index3) -> MemberBlock {
    let offset = corner.offset(parent.size, size);
    let start = std::array::from_fn(|a| parent.start[a] + offset[a]);
    MemberBlock {
        corner,
        offset,
        size,
        center: block_center(parent.origin, parent.spacing, start, size),
    }
}

/// Searches the 64 cross-parent pairs of corner-anchored `member`-sized blocks
/// for the closest pair (adj) and the farthest pair (dst). Distances are
/// physical; ties go to the lexicographically first `(corner1, corner2)`.
pub fn build_coupled_unit(r1: &SubRegion, r2: &SubRegion, member_size: Index3) -> Result<CoupledUnit> {
    if r1.volume_id != r2.volume_id || r1.spacing != r2.spacing || r1.origin != r2.origin {
        return Err(Error::validation("parents", "coupled parents must come from the same volume"));
    }
    if r1.size != r2.size {
        return Err(Error::validation("parents", "coupled parents must have equal sizes"));
    }
    for axis in 0..3 {
        if member_size[axis] == 0 || member_size[axis] > r1.size[axis] {
            return Err(Error::validation(
                format!("member_size[{axis}]"),
                format!("must be in 1..={}, got {}", r1.size[axis], member_size[axis]),
            ));
        }
    }
    let blocks1 = Corner::ALL.map(|c| member(r1, c, member_size));
    let blocks2 = Corner::ALL.map(|c| member(r2, c, member_size));

    let mut closest = (0, 0, f64::INFINITY);
    let mut farthest = (0, 0, f64::NEG_INFINITY);
    for (i, b1) in blocks1.iter().enumerate() {
        for (j, b2) in blocks2.iter().enumerate() {
            let d = squared_distance(b1.center, b2.center);
            if d < closest.2 {
                closest = (i, j, d);
            }
            if d > farthest.2 {
                farthest = (i, j, d);
            }
        }
    }
    Ok(CoupledUnit {
        parents: [0, 1],
        parent_size: r1.size,
        members: [blocks1[closest.0], blocks2[closest.1], blocks1[farthest.0], blocks2[farthest.1]],
    })
}

/// One unit per unordered parent pair `(i, j)`, `i < j`, in lexicographic order.
pub fn build_units(regions: &[SubRegion], member_size: Index3) -> Result<Vec<CoupledUnit>> {
    let mut units = Vec::with_capacity(regions.len() * regions.len().saturating_sub(1) / 2);
    for i in 0..regions.len() {
        for j in i + 1..regions.len() {
            units.push(build_coupled_unit(&regions[i], &regions[j], member_size)?.with_parents([i, j]));
        }
    }
    Ok(units)
}
