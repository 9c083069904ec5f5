//! Voxel volumes with physical geometry, intensity windowing, foreground
//! statistics and sub-region extraction.
//!
//! All coordinates are ordered `(z, y, x)`. Voxel `i` along an axis covers the
//! physical interval `origin + [i, i + 1) * spacing`, so a block starting at
//! `start` with `size` voxels has its center at `origin + (start + size / 2) * spacing`.

mod io;
mod phantom;

pub use io::{load_raw, save_raw, sidecar_path, RawMetadata};
pub use phantom::{synth_volume, OrganSpec, PhantomSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical coordinates or extents in millimetres, `(z, y, x)`.
pub type Vec3 = [f64; 3];
/// Voxel indices or voxel extents, `(z, y, x)`.
pub type Index3 = [usize; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    id: u64,
    shape: Index3,
    spacing: Vec3,
    origin: Vec3,
    hu: bool,
    voxels: Vec<f32>,
}

impl Volume {
    /// Builds a volume after checking shape, spacing, storage length and
    /// finiteness of every intensity.
    pub fn new(
        id: u64,
        shape: Index3,
        spacing: Vec3,
        origin: Vec3,
        hu: bool,
        voxels: Vec<f32>,
    ) -> Result<Self> {
        for axis in 0..3 {
            if shape[axis] == 0 {
                return Err(Error::validation(
                    format!("shape[{axis}]"),
                    "must be at least 1",
                ));
            }
            if !(spacing[axis] > 0.0 && spacing[axis].is_finite()) {
                return Err(Error::validation(
                    format!("spacing[{axis}]"),
                    format!("must be a positive finite length, got {}", spacing[axis]),
                ));
            }
            if !origin[axis].is_finite() {
                return Err(Error::validation(format!("origin[{axis}]"), "must be finite"));
            }
        }
        let expected = shape[0] * shape[1] * shape[2];
        if voxels.len() != expected {
            return Err(Error::validation(
                "voxels",
                format!("expected {expected} values, got {}", voxels.len()),
            ));
        }
        if let Some(pos) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(
                "voxels",
                format!("non-finite intensity at linear index {pos}"),
            ));
        }
        Ok(Volume {
            id,
            shape,
            spacing,
            origin,
            hu,
            voxels,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn shape(&self) -> Index3 {
        self.shape
    }

    pub fn spacing(&self) -> Vec3 {
        self.spacing
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    /// True when intensities are raw HU-like values, false once windowed.
    pub fn is_hu(&self) -> bool {
        self.hu
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// Physical extent of the whole grid in mm.
    pub fn extent_mm(&self) -> Vec3 {
        std::array::from_fn(|a| self.shape[a] as f64 * self.spacing[a])
    }

    #[inline]
    pub fn linear_index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.shape[1] + y) * self.shape[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[self.linear_index(z, y, x)]
    }

    /// Checks that `start + size` fits inside the grid on every axis.
    pub fn check_region(&self, start: Index3, size: Index3) -> Result<()> {
        for axis in 0..3 {
            if size[axis] == 0 {
                return Err(Error::validation(
                    format!("size[{axis}]"),
                    "region extents must be at least 1",
                ));
            }
            if start[axis] + size[axis] > self.shape[axis] {
                return Err(Error::OutOfBounds {
                    axis,
                    start: start[axis],
                    size: size[axis],
                    extent: self.shape[axis],
                });
            }
        }
        Ok(())
    }

    /// Physical center of a voxel block, mm.
    pub fn block_center(&self, start: Index3, size: Index3) -> Vec3 {
        block_center(self.origin, self.spacing, start, size)
    }

    fn region_values(&self, start: Index3, size: Index3) -> impl Iterator<Item = f32> + '_ {
        (start[0]..start[0] + size[0]).flat_map(move |z| {
            (start[1]..start[1] + size[1]).flat_map(move |y| {
                let row = self.linear_index(z, y, start[2]);
                self.voxels[row..row + size[2]].iter().copied()
            })
        })
    }
}

pub(crate) fn block_center(origin: Vec3, spacing: Vec3, start: Index3, size: Index3) -> Vec3 {
    std::array::from_fn(|a| origin[a] + (start[a] as f64 + size[a] as f64 / 2.0) * spacing[a])
}

/// Intensity window in HU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub level: f64,
    pub width: f64,
}

impl Default for WindowSpec {
    /// Abdominal CT window: level 200 HU, width 800 HU.
    fn default() -> Self {
        WindowSpec {
            level: 200.0,
            width: 800.0,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::validation(
                "window.width",
                format!("must be positive, got {}", self.width),
            ));
        }
        if !self.level.is_finite() {
            return Err(Error::validation("window.level", "must be finite"));
        }
        Ok(())
    }

    /// Maps one intensity into `[0, 1]`.
    #[inline]
    pub fn normalize(&self, value: f64) -> f64 {
        let lower = self.level - self.width / 2.0;
        ((value - lower) / self.width).clamp(0.0, 1.0)
    }
}

/// Normalizes every voxel by `w`; geometry is carried over unchanged.
pub fn apply_window(volume: &Volume, window: &WindowSpec) -> Result<Volume> {
    window.validate()?;
    let voxels = volume
        .voxels
        .iter()
        .map(|&v| window.normalize(f64::from(v)) as f32)
        .collect();
    Ok(Volume {
        voxels,
        hu: false,
        ..volume.clone()
    })
}

/// Fraction of voxels in the block whose value is strictly above `threshold`.
pub fn foreground_fraction(
    volume: &Volume,
    start: Index3,
    size: Index3,
    threshold: f64,
) -> Result<f64> {
    volume.check_region(start, size)?;
    let total = size[0] * size[1] * size[2];
    let above = volume
        .region_values(start, size)
        .filter(|&v| f64::from(v) > threshold)
        .count();
    Ok(above as f64 / total as f64)
}

/// A copied voxel block together with its placement and physical center.
#[derive(Debug, Clone, PartialEq)]
pub struct SubRegion {
    pub volume_id: u64,
    pub start: Index3,
    pub size: Index3,
    pub center: Vec3,
    pub spacing: Vec3,
    pub origin: Vec3,
    pub voxels: Vec<f32>,
}

impl SubRegion {
    /// Center recomputed from the stored placement, for consistency checks.
    pub fn recompute_center(&self) -> Vec3 {
        block_center(self.origin, self.spacing, self.start, self.size)
    }

    /// Physical extent of the block in mm.
    pub fn extent_mm(&self) -> Vec3 {
        std::array::from_fn(|a| self.size[a] as f64 * self.spacing[a])
    }
}

pub fn extract(volume: &Volume, start: Index3, size: Index3) -> Result<SubRegion> {
    volume.check_region(start, size)?;
    Ok(SubRegion {
        volume_id: volume.id,
        start,
        size,
        center: volume.block_center(start, size),
        spacing: volume.spacing,
        origin: volume.origin,
        voxels: volume.region_values(start, size).collect(),
    })
}

/// Converts a physical extent to voxels, rounding to the nearest integer and
/// never going below one voxel.
pub fn mm_to_voxels(extent_mm: Vec3, spacing: Vec3) -> Index3 {
    std::array::from_fn(|a| ((extent_mm[a] / spacing[a]).round() as usize).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn filled(shape: Index3, spacing: Vec3, value: f32) -> Volume {
        Volume::new(
            0,
            shape,
            spacing,
            [0.0; 3],
            false,
            vec![value; shape[0] * shape[1] * shape[2]],
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Volume::new(0, [0, 1, 1], [1.0; 3], [0.0; 3], true, vec![]).is_err());
        assert!(Volume::new(0, [1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3], true, vec![0.0]).is_err());
        assert!(Volume::new(0, [1, 1, 2], [1.0; 3], [0.0; 3], true, vec![0.0]).is_err());
        assert!(Volume::new(0, [1, 1, 1], [1.0; 3], [0.0; 3], true, vec![f32::NAN]).is_err());
    }

    #[test]
    fn window_edges_and_center() {
        let w = WindowSpec::default();
        assert_eq!(w.normalize(-200.0), 0.0);
        assert_eq!(w.normalize(600.0), 1.0);
        assert_eq!(w.normalize(200.0), 0.5);
        assert_eq!(w.normalize(-1000.0), 0.0);
        assert_eq!(w.normalize(3000.0), 1.0);
        assert!(WindowSpec { level: 0.0, width: 0.0 }.validate().is_err());
    }

    #[test]
    fn window_keeps_geometry() {
        let v = Volume::new(3, [1, 1, 3], [2.0, 1.0, 1.0], [5.0, 6.0, 7.0], true, vec![-200.0, 200.0, 600.0]).unwrap();
        let n = apply_window(&v, &WindowSpec::default()).unwrap();
        assert_eq!(n.voxels(), &[0.0, 0.5, 1.0]);
        assert_eq!((n.shape(), n.spacing(), n.origin(), n.id()), (v.shape(), v.spacing(), v.origin(), 3));
        assert!(!n.is_hu());
    }

    #[test]
    fn foreground_fraction_counts() {
        let zeros = filled([4, 4, 4], [1.0; 3], 0.0);
        assert_eq!(foreground_fraction(&zeros, [0; 3], [4; 3], 0.05).unwrap(), 0.0);
        let ones = filled([4, 4, 4], [1.0; 3], 1.0);
        assert_eq!(foreground_fraction(&ones, [0; 3], [4; 3], 0.05).unwrap(), 1.0);

        // Half-filled: voxels with x < 2 are on. Count directly.
        let mut voxels = vec![0.0f32; 64];
        let mut on = 0;
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    if x < 2 {
                        voxels[(z * 4 + y) * 4 + x] = 1.0;
                        on += 1;
                    }
                }
            }
        }
        let half = Volume::new(0, [4, 4, 4], [1.0; 3], [0.0; 3], false, voxels).unwrap();
        let expected = on as f64 / 64.0;
        assert_eq!(expected, 0.5);
        assert_eq!(foreground_fraction(&half, [0; 3], [4; 3], 0.05).unwrap(), expected);
    }

    #[test]
    fn out_of_bounds_names_axis() {
        let v = filled([4, 5, 6], [1.0; 3], 0.0);
        match foreground_fraction(&v, [0, 3, 0], [1, 3, 1], 0.0) {
            Err(Error::OutOfBounds { axis: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match extract(&v, [0, 0, 5], [1, 1, 2]) {
            Err(Error::OutOfBounds { axis: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn extract_centers() {
        let v = filled([8, 8, 8], [1.0; 3], 0.0);
        let whole = extract(&v, [0; 3], [8; 3]).unwrap();
        assert_eq!(whole.center, [4.0; 3]);
        let r = extract(&v, [2; 3], [2; 3]).unwrap();
        assert_eq!(r.center, [3.0; 3]);
        assert_eq!(r.voxels.len(), 8);

        let aniso = filled([8, 8, 8], [2.0, 1.0, 1.0], 0.0);
        let r = extract(&aniso, [2; 3], [2; 3]).unwrap();
        let oracle: Vec3 = std::array::from_fn(|a| (2.0 + 2.0 / 2.0) * [2.0, 1.0, 1.0][a]);
        assert_eq!(r.center, oracle);
        assert_eq!(r.center, [6.0, 3.0, 3.0]);
    }

    #[test]
    fn extract_copies_the_right_block() {
        let voxels: Vec<f32> = (0..4 * 5 * 6).map(|i| i as f32).collect();
        let v = Volume::new(0, [4, 5, 6], [1.0; 3], [0.0; 3], false, voxels).unwrap();
        let r = extract(&v, [1, 2, 3], [2, 2, 2]).unwrap();
        let mut expected = Vec::new();
        for z in 1..3 {
            for y in 2..4 {
                for x in 3..5 {
                    expected.push(v.get(z, y, x));
                }
            }
        }
        assert_eq!(r.voxels, expected);
    }

    #[test]
    fn mm_conversion_rounds_and_floors_at_one() {
        assert_eq!(mm_to_voxels([96.0; 3], [4.0, 3.0, 3.0]), [24, 32, 32]);
        assert_eq!(mm_to_voxels([32.0; 3], [4.0, 3.0, 3.0]), [8, 11, 11]);
        assert_eq!(mm_to_voxels([0.1; 3], [1.0; 3]), [1, 1, 1]);
    }

    proptest! {
        #[test]
        fn window_is_monotone(a in -2000.0f64..2000.0, b in -2000.0f64..2000.0, level in -500.0f64..500.0, width in 1.0f64..2000.0) {
            let w = WindowSpec { level, width };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(w.normalize(lo) <= w.normalize(hi));
        }

        #[test]
        fn unit_window_is_identity_on_unit_interval(x in 0.0f64..=1.0) {
            let w = WindowSpec { level: 0.5, width: 1.0 };
            prop_assert!((w.normalize(x) - x).abs() <= 1e-15);
            prop_assert_eq!(w.normalize(w.normalize(x)), w.normalize(x));
        }

        #[test]
        fn center_round_trips(
            start in proptest::array::uniform3(0usize..20),
            size in proptest::array::uniform3(1usize..10),
            spacing in proptest::array::uniform3(0.1f64..5.0),
            origin in proptest::array::uniform3(-500.0f64..500.0),
        ) {
            let shape: Index3 = std::array::from_fn(|a| start[a] + size[a]);
            let v = Volume::new(1, shape, spacing, origin, true, vec![0.0; shape.iter().product()]).unwrap();
            let r = extract(&v, start, size).unwrap();
            let again = r.recompute_center();
            for a in 0..3 {
                let scale = r.center[a].abs().max(1.0);
                prop_assert!((again[a] - r.center[a]).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn foreground_fraction_ignores_voxel_order(
            values in proptest::collection::vec(0.0f32..1.0, 27),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let v = Volume::new(0, [3, 3, 3], [1.0; 3], [0.0; 3], false, values.clone()).unwrap();
            let mut shuffled = values;
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let s = Volume::new(0, [3, 3, 3], [1.0; 3], [0.0; 3], false, shuffled).unwrap();
            prop_assert_eq!(
                foreground_fraction(&v, [0; 3], [3; 3], 0.5).unwrap(),
                foreground_fraction(&s, [0; 3], [3; 3], 0.5).unwrap()
            );
        }
    }
}
