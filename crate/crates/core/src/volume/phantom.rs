use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Index3, Vec3, Volume};
use crate::error::{Error, Result};
use crate::seed::mix_seed;

/// One Gaussian blob in the phantom layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrganSpec {
    /// Canonical center in normalized `[0, 1]^3` volume coordinates, `(z, y, x)`.
    pub center: Vec3,
    /// Gaussian standard deviation in mm; the profile is truncated at three radii.
    pub radius_mm: f64,
    /// Peak intensity in HU (before superposition with other blobs).
    pub intensity_hu: f64,
    /// Standard deviation of the per-instance center displacement, mm.
    pub jitter_mm: f64,
}

/// Layout and acquisition geometry of the synthetic "phantom body" population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub seed: u64,
    pub shape: Index3,
    pub spacing: Vec3,
    pub background_hu: f64,
    /// Per-instance origins are drawn uniformly from `[-range, range]` mm per axis.
    pub origin_range_mm: f64,
    /// Standard deviation of a whole-body displacement shared by all organs, mm.
    pub global_shift_mm: f64,
    pub organs: Vec<OrganSpec>,
}

impl Default for PhantomSpec {
    /// A 192 mm cube (48 x 64 x 64 voxels at 4 x 3 x 3 mm) holding a broad
    /// soft-tissue body and eight compact organs with distinct intensities.
    fn default() -> Self {
        let mut organs = vec![OrganSpec {
            center: [0.5, 0.5, 0.5],
            radius_mm: 100.0,
            intensity_hu: 40.0,
            jitter_mm: 3.0,
        }];
        let corners = [0.3, 0.7];
        let mut intensity = 120.0;
        for &z in &corners {
            for &y in &corners {
                for &x in &corners {
                    organs.push(OrganSpec {
                        center: [z, y, x],
                        radius_mm: 14.0,
                        intensity_hu: intensity,
                        jitter_mm: 4.0,
                    });
                    intensity += 60.0;
                }
            }
        }
        PhantomSpec {
            seed: 1,
            shape: [48, 64, 64],
            spacing: [4.0, 3.0, 3.0],
            background_hu: -250.0,
            origin_range_mm: 300.0,
            global_shift_mm: 5.0,
            organs,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            if self.shape[axis] == 0 {
                return Err(Error::validation(format!("phantom.shape[{axis}]"), "must be at least 1"));
            }
            if !(self.spacing[axis] > 0.0 && self.spacing[axis].is_finite()) {
                return Err(Error::validation(format!("phantom.spacing[{axis}]"), "must be positive"));
            }
        }
        if !self.background_hu.is_finite() {
            return Err(Error::validation("phantom.background_hu", "must be finite"));
        }
        if !(self.origin_range_mm >= 0.0 && self.origin_range_mm.is_finite()) {
            return Err(Error::validation("phantom.origin_range_mm", "must be non-negative"));
        }
        if !(self.global_shift_mm >= 0.0 && self.global_shift_mm.is_finite()) {
            return Err(Error::validation("phantom.global_shift_mm", "must be non-negative"));
        }
        if self.organs.len() < 3 {
            return Err(Error::validation(
                "phantom.organs",
                format!("at least 3 organs are required, got {}", self.organs.len()),
            ));
        }
        for (i, organ) in self.organs.iter().enumerate() {
            if !(organ.radius_mm > 0.0 && organ.radius_mm.is_finite()) {
                return Err(Error::validation(format!("phantom.organs[{i}].radius_mm"), "must be positive"));
            }
            if !(organ.jitter_mm >= 0.0 && organ.jitter_mm.is_finite()) {
                return Err(Error::validation(format!("phantom.organs[{i}].jitter_mm"), "must be non-negative"));
            }
            if !organ.intensity_hu.is_finite() || organ.center.iter().any(|c| !c.is_finite()) {
                return Err(Error::validation(format!("phantom.organs[{i}]"), "center and intensity must be finite"));
            }
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Renders one phantom instance. The output depends only on `(spec, instance_seed)`;
/// the volume id is the instance seed.
pub fn synth_volume(spec: &PhantomSpec, instance_seed: u64) -> Result<Volume> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, instance_seed));
    let origin: Vec3 = std::array::from_fn(|_| {
        if spec.origin_range_mm > 0.0 {
            rng.random_range(-spec.origin_range_mm..=spec.origin_range_mm)
        } else {
            0.0
        }
    });
    let shift: Vec3 = std::array::from_fn(|_| spec.global_shift_mm * normal(&mut rng));
    let extent: Vec3 = std::array::from_fn(|a| spec.shape[a] as f64 * spec.spacing[a]);

    let [nz, ny, nx] = spec.shape;
    let mut field = vec![0.0f64; nz * ny * nx];
    for organ in &spec.organs {
        let center: Vec3 = std::array::from_fn(|a| {
            organ.center[a] * extent[a] + shift[a] + organ.jitter_mm * normal(&mut rng)
        });
        let amplitude = organ.intensity_hu - spec.background_hu;
        let sigma = organ.radius_mm;
        let reach = 3.0 * sigma;
        let inv_two_var = 1.0 / (2.0 * sigma * sigma);

        // Voxel index range whose centers lie within the truncation box.
        let range = |a: usize| -> (usize, usize) {
            let lo = ((center[a] - reach) / spec.spacing[a] - 0.5).ceil().max(0.0) as usize;
            let hi = ((center[a] + reach) / spec.spacing[a] - 0.5).floor();
            if hi < 0.0 {
                return (1, 0);
            }
            (lo, (hi as usize).min(spec.shape[a] - 1))
        };
        let (z0, z1) = range(0);
        let (y0, y1) = range(1);
        let (x0, x1) = range(2);
        for z in z0..=z1 {
            let dz = (z as f64 + 0.5) * spec.spacing[0] - center[0];
            for y in y0..=y1 {
                let dy = (y as f64 + 0.5) * spec.spacing[1] - center[1];
                let row = (z * ny + y) * nx;
                for x in x0..=x1 {
                    let dx = (x as f64 + 0.5) * spec.spacing[2] - center[2];
                    let r2 = dz * dz + dy * dy + dx * dx;
                    if r2 <= reach * reach {
                        field[row + x] += amplitude * (-r2 * inv_two_var).exp();
                    }
                }
            }
        }
    }
    let voxels = field
        .into_iter()
        .map(|v| (spec.background_hu + v) as f32)
        .collect();
    Volume::new(instance_seed, spec.shape, spec.spacing, origin, true, voxels)
}
