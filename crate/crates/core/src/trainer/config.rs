use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::numerics::StepRule;
use crate::sampler::{Placement, SamplingParams};
use crate::tasks::TaskConfig;
use crate::volume::{mm_to_voxels, Index3, PhantomSpec, Vec3, WindowSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Regions per volume.
    pub alpha: usize,
    /// Parent region extent in mm; converted to voxels with the phantom spacing.
    pub patch_mm: Vec3,
    /// Coupled-unit member extent in mm.
    pub member_mm: Vec3,
    pub min_foreground: f64,
    pub threshold: f64,
    pub max_attempts: usize,
    pub placement: Placement,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            alpha: 8,
            patch_mm: [96.0; 3],
            member_mm: [32.0; 3],
            min_foreground: 0.25,
            threshold: 0.05,
            max_attempts: 10_000,
            placement: Placement::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Number of phantom instances generated once and reused for training.
    pub pool_size: usize,
    /// Volumes per optimizer step; their losses are averaged.
    pub volumes_per_step: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            pool_size: 64,
            volumes_per_step: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Output directory; falls back to the tool's default root when unset.
    pub dir: Option<String>,
    pub metrics: String,
    pub checkpoint: String,
    /// Write an intermediate checkpoint every this many steps; 0 keeps only the final one.
    pub checkpoint_every: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            metrics: "metrics.csv".into(),
            checkpoint: "checkpoint.vxck".into(),
            checkpoint_every: 0,
        }
    }
}

/// Full description of a pretraining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub iterations: u64,
    /// EMA coefficient of the momentum twin.
    pub momentum: f64,
    pub sampling: SamplingConfig,
    pub data: DataConfig,
    pub window: WindowSpec,
    pub phantom: PhantomSpec,
    pub encoder: EncoderConfig,
    pub tasks: TaskConfig,
    pub optimizer: StepRule,
    pub output: OutputConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            iterations: 20_000,
            momentum: 0.99,
            sampling: SamplingConfig::default(),
            data: DataConfig::default(),
            window: WindowSpec::default(),
            phantom: PhantomSpec::default(),
            encoder: EncoderConfig::default(),
            tasks: TaskConfig::default(),
            optimizer: StepRule::default(),
            output: OutputConfig::default(),
        }
    }
}

fn config_error(reason: impl std::fmt::Display) -> Error {
    Error::validation("config", reason.to_string())
}

/// Sets `key` (dotted path) in `table` to `raw`, parsed as a TOML value when
/// possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::validation("override", format!("`{assignment}` is not key=value")))?;
    let (key, raw) = (key.trim(), raw.trim());
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::validation("override", format!("bad key `{key}`")));
    }
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::validation("override", format!("`{part}` in `{key}` is not a section")))?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl TrainConfig {
    /// Parses a TOML document, applies dotted `key=value` overrides and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(config_error)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: TrainConfig = toml::Value::Table(table).try_into().map_err(config_error)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_error)
    }

    /// Multiplies every length in mm by `factor`. Voxel contents and sizes
    /// are unchanged; positions and losses shrink to match.
    pub fn scale_geometry(&mut self, factor: f64) {
        let p = &mut self.phantom;
        p.spacing = p.spacing.map(|v| v * factor);
        p.origin_range_mm *= factor;
        p.global_shift_mm *= factor;
        for organ in &mut p.organs {
            organ.radius_mm *= factor;
            organ.jitter_mm *= factor;
        }
        let s = &mut self.sampling;
        s.patch_mm = s.patch_mm.map(|v| v * factor);
        s.member_mm = s.member_mm.map(|v| v * factor);
        self.encoder.position_scale_mm *= factor;
        self.tasks.gap_eps_mm *= factor;
    }

    pub fn patch_voxels(&self) -> Index3 {
        mm_to_voxels(self.sampling.patch_mm, self.phantom.spacing)
    }

    pub fn member_voxels(&self) -> Index3 {
        mm_to_voxels(self.sampling.member_mm, self.phantom.spacing)
    }

    pub fn sampling_params(&self) -> SamplingParams {
        let s = &self.sampling;
        SamplingParams {
            alpha: s.alpha,
            patch: self.patch_voxels(),
            min_foreground: s.min_foreground,
            threshold: s.threshold,
            max_attempts: s.max_attempts,
            placement: s.placement,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sampling;
        if s.alpha < 2 {
            return Err(Error::validation("sampling.alpha", format!("must be at least 2, got {}", s.alpha)));
        }
        for (name, v) in [("sampling.patch_mm", s.patch_mm), ("sampling.member_mm", s.member_mm)] {
            if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::validation(name, "extents must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&s.min_foreground) {
            return Err(Error::validation("sampling.min_foreground", "must lie in [0, 1]"));
        }
        if s.max_attempts == 0 {
            return Err(Error::validation("sampling.max_attempts", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::validation("momentum", format!("must lie in [0, 1], got {}", self.momentum)));
        }
        if self.data.pool_size == 0 {
            return Err(Error::validation("data.pool_size", "must be at least 1"));
        }
        if self.data.volumes_per_step == 0 {
            return Err(Error::validation("data.volumes_per_step", "must be at least 1"));
        }
        self.phantom.validate()?;
        self.window.validate()?;
        self.encoder.validate()?;
        self.tasks.validate()?;
        self.optimizer.validate()?;
        let (patch, member, shape) = (self.patch_voxels(), self.member_voxels(), self.phantom.shape);
        for a in 0..3 {
            if patch[a] > shape[a] {
                return Err(Error::validation(
                    "sampling.patch_mm",
                    format!("{patch:?} voxels do not fit the volume {shape:?}"),
                ));
            }
            if member[a] > patch[a] {
                return Err(Error::validation(
                    "sampling.member_mm",
                    format!("{member:?} voxels exceed the patch {patch:?}"),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.patch_voxels(), [24, 32, 32]);
        assert_eq!(c.member_voxels(), [8, 11, 11]);
        let text = c.to_toml().unwrap();
        assert_eq!(TrainConfig::from_toml(&text, &[]).unwrap(), c);
        assert_eq!(TrainConfig::from_toml("", &[]).unwrap(), c);
    }

    #[test]
    fn overrides_apply() {
        let c = TrainConfig::from_toml(
            "seed = 3\n[sampling]\nalpha = 4\n",
            &[
                "sampling.alpha=6".into(),
                "tasks.route_mode=literal".into(),
                "optimizer.kind=\"sgd\"".into(),
                "optimizer.rate=0.5".into(),
                "tasks.weights.gmp=0".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.sampling.alpha, 6);
        assert_eq!(c.tasks.route_mode, crate::tasks::RouteMode::Literal);
        assert_eq!(c.optimizer, StepRule::Sgd { rate: 0.5 });
        assert_eq!(c.tasks.weights.gmp, 0.0);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        for (text, overrides) in [
            ("bogus = 1", vec![]),
            ("", vec!["sampling.alphaa=3".to_string()]),
            ("", vec!["sampling.alpha=1".to_string()]),
            ("", vec!["momentum=1.5".to_string()]),
            ("", vec!["optimizer.rate=0".to_string()]),
            ("", vec!["sampling.patch_mm=[96.0, 96.0, 400.0]".to_string()]),
            ("", vec!["sampling.member_mm=[100.0, 32.0, 32.0]".to_string()]),
            ("", vec!["noequals".to_string()]),
            ("seed = 1\n[seed2", vec![]),
        ] {
            let err = TrainConfig::from_toml(text, &overrides).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{text} {overrides:?}: {err}");
        }
    }
}
