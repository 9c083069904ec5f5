//! Raw volume files.
//!
//! A volume is stored as two files sharing a stem:
//!
//! * `<stem>.raw`: `z * y * x` little-endian IEEE-754 `f32` values, no header,
//!   z-major (x varies fastest).
//! * `<stem>.meta`: UTF-8 text, one `key = value` pair per line, `#` comments.
//!   Required keys are `format` (`voxrel-raw`), `version` (`1`), `id`,
//!   `shape` (three integers), `spacing` and `origin` (three decimals, mm),
//!   `hu` (`true` for raw HU values, `false` once windowed), `dtype` (`f32le`)
//!   and `order` (`zyx`). Vectors are whitespace separated, `(z, y, x)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Index3, Vec3, Volume};
use crate::error::{Error, Result};

const FORMAT: &str = "voxrel-raw";
const VERSION: u32 = 1;

/// Parsed contents of a `.meta` sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMetadata {
    pub id: u64,
    pub shape: Index3,
    pub spacing: Vec3,
    pub origin: Vec3,
    pub hu: bool,
}

impl RawMetadata {
    fn render(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        format!(
            "# voxrel raw volume sidecar\nformat = {FORMAT}\nversion = {VERSION}\nid = {}\nshape = {} {} {}\nspacing = {}\norigin = {}\nhu = {}\ndtype = f32le\norder = zyx\n",
            self.id,
            self.shape[0],
            self.shape[1],
            self.shape[2],
            join(&self.spacing),
            join(&self.origin),
            self.hu,
        )
    }

    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let trimmed = line.trim();
            if !trimmed.is_empty() && !trimmed.starts_with('#') {
                let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Format {
                    offset,
                    reason: format!("expected `key = value`, got {trimmed:?}"),
                })?;
                entries.insert(key.trim().to_string(), (offset, value.trim().to_string()));
            }
            offset += line.len() as u64;
        }
        let get = |key: &str| {
            entries.get(key).cloned().ok_or_else(|| Error::Format {
                offset,
                reason: format!("missing key `{key}`"),
            })
        };
        let bad = |at: u64, key: &str, value: &str| Error::Format {
            offset: at,
            reason: format!("bad value for `{key}`: {value:?}"),
        };

        let (at, format) = get("format")?;
        if format != FORMAT {
            return Err(bad(at, "format", &format));
        }
        let (at, version) = get("version")?;
        let version: u32 = version.parse().map_err(|_| bad(at, "version", &version))?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        for (key, expected) in [("dtype", "f32le"), ("order", "zyx")] {
            let (at, value) = get(key)?;
            if value != expected {
                return Err(bad(at, key, &value));
            }
        }
        let (at, id) = get("id")?;
        let id = id.parse().map_err(|_| bad(at, "id", &id))?;

        fn triple<T: std::str::FromStr>(value: &str) -> Option<[T; 3]> {
            let parts: Vec<T> = value
                .split_whitespace()
                .map(|p| p.parse().ok())
                .collect::<Option<_>>()?;
            parts.try_into().ok()
        }
        let (at, shape) = get("shape")?;
        let shape = triple::<usize>(&shape).ok_or_else(|| bad(at, "shape", &shape))?;
        let (at, spacing) = get("spacing")?;
        let spacing = triple::<f64>(&spacing).ok_or_else(|| bad(at, "spacing", &spacing))?;
        let (at, origin) = get("origin")?;
        let origin = triple::<f64>(&origin).ok_or_else(|| bad(at, "origin", &origin))?;
        let (at, hu) = get("hu")?;
        let hu = hu.parse().map_err(|_| bad(at, "hu", &hu))?;
        Ok(RawMetadata {
            id,
            shape,
            spacing,
            origin,
            hu,
        })
    }
}

/// `<stem>.meta` next to `<stem>.raw`.
pub fn sidecar_path(raw_path: &Path) -> PathBuf {
    raw_path.with_extension("meta")
}

pub fn save_raw(volume: &Volume, raw_path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(volume.len() * 4);
    for v in volume.voxels() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(raw_path, &bytes).map_err(|e| Error::io(raw_path, e))?;
    let meta = RawMetadata {
        id: volume.id(),
        shape: volume.shape(),
        spacing: volume.spacing(),
        origin: volume.origin(),
        hu: volume.is_hu(),
    };
    let meta_path = sidecar_path(raw_path);
    fs::write(&meta_path, meta.render()).map_err(|e| Error::io(&meta_path, e))
}

pub fn load_raw(raw_path: &Path) -> Result<Volume> {
    let meta_path = sidecar_path(raw_path);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta = RawMetadata::parse(&text)?;
    let bytes = fs::read(raw_path).map_err(|e| Error::io(raw_path, e))?;
    let count = meta.shape.iter().product::<usize>();
    let expected = count as u64 * 4;
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len() as u64,
        });
    }
    if bytes.len() as u64 > expected {
        return Err(Error::Format {
            offset: expected,
            reason: format!("{} trailing bytes", bytes.len() as u64 - expected),
        });
    }
    let voxels = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume::new(meta.id, meta.shape, meta.spacing, meta.origin, meta.hu, voxels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{synth_volume, PhantomSpec};

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PhantomSpec::default();
        let v = synth_volume(&spec, 5).unwrap();
        let path = dir.path().join("v5.raw");
        save_raw(&v, &path).unwrap();
        let back = load_raw(&path).unwrap();
        assert_eq!(back, v);
        assert_eq!(fs::metadata(&path).unwrap().len(), 48 * 64 * 64 * 4);
    }

    #[test]
    fn byte_layout_is_zyx_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::new(9, [1, 2, 2], [1.0, 2.0, 0.5], [0.0, -1.5, 3.0], false, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let path = dir.path().join("tiny.raw");
        save_raw(&v, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[4..8], &2.0f32.to_le_bytes());
        let meta = fs::read_to_string(sidecar_path(&path)).unwrap();
        assert!(meta.contains("shape = 1 2 2\n"));
        assert!(meta.contains("spacing = 1.0 2.0 0.5\n"));
        assert!(meta.contains("origin = 0.0 -1.5 3.0\n"));
        assert!(meta.contains("hu = false\n"));
    }

    #[test]
    fn truncated_and_bad_metadata_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::new(1, [2, 2, 2], [1.0; 3], [0.0; 3], true, vec![0.0; 8]).unwrap();
        let path = dir.path().join("t.raw");
        save_raw(&v, &path).unwrap();
        fs::write(&path, [0u8; 20]).unwrap();
        assert!(matches!(load_raw(&path), Err(Error::Truncated { expected: 32, found: 20 })));

        save_raw(&v, &path).unwrap();
        let meta = fs::read_to_string(sidecar_path(&path)).unwrap();
        fs::write(sidecar_path(&path), meta.replace("version = 1", "version = 2")).unwrap();
        assert!(matches!(load_raw(&path), Err(Error::Version { found: 2, .. })));
        fs::write(sidecar_path(&path), meta.replace("shape = 2 2 2", "shape = 2 x 2")).unwrap();
        assert!(matches!(load_raw(&path), Err(Error::Format { .. })));
    }
}
