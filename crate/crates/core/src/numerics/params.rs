use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named, shaped slice of a [`ParamVector`]. Matrices are row-major with
/// shape `[rows, cols]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Copyable handle for tape operations.
    pub fn handle(&self) -> SegRef {
        let (rows, cols) = match self.shape.as_slice() {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            _ => (self.len(), 1),
        };
        SegRef {
            offset: self.offset,
            rows,
            cols,
        }
    }
}

/// Location of a vector or row-major matrix inside a parameter array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegRef {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl SegRef {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builder for a contiguous segment table.
#[derive(Debug, Clone, Default)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> SegRef {
        let seg = Segment {
            name: name.into(),
            offset: self.len,
            shape: shape.to_vec(),
        };
        self.len += seg.len();
        let handle = seg.handle();
        self.segments.push(seg);
        handle
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn zeros(self) -> ParamVector {
        ParamVector {
            values: vec![0.0; self.len],
            segments: self.segments,
        }
    }
}

/// Flat 64-bit parameter storage with a named segment table that covers the
/// array exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    segments: Vec<Segment>,
}

impl ParamVector {
    /// Rebuilds a vector from a stored segment table and values, checking
    /// exact coverage, ordering and finiteness.
    pub fn from_parts(segments: Vec<Segment>, values: Vec<f64>) -> Result<Self> {
        let mut cursor = 0;
        for seg in &segments {
            if seg.offset != cursor {
                return Err(Error::validation(
                    format!("segment {}", seg.name),
                    format!("expected offset {cursor}, found {}", seg.offset),
                ));
            }
            cursor += seg.len();
        }
        if cursor != values.len() {
            return Err(Error::validation(
                "segments",
                format!("table covers {cursor} values but {} are stored", values.len()),
            ));
        }
        let pv = ParamVector { values, segments };
        pv.check_finite()?;
        Ok(pv)
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            let name = self
                .segments
                .iter()
                .find(|s| s.range().contains(&i))
                .map(|s| s.name.as_str())
                .unwrap_or("?");
            return Err(Error::validation(
                format!("parameter {name}"),
                format!("non-finite value at index {i}"),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn handle(&self, name: &str) -> Result<SegRef> {
        self.segment(name)
            .map(Segment::handle)
            .ok_or_else(|| Error::validation("segment", format!("no segment named `{name}`")))
    }

    pub fn slice(&self, seg: SegRef) -> &[f64] {
        &self.values[seg.offset..seg.offset + seg.len()]
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.segments == other.segments
    }

    /// Copies the segments whose names start with `prefix` into a new vector
    /// with rebased offsets.
    pub fn select_prefix(&self, prefix: &str) -> ParamVector {
        let mut layout = ParamLayout::new();
        let mut values = Vec::new();
        for seg in self.segments.iter().filter(|s| s.name.starts_with(prefix)) {
            layout.push(seg.name.clone(), &seg.shape);
            values.extend_from_slice(&self.values[seg.range()]);
        }
        ParamVector {
            values,
            segments: layout.segments,
        }
    }

    /// Euclidean distance between two vectors with the same layout.
    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}
