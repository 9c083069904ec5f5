//! Small differentiable patch encoder and the two position heads.
//!
//! A patch is average-pooled onto a fixed `input_grid^3` lattice, so patches
//! of any voxel size share one set of weights. A global context vector is
//! computed from the whole lattice; each of the `cell_grid^3` cells then
//! combines that context with its own pooled values and its position inside
//! the patch into a feature vector. The embedding of any axis-aligned block of
//! the patch is the overlap-weighted mean of the cell features it covers, so
//! the patch embedding and every coupled-unit member embedding come out of a
//! single forward pass.

use std::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamLayout, ParamVector, SegRef, Tape, Var};
use crate::volume::{Index3, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Pooled lattice side length.
    pub input_grid: usize,
    /// Feature cells per side; must divide `input_grid`.
    pub cell_grid: usize,
    /// Width of the global context layer.
    pub hidden: usize,
    /// Embedding dimension `d`.
    pub embed_dim: usize,
    /// Optional hidden width of the position heads; 0 makes them affine.
    pub head_hidden: usize,
    /// Head outputs are multiplied by this many mm.
    pub position_scale_mm: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_grid: 8,
            cell_grid: 4,
            hidden: 32,
            embed_dim: 32,
            head_hidden: 0,
            position_scale_mm: 100.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("encoder.input_grid", self.input_grid),
            ("encoder.cell_grid", self.cell_grid),
            ("encoder.hidden", self.hidden),
            ("encoder.embed_dim", self.embed_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::validation(name, "must be at least 1"));
            }
        }
        if !self.input_grid.is_multiple_of(self.cell_grid) {
            return Err(Error::validation(
                "encoder.cell_grid",
                format!("must divide input_grid {}", self.input_grid),
            ));
        }
        if !(self.position_scale_mm > 0.0 && self.position_scale_mm.is_finite()) {
            return Err(Error::validation("encoder.position_scale_mm", "must be positive"));
        }
        Ok(())
    }

    fn cells(&self) -> usize {
        self.cell_grid.pow(3)
    }

    fn local_len(&self) -> usize {
        (self.input_grid / self.cell_grid).pow(3) + 3
    }

    /// Segment table: encoder segments (prefix `enc.`) first, then both heads
    /// (prefix `head.`).
    pub fn layout(&self) -> ParamLayout {
        let mut l = ParamLayout::new();
        l.push("enc.global.w", &[self.hidden, self.input_grid.pow(3)]);
        l.push("enc.global.b", &[self.hidden]);
        l.push("enc.cell.context", &[self.embed_dim, self.hidden]);
        l.push("enc.cell.local", &[self.embed_dim, self.local_len()]);
        l.push("enc.cell.b", &[self.embed_dim]);
        for head in ["gmp", "rbcs"] {
            if self.head_hidden > 0 {
                l.push(format!("head.{head}.hidden.w"), &[self.head_hidden, self.embed_dim]);
                l.push(format!("head.{head}.hidden.b"), &[self.head_hidden]);
                l.push(format!("head.{head}.w"), &[3, self.head_hidden]);
            } else {
                l.push(format!("head.{head}.w"), &[3, self.embed_dim]);
            }
            l.push(format!("head.{head}.b"), &[3]);
        }
        l
    }

    /// Scaled-normal initialization (`N(0, 1/fan_in)` weights, zero biases).
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = self.layout().zeros();
        let segments = params.segments().to_vec();
        for seg in segments {
            if seg.shape.len() == 2 {
                let std = (1.0 / seg.shape[1] as f64).sqrt();
                for v in &mut params.values_mut()[seg.range()] {
                    *v = std * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        params
    }
}

/// Average pooling onto a `grid^3` lattice. Bin `k` of an axis with `n`
/// voxels covers indices `floor(k n / grid) .. ceil((k + 1) n / grid)`.
/// Values are centred by subtracting 0.5.
pub fn pool(voxels: &[f32], size: Index3, grid: usize) -> Vec<f64> {
    let bins = |n: usize| -> Vec<(usize, usize)> {
        (0..grid)
            .map(|k| (k * n / grid, ((k + 1) * n).div_ceil(grid).max(k * n / grid + 1)))
            .collect()
    };
    let (bz, by, bx) = (bins(size[0]), bins(size[1]), bins(size[2]));
    let mut out = Vec::with_capacity(grid.pow(3));
    for &(z0, z1) in &bz {
        for &(y0, y1) in &by {
            for &(x0, x1) in &bx {
                let mut sum = 0.0f64;
                for z in z0..z1 {
                    for y in y0..y1 {
                        let row = (z * size[1] + y) * size[2];
                        sum += voxels[row + x0..row + x1].iter().map(|&v| f64::from(v)).sum::<f64>();
                    }
                }
                let count = (z1 - z0) * (y1 - y0) * (x1 - x0);
                out.push(sum / count as f64 - 0.5);
            }
        }
    }
    out
}

/// Cell features of one encoded patch, in `(z, y, x)` cell order.
#[derive(Debug, Clone)]
pub struct PatchFeatures {
    pub cells: Vec<Var>,
    /// Produced by the online encoder on a recording tape.
    pub tracked: bool,
}

#[derive(Debug, Clone, Copy)]
struct EncoderHandles {
    global_w: SegRef,
    global_b: SegRef,
    context: SegRef,
    local: SegRef,
    cell_b: SegRef,
}

impl EncoderHandles {
    fn resolve(params: &ParamVector) -> Result<Self> {
        Ok(EncoderHandles {
            global_w: params.handle("enc.global.w")?,
            global_b: params.handle("enc.global.b")?,
            context: params.handle("enc.cell.context")?,
            local: params.handle("enc.cell.local")?,
            cell_b: params.handle("enc.cell.b")?,
        })
    }
}

/// The encoder architecture plus a forward-pass counter.
#[derive(Debug)]
pub struct Encoder {
    config: EncoderConfig,
    forward_passes: Cell<u64>,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Encoder {
            config,
            forward_passes: Cell::new(0),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Total forward passes since construction.
    pub fn forward_passes(&self) -> u64 {
        self.forward_passes.get()
    }

    /// Runs the encoder on a pooled lattice using the tape's parameters.
    pub fn forward(&self, tape: &mut Tape<'_>, pooled: &[f64]) -> Result<PatchFeatures> {
        let cfg = &self.config;
        if pooled.len() != cfg.input_grid.pow(3) {
            return Err(Error::validation(
                "pooled",
                format!("expected {} values, got {}", cfg.input_grid.pow(3), pooled.len()),
            ));
        }
        let h = EncoderHandles::resolve(tape.params())?;
        self.forward_passes.set(self.forward_passes.get() + 1);

        let x = tape.input(pooled.to_vec());
        let g = tape.affine(h.global_w, h.global_b, x);
        let g = tape.tanh(g);
        let context = tape.affine(h.context, h.cell_b, g);

        let (grid, cg) = (cfg.input_grid, cfg.cell_grid);
        let k = grid / cg;
        let mut cells = Vec::with_capacity(cfg.cells());
        for cz in 0..cg {
            for cy in 0..cg {
                for cx in 0..cg {
                    let mut local = Vec::with_capacity(cfg.local_len());
                    for z in cz * k..(cz + 1) * k {
                        for y in cy * k..(cy + 1) * k {
                            let row = (z * grid + y) * grid;
                            local.extend_from_slice(&pooled[row + cx * k..row + (cx + 1) * k]);
                        }
                    }
                    for c in [cz, cy, cx] {
                        local.push(2.0 * (c as f64 + 0.5) / cg as f64 - 1.0);
                    }
                    let l = tape.input(local);
                    let l = tape.matvec(h.local, l);
                    let pre = tape.add(context, l);
                    cells.push(tape.tanh(pre));
                }
            }
        }
        Ok(PatchFeatures {
            cells,
            tracked: tape.is_recording(),
        })
    }

    /// Overlap weights of the cells covering the box `[lo, hi]` of the unit cube.
    pub fn block_weights(&self, lo: Vec3, hi: Vec3) -> Vec<(usize, f64)> {
        let cg = self.config.cell_grid;
        let axis = |a: usize| -> Vec<(usize, f64)> {
            let width = hi[a] - lo[a];
            (0..cg)
                .filter_map(|c| {
                    let (c0, c1) = (c as f64 / cg as f64, (c + 1) as f64 / cg as f64);
                    let overlap = hi[a].min(c1) - lo[a].max(c0);
                    (overlap > 0.0).then(|| (c, overlap / width))
                })
                .collect()
        };
        let (wz, wy, wx) = (axis(0), axis(1), axis(2));
        let mut out = Vec::with_capacity(wz.len() * wy.len() * wx.len());
        for &(z, a) in &wz {
            for &(y, b) in &wy {
                for &(x, c) in &wx {
                    out.push(((z * cg + y) * cg + x, a * b * c));
                }
            }
        }
        out
    }

    /// Embedding of a sub-block of an encoded patch.
    pub fn block_embedding(&self, tape: &mut Tape<'_>, features: &PatchFeatures, lo: Vec3, hi: Vec3) -> Var {
        let terms: Vec<(Var, f64)> = self
            .block_weights(lo, hi)
            .into_iter()
            .map(|(c, w)| (features.cells[c], w))
            .collect();
        tape.weighted_sum(&terms)
    }

    /// Embedding of the whole patch: the mean of all cell features.
    pub fn patch_embedding(&self, tape: &mut Tape<'_>, features: &PatchFeatures) -> Var {
        tape.mean(&features.cells)
    }

    /// Copies detached features onto another tape as constants.
    pub fn transfer(&self, from: &Tape<'_>, features: &PatchFeatures, to: &mut Tape<'_>) -> PatchFeatures {
        PatchFeatures {
            cells: features.cells.iter().map(|&c| to.input(from.value(c).to_vec())).collect(),
            tracked: false,
        }
    }
}

/// Which position head to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Gap-matrix positions.
    Gap,
    /// Route connectivity centers.
    Route,
}

impl Head {
    fn prefix(self) -> &'static str {
        match self {
            Head::Gap => "head.gmp",
            Head::Route => "head.rbcs",
        }
    }
}

/// Maps an embedding to a 3D position in mm.
pub fn head_position(tape: &mut Tape<'_>, config: &EncoderConfig, head: Head, embedding: Var) -> Result<Var> {
    let p = tape.params();
    let prefix = head.prefix();
    let mut x = embedding;
    if config.head_hidden > 0 {
        let w = p.handle(&format!("{prefix}.hidden.w"))?;
        let b = p.handle(&format!("{prefix}.hidden.b"))?;
        x = tape.affine(w, b, x);
        x = tape.tanh(x);
    }
    let w = p.handle(&format!("{prefix}.w"))?;
    let b = p.handle(&format!("{prefix}.b"))?;
    let out = tape.affine(w, b, x);
    Ok(tape.scale(out, config.position_scale_mm))
}
