use serde::Serialize;

use super::batch::EncodedBatch;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::numerics::{kernels, Tape, Var};
use crate::sampler::CoupledUnit;

/// Member embeddings of one coupled unit in the order adj1, adj2, dst1, dst2.
#[derive(Debug, Clone, Copy)]
pub struct UnitEmbeddings {
    pub members: [Var; 4],
}

impl UnitEmbeddings {
    pub fn adjacent(&self) -> (Var, Var) {
        (self.members[0], self.members[1])
    }

    pub fn distant(&self) -> (Var, Var) {
        (self.members[2], self.members[3])
    }
}

/// Pools member embeddings for `unit` out of the encoded parent patches.
pub fn unit_embeddings(tape: &mut Tape<'_>, encoder: &Encoder, batch: &EncodedBatch, unit: &CoupledUnit) -> UnitEmbeddings {
    let members = std::array::from_fn(|k| {
        let block = &unit.members[k];
        let parent = unit.parents[if k % 2 == 0 { 0 } else { 1 }];
        let (lo, hi) = block.unit_box(unit.parent_size);
        encoder.block_embedding(tape, &batch.features[parent], lo, hi)
    });
    UnitEmbeddings { members }
}

/// Pairwise cosine similarities, one 4x4 block per unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityTensor {
    pub blocks: Vec<[[f64; 4]; 4]>,
    /// Number of entries whose cosine hit the zero-norm guard.
    pub guarded: usize,
}

impl SimilarityTensor {
    pub fn shape(&self) -> [usize; 3] {
        [self.blocks.len(), 4, 4]
    }
}

/// Similarity blocks in unit order. The diagonal is exactly 1.
pub fn crsc_similarity(tape: &Tape<'_>, units: &[UnitEmbeddings]) -> SimilarityTensor {
    let mut guarded = 0;
    let blocks = units
        .iter()
        .map(|u| {
            let mut block = [[1.0; 4]; 4];
            for i in 0..4 {
                for j in i + 1..4 {
                    let (c, g) = kernels::cosine(tape.value(u.members[i]), tape.value(u.members[j]));
                    guarded += g as usize;
                    block[i][j] = c;
                    block[j][i] = c;
                }
            }
            block
        })
        .collect();
    SimilarityTensor { blocks, guarded }
}

/// Mean over units of `cos(dst1, dst2) - cos(adj1, adj2)`.
pub fn crsc_loss(tape: &mut Tape<'_>, units: &[UnitEmbeddings]) -> Result<Var> {
    if units.is_empty() {
        return Err(Error::validation("units", "need at least one coupled unit"));
    }
    let w = 1.0 / units.len() as f64;
    let mut terms = Vec::with_capacity(2 * units.len());
    for u in units {
        let (a1, a2) = u.adjacent();
        let (d1, d2) = u.distant();
        let dst = tape.cosine(d1, d2);
        let adj = tape.cosine(a1, a2);
        terms.push((dst, w));
        terms.push((adj, -w));
    }
    Ok(tape.weighted_sum(&terms))
}

/// Outcome of labeling two candidate pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrscInference {
    /// True when the second pair is labeled distant.
    pub second_is_distant: bool,
    /// Both cosines were equal; the label fell back to the fixed order.
    pub tie: bool,
}

impl CrscInference {
    /// Scored against units whose second pair is the true distant pair.
    /// Ties count as wrong.
    pub fn correct(&self) -> bool {
        self.second_is_distant && !self.tie
    }
}

/// The pair with the smaller cosine is the distant one. On a tie the second
/// pair is labeled distant and the tie is flagged.
pub fn crsc_infer(cos_first: f64, cos_second: f64) -> CrscInference {
    CrscInference {
        second_is_distant: cos_second <= cos_first,
        tie: cos_first == cos_second,
    }
}
