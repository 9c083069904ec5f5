use rand::Rng;

use crate::encoder::{pool, Encoder, PatchFeatures};
use crate::error::{Error, Result};
use crate::numerics::{ParamVector, Tape, Var};
use crate::volume::SubRegion;

/// A latent vector read back from a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub latent: Vec<f64>,
    /// True when gradients flow from this embedding to the online parameters.
    pub tracked: bool,
}

/// Encoder output for one batch of patches.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    pub features: Vec<PatchFeatures>,
    /// Whole-patch embeddings, one per region.
    pub patches: Vec<Var>,
    /// Index of the patch encoded by the online encoder, if the batch mixes
    /// online and momentum outputs.
    pub selected: Option<usize>,
    pub forward_passes: usize,
}

impl EncodedBatch {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn embeddings(&self, tape: &Tape<'_>) -> Vec<Embedding> {
        self.patches
            .iter()
            .zip(&self.features)
            .map(|(&v, f)| Embedding {
                latent: tape.value(v).to_vec(),
                tracked: f.tracked,
            })
            .collect()
    }
}

fn pooled(encoder: &Encoder, region: &SubRegion) -> Vec<f64> {
    pool(&region.voxels, region.size, encoder.config().input_grid)
}

/// Encodes `regions` with one uniformly chosen patch going through the
/// online encoder on `tape` and the rest through the momentum twin, whose
/// outputs enter `tape` as constants.
pub fn encode_batch<'p, R: Rng + ?Sized>(
    tape: &mut Tape<'p>,
    encoder: &Encoder,
    momentum: &ParamVector,
    regions: &[SubRegion],
    rng: &mut R,
) -> Result<EncodedBatch> {
    let alpha = regions.len();
    if alpha < 2 {
        return Err(Error::validation("alpha", format!("must be at least 2, got {alpha}")));
    }
    let selected = rng.random_range(0..alpha);
    let mut features = Vec::with_capacity(alpha);
    for (i, region) in regions.iter().enumerate() {
        let input = pooled(encoder, region);
        if i == selected {
            features.push(encoder.forward(tape, &input)?);
        } else {
            let mut side = Tape::detached(momentum);
            let f = encoder.forward(&mut side, &input)?;
            side.check_finite()?;
            features.push(encoder.transfer(&side, &f, tape));
        }
    }
    let patches = features.iter().map(|f| encoder.patch_embedding(tape, f)).collect();
    Ok(EncodedBatch {
        features,
        patches,
        selected: Some(selected),
        forward_passes: alpha,
    })
}

/// Encodes every region with the tape's own parameters. Used for evaluation.
pub fn encode_all(tape: &mut Tape<'_>, encoder: &Encoder, regions: &[SubRegion]) -> Result<EncodedBatch> {
    let features = regions
        .iter()
        .map(|r| encoder.forward(tape, &pooled(encoder, r)))
        .collect::<Result<Vec<_>>>()?;
    let patches = features.iter().map(|f| encoder.patch_embedding(tape, f)).collect();
    Ok(EncodedBatch {
        features,
        patches,
        selected: None,
        forward_passes: regions.len(),
    })
}
