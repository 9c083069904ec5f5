//! Shared fixtures for the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use voxrel_core::encoder::{pool, Encoder};
use voxrel_core::numerics::ParamVector;
use voxrel_core::sampler::sample_subregions;
use voxrel_core::trainer::TrainConfig;
use voxrel_core::volume::{apply_window, synth_volume, SubRegion};

/// Default config with a small volume pool so setup stays quick.
pub fn config(alpha: usize) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.sampling.alpha = alpha;
    c.data.pool_size = 4;
    c
}

/// One sampled batch of `alpha` patches from phantom instance 0.
pub fn regions(config: &TrainConfig) -> Vec<SubRegion> {
    let volume = apply_window(&synth_volume(&config.phantom, 0).unwrap(), &config.window).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    sample_subregions(&volume, &config.sampling_params(), &mut rng).unwrap()
}

pub struct EncoderFixture {
    pub encoder: Encoder,
    pub params: ParamVector,
    pub pooled: Vec<f64>,
}

pub fn encoder_fixture(config: &TrainConfig) -> EncoderFixture {
    let region = regions(config).remove(0);
    let grid = config.encoder.input_grid;
    EncoderFixture {
        encoder: Encoder::new(config.encoder.clone()).unwrap(),
        params: config.encoder.init_params(7),
        pooled: pool(&region.voxels, region.size, grid),
    }
}
