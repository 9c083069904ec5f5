use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::statistics::{Data, OrderStatistics, Statistics};

use super::checkpoint::Checkpoint;
use super::train::{make_volumes, EVAL_SEED_BASE};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::numerics::Tape;
use crate::sampler::sample_subregions;
use crate::seed::mix_seed;
use crate::tasks::{batch_losses, encode_all, endpoint_errors, enumerate_routes, BatchTargets, IterationRecord};
use crate::volume::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantiles {
    pub p10: f64,
    pub median: f64,
    pub p90: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Self {
        let mut data = Data::new(values.to_vec());
        Quantiles {
            p10: data.quantile(0.1),
            median: data.median(),
            p90: data.quantile(0.9),
        }
    }
}

/// Sample Pearson correlation; NaN when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    x.covariance(y) / (x.std_dev() * y.std_dev())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub iteration: u64,
    pub volumes: usize,
    pub units: usize,
    pub crsc_accuracy: f64,
    pub crsc_ties: usize,
    pub gap_points: usize,
    /// `|predicted - true| / true` over region pairs.
    pub gap_relative_error: Quantiles,
    pub gap_pearson: f64,
    /// Endpoint displacement error in mm over ordered region pairs.
    pub endpoint_error_mm: Quantiles,
    pub l_crsc: f64,
    pub l_gmp: f64,
    pub l_rbcs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub metrics: EvalMetrics,
    /// One diagnostic record per evaluation volume.
    pub records: Vec<IterationRecord>,
}

/// Scores the online encoder and heads of `ckpt` on `n_volumes` phantom
/// instances never used for training. Deterministic in `eval_seed`.
pub fn evaluate(ckpt: &Checkpoint, n_volumes: usize, eval_seed: u64) -> Result<EvalReport> {
    if n_volumes == 0 {
        return Err(Error::validation("volumes", "must be at least 1"));
    }
    let cfg = &ckpt.config;
    let encoder = Encoder::new(cfg.encoder.clone())?;
    let sampling = cfg.sampling_params();
    let member = cfg.member_voxels();
    let mut records = Vec::with_capacity(n_volumes);
    let mut endpoint = Vec::new();
    for i in 0..n_volumes as u64 {
        let volume = make_volumes(cfg, std::iter::once(EVAL_SEED_BASE + i))?.remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(eval_seed, i));
        let regions = sample_subregions(&volume, &sampling, &mut rng)?;
        let targets = BatchTargets::from_regions(&regions, member)?;
        let routes = enumerate_routes(cfg.sampling.alpha, cfg.tasks.route_cap, &mut rng)?;
        let mut tape = Tape::detached(&ckpt.online);
        let batch = encode_all(&mut tape, &encoder, &regions)?;
        let losses = batch_losses(&mut tape, &encoder, &batch, &targets, &routes, &cfg.tasks)?;
        tape.check_finite()?;
        let predicted: Vec<Vec3> = losses
            .route_positions
            .iter()
            .map(|&v| {
                let p = tape.value(v);
                [p[0], p[1], p[2]]
            })
            .collect();
        endpoint.extend(endpoint_errors(&predicted, &targets.centers));
        records.push(IterationRecord::collect(&tape, ckpt.iteration, &losses, &targets, &routes));
    }

    let pairs: Vec<(f64, f64)> = records.iter().flat_map(|r| r.crsc_pairs.iter().copied()).collect();
    let correct = pairs.iter().filter(|(a, d)| crate::tasks::crsc_infer(*a, *d).correct()).count();
    let ties = pairs.iter().filter(|(a, d)| a == d).count();
    let (truth, predicted): (Vec<f64>, Vec<f64>) = records
        .iter()
        .flat_map(|r| r.gap_points.iter().map(|p| (p.truth, p.predicted)))
        .unzip();
    let relative: Vec<f64> = truth.iter().zip(&predicted).map(|(t, p)| (p - t).abs() / t).collect();
    let n = records.len() as f64;
    let metrics = EvalMetrics {
        iteration: ckpt.iteration,
        volumes: n_volumes,
        units: pairs.len(),
        crsc_accuracy: correct as f64 / pairs.len() as f64,
        crsc_ties: ties,
        gap_points: truth.len(),
        gap_relative_error: Quantiles::of(&relative),
        gap_pearson: pearson(&truth, &predicted),
        endpoint_error_mm: Quantiles::of(&endpoint),
        l_crsc: records.iter().map(|r| r.l_crsc).sum::<f64>() / n,
        l_gmp: records.iter().map(|r| r.l_gmp).sum::<f64>() / n,
        l_rbcs: records.iter().map(|r| r.l_rbcs).sum::<f64>() / n,
    };
    Ok(EvalReport { metrics, records })
}
