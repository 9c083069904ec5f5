use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::checkpoint::{Checkpoint, RngState};
use super::config::TrainConfig;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::numerics::{backward, ema_update, Optimizer, ParamVector, Tape};
use crate::sampler::{sample_subregions, SamplingParams};
use crate::seed::mix_seed;
use crate::tasks::{batch_losses, encode_batch, enumerate_routes, BatchTargets, IterationRecord};
use crate::volume::{apply_window, synth_volume, Index3, Volume};

/// Instance seeds at or above this value are reserved for evaluation volumes.
pub const EVAL_SEED_BASE: u64 = 1 << 40;

/// One row of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub iter: u64,
    pub l_crsc: f64,
    pub l_gmp: f64,
    pub l_rbcs: f64,
    pub l_total: f64,
    pub crsc_acc: f64,
    pub wall_ms: f64,
}

/// Windowed phantom instances for the given instance seeds.
pub(crate) fn make_volumes(config: &TrainConfig, seeds: impl Iterator<Item = u64>) -> Result<Vec<Volume>> {
    seeds
        .map(|s| apply_window(&synth_volume(&config.phantom, s)?, &config.window))
        .collect()
}

/// Mutable training state: parameters, optimizer, rng and the volume pool.
#[derive(Debug)]
pub struct Trainer {
    config: TrainConfig,
    encoder: Encoder,
    online: ParamVector,
    momentum: ParamVector,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    iteration: u64,
    pool: Vec<Volume>,
    sampling: SamplingParams,
    member: Index3,
}

impl Trainer {
    /// Fresh state initialized from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let online = config.encoder.init_params(mix_seed(config.seed, 1));
        let momentum = online.select_prefix("enc.");
        let optimizer = Optimizer::new(config.optimizer, online.len());
        let rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 2));
        Self::assemble(config, online, momentum, optimizer, rng, 0)
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let rng = ckpt.rng.restore()?;
        Self::assemble(ckpt.config, ckpt.online, ckpt.momentum, ckpt.optimizer, rng, ckpt.iteration)
    }

    fn assemble(
        config: TrainConfig,
        online: ParamVector,
        momentum: ParamVector,
        optimizer: Optimizer,
        rng: ChaCha8Rng,
        iteration: u64,
    ) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(config.encoder.clone())?;
        if !online.same_layout(&config.encoder.init_params(0)) || !momentum.same_layout(&online.select_prefix("enc.")) {
            return Err(Error::validation("checkpoint", "parameter layout does not match the encoder config"));
        }
        let pool = make_volumes(&config, 0..config.data.pool_size as u64)?;
        Ok(Trainer {
            sampling: config.sampling_params(),
            member: config.member_voxels(),
            config,
            encoder,
            online,
            momentum,
            optimizer,
            rng,
            iteration,
            pool,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn online(&self) -> &ParamVector {
        &self.online
    }

    pub fn momentum(&self) -> &ParamVector {
        &self.momentum
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            iteration: self.iteration,
            rng: RngState::capture(&self.rng),
            online: self.online.clone(),
            momentum: self.momentum.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    /// One optimizer step. State is only committed when every intermediate
    /// value is finite; on error the trainer still holds the previous state.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let started = Instant::now();
        let mut rng = self.rng.clone();
        let cfg = &self.config;
        let mut tape = Tape::new(&self.online);
        let mut totals = Vec::with_capacity(cfg.data.volumes_per_step);
        let mut sums = [0.0f64; 5];
        for _ in 0..cfg.data.volumes_per_step {
            let volume = &self.pool[rng.random_range(0..self.pool.len())];
            let regions = sample_subregions(volume, &self.sampling, &mut rng)?;
            let targets = BatchTargets::from_regions(&regions, self.member)?;
            let routes = enumerate_routes(cfg.sampling.alpha, cfg.tasks.route_cap, &mut rng)?;
            let batch = encode_batch(&mut tape, &self.encoder, &self.momentum, &regions, &mut rng)?;
            let losses = batch_losses(&mut tape, &self.encoder, &batch, &targets, &routes, &cfg.tasks)?;
            tape.check_finite()?;
            let record = IterationRecord::collect(&tape, self.iteration + 1, &losses, &targets, &routes);
            for (s, v) in sums
                .iter_mut()
                .zip([record.l_crsc, record.l_gmp, record.l_rbcs, record.l_total, record.crsc_accuracy])
            {
                *s += v;
            }
            totals.push(losses.total);
        }
        let objective = tape.mean(&totals);
        tape.check_finite()?;
        let grads = backward(&tape, objective)?;
        if grads.params.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericOverflow {
                node: objective.index(),
                op: "backward",
            });
        }
        drop(tape);

        let mut online = self.online.clone();
        let mut optimizer = self.optimizer.clone();
        optimizer.apply(online.values_mut(), &grads.params);
        if online.check_finite().is_err() {
            return Err(Error::NumericOverflow {
                node: objective.index(),
                op: "optimizer",
            });
        }
        let mut momentum = self.momentum.clone();
        ema_update(&mut momentum, &online.select_prefix("enc."), self.config.momentum)?;

        self.online = online;
        self.momentum = momentum;
        self.optimizer = optimizer;
        self.rng = rng;
        self.iteration += 1;
        let n = totals.len() as f64;
        Ok(StepMetrics {
            iter: self.iteration,
            l_crsc: sums[0] / n,
            l_gmp: sums[1] / n,
            l_rbcs: sums[2] / n,
            l_total: sums[3] / n,
            crsc_acc: sums[4] / n,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Runs up to `config.iterations` total steps, passing each step's metrics
    /// to `on_step`. Stops early with the error if a step or callback fails.
    pub fn run(&mut self, mut on_step: impl FnMut(&Trainer, &StepMetrics) -> Result<()>) -> Result<()> {
        while self.iteration < self.config.iterations {
            let m = self.step()?;
            on_step(self, &m)?;
        }
        Ok(())
    }
}

/// Trains from scratch and returns the final checkpoint with every metric row.
pub fn train(config: TrainConfig) -> Result<(Checkpoint, Vec<StepMetrics>)> {
    let mut trainer = Trainer::new(config)?;
    let mut log = Vec::new();
    trainer.run(|_, m| {
        log.push(m.clone());
        Ok(())
    })?;
    Ok((trainer.checkpoint(), log))
}
