use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use voxrel_core::encoder::Encoder;
use voxrel_core::numerics::{grad_check, GradCheckOptions, GradCheckReport, ParamVector};
use voxrel_core::sampler::{sample_subregions, RegionManifest};
use voxrel_core::seed::mix_seed;
use voxrel_core::tasks::{batch_losses, encode_batch, enumerate_routes, BatchTargets, RouteMode, TaskConfig};
use voxrel_core::trainer::{
    evaluate as run_evaluation, write_crsc_pairs, write_gap_scatter, write_route_arrows, Checkpoint,
    MetricWriter, TrainConfig, Trainer,
};
use voxrel_core::volume::{apply_window, save_raw, synth_volume, PhantomSpec, SubRegion, Volume};
use voxrel_core::{Error, Result};

use crate::ConfigArgs;

const DEFAULT_OUT: &str = "voxrel-out";
const SNAPSHOT: &str = "resolved.toml";

/// Keys the gradient check shrinks unless the config file sets them.
const GRADCHECK_DEFAULTS: [&str; 6] = [
    "sampling.alpha=3",
    "encoder.input_grid=4",
    "encoder.cell_grid=2",
    "encoder.hidden=6",
    "encoder.embed_dim=5",
    "tasks.route_cap=6",
];

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn output_dir(cli: Option<PathBuf>, configured: Option<&str>) -> Result<PathBuf> {
    let dir = cli
        .or_else(|| configured.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn has_key(table: &toml::Table, dotted: &str) -> bool {
    let mut cursor = table;
    let parts: Vec<&str> = dotted.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        match cursor.get(*part).and_then(|v| v.as_table()) {
            Some(t) => cursor = t,
            None => return false,
        }
    }
    cursor.contains_key(parts[parts.len() - 1])
}

/// Config file, then `defaults` for keys the file leaves unset, then
/// `--set` overrides, then `--seed`.
fn resolve_config(args: &ConfigArgs, defaults: &[&str]) -> Result<TrainConfig> {
    let text = match &args.config {
        Some(p) => read_text(p)?,
        None => String::new(),
    };
    let table: toml::Table = toml::from_str(&text).map_err(|e| Error::validation("config", e.to_string()))?;
    let mut overrides: Vec<String> = defaults
        .iter()
        .filter(|d| !has_key(&table, d.split_once('=').expect("key=value").0))
        .map(|d| d.to_string())
        .collect();
    overrides.extend(args.overrides.iter().cloned());
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    TrainConfig::from_toml(&text, &overrides)
}

fn snapshot(dir: &Path, config: &TrainConfig) -> Result<()> {
    write_file(&dir.join(SNAPSHOT), config.to_toml()?)
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn windowed(config: &TrainConfig, instance: u64) -> Result<Volume> {
    apply_window(&synth_volume(&config.phantom, instance)?, &config.window)
}

pub fn gen_data(out: Option<PathBuf>, spec: Option<PathBuf>, count: usize, seed: Option<u64>) -> Result<u8> {
    let mut phantom: PhantomSpec = match &spec {
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| Error::validation("phantom", e.to_string()))?,
        None => PhantomSpec::default(),
    };
    if let Some(s) = seed {
        phantom.seed = s;
    }
    phantom.validate()?;
    let dir = output_dir(out, None)?;
    let mut volumes = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let volume = synth_volume(&phantom, i)?;
        let file = format!("volume_{i:04}.raw");
        save_raw(&volume, &dir.join(&file))?;
        volumes.push(json!({ "file": file, "id": volume.id(), "instance_seed": i }));
    }
    let manifest = json!({ "spec_seed": phantom.seed, "count": count, "volumes": volumes });
    write_file(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("json"))?;
    write_file(
        &dir.join(SNAPSHOT),
        toml::to_string(&phantom).map_err(|e| Error::validation("phantom", e.to_string()))?,
    )?;
    println!("wrote {count} volumes to {}", dir.display());
    Ok(0)
}

pub fn pretrain(
    out: Option<PathBuf>,
    args: ConfigArgs,
    resume: Option<PathBuf>,
    iterations: Option<u64>,
    log_every: u64,
) -> Result<u8> {
    let (mut trainer, resumed) = match &resume {
        Some(path) => {
            let mut ckpt = Checkpoint::load(path)?;
            if let Some(n) = iterations {
                ckpt.config.iterations = n;
            }
            (Trainer::from_checkpoint(ckpt)?, true)
        }
        None => {
            let mut config = resolve_config(&args, &[])?;
            if let Some(n) = iterations {
                config.iterations = n;
            }
            (Trainer::new(config)?, false)
        }
    };
    let config = trainer.config().clone();
    let dir = output_dir(out, config.output.dir.as_deref())?;
    snapshot(&dir, &config)?;
    let metrics_path = dir.join(&config.output.metrics);
    let ckpt_path = dir.join(&config.output.checkpoint);
    let mut metrics = if resumed && metrics_path.exists() {
        let file = OpenOptions::new()
            .append(true)
            .open(&metrics_path)
            .map_err(|e| Error::io(&metrics_path, e))?;
        MetricWriter::append(BufWriter::new(file))
    } else {
        MetricWriter::new(create(&metrics_path)?)?
    };

    let every = config.output.checkpoint_every;
    let result = trainer.run(|t, m| {
        metrics.write(m)?;
        if every > 0 && m.iter % every == 0 {
            metrics.flush()?;
            t.checkpoint().save(&ckpt_path)?;
        }
        if log_every > 0 && m.iter % log_every == 0 {
            eprintln!(
                "iter {:>6}  crsc {:+.4}  gmp {:.4}  rbcs {:.2}  acc {:.3}",
                m.iter, m.l_crsc, m.l_gmp, m.l_rbcs, m.crsc_acc
            );
        }
        Ok(())
    });
    metrics.flush()?;
    // On a numeric failure the trainer still holds the last good state.
    trainer.checkpoint().save(&ckpt_path)?;
    result?;
    print_json(&json!({
        "iteration": trainer.iteration(),
        "checkpoint": ckpt_path,
        "metrics": metrics_path,
    }));
    Ok(0)
}

pub fn evaluate(out: Option<PathBuf>, checkpoint: PathBuf, volumes: usize, eval_seed: u64) -> Result<u8> {
    let ckpt = Checkpoint::load(&checkpoint)?;
    let report = run_evaluation(&ckpt, volumes, eval_seed)?;
    let dir = output_dir(out, ckpt.config.output.dir.as_deref())?;
    snapshot(&dir, &ckpt.config)?;
    write_file(
        &dir.join("eval.json"),
        serde_json::to_string_pretty(&report.metrics).expect("json"),
    )?;
    print_json(&report.metrics);
    Ok(0)
}

pub fn export_viz(out: Option<PathBuf>, checkpoint: PathBuf, volumes: usize, eval_seed: u64) -> Result<u8> {
    let ckpt = Checkpoint::load(&checkpoint)?;
    let report = run_evaluation(&ckpt, volumes, eval_seed)?;
    let dir = output_dir(out, ckpt.config.output.dir.as_deref())?;
    snapshot(&dir, &ckpt.config)?;
    let files = ["crsc_pairs.csv", "gap_scatter.csv", "route_arrows.csv"].map(|f| dir.join(f));
    write_crsc_pairs(create(&files[0])?, &report.records)?;
    write_gap_scatter(create(&files[1])?, &report.records)?;
    write_route_arrows(create(&files[2])?, &report.records)?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(0)
}

#[derive(Serialize)]
struct LossCheck {
    loss: &'static str,
    worst_segment: String,
    #[serde(flatten)]
    report: GradCheckReport,
}

fn segment_of(params: &ParamVector, index: usize) -> String {
    params
        .segments()
        .iter()
        .find(|s| s.range().contains(&index))
        .map(|s| s.name.clone())
        .unwrap_or_default()
}

struct TinyBatch {
    regions: Vec<SubRegion>,
    targets: BatchTargets,
    routes: voxrel_core::tasks::RouteSet,
}

fn tiny_batch(config: &TrainConfig) -> Result<TinyBatch> {
    let volume = windowed(config, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 3));
    let regions = sample_subregions(&volume, &config.sampling_params(), &mut rng)?;
    let targets = BatchTargets::from_regions(&regions, config.member_voxels())?;
    let routes = enumerate_routes(config.sampling.alpha, config.tasks.route_cap, &mut rng)?;
    Ok(TinyBatch { regions, targets, routes })
}

pub fn gradcheck(
    out: Option<PathBuf>,
    args: ConfigArgs,
    tolerance: f64,
    step: f64,
    geometry_scale: f64,
    inject_fault: Option<usize>,
) -> Result<u8> {
    if !(tolerance > 0.0 && step > 0.0 && geometry_scale > 0.0) {
        return Err(Error::validation(
            "gradcheck",
            "tolerance, step and geometry scale must be positive",
        ));
    }
    let mut config = resolve_config(&args, &GRADCHECK_DEFAULTS)?;
    config.scale_geometry(geometry_scale);
    config.validate()?;
    let online = config.encoder.init_params(mix_seed(config.seed, 1));
    if let Some(i) = inject_fault {
        if i >= online.len() {
            return Err(Error::validation(
                "inject-fault",
                format!("index {i} outside 0..{}", online.len()),
            ));
        }
    }
    let momentum = online.select_prefix("enc.");
    let encoder = Encoder::new(config.encoder.clone())?;
    let batch = tiny_batch(&config)?;
    let dir = output_dir(out, config.output.dir.as_deref())?;
    snapshot(&dir, &config)?;

    let options = GradCheckOptions {
        step,
        tolerance,
        corrupt_index: inject_fault,
    };
    let with_mode = |mode| TaskConfig {
        route_mode: mode,
        ..config.tasks.clone()
    };
    let checks: [(&'static str, TaskConfig, usize); 5] = [
        ("crsc", config.tasks.clone(), 0),
        ("gmp", config.tasks.clone(), 1),
        ("rbcs_aggregate", with_mode(RouteMode::Aggregate), 2),
        ("rbcs_literal", with_mode(RouteMode::Literal), 2),
        ("total", config.tasks.clone(), 3),
    ];
    let mut results = Vec::new();
    let mut ok = true;
    for (name, tasks, pick) in checks {
        let report = grad_check(&online, options, |tape| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 4));
            let encoded = encode_batch(tape, &encoder, &momentum, &batch.regions, &mut rng).expect("batch encodes");
            let l = batch_losses(tape, &encoder, &encoded, &batch.targets, &batch.routes, &tasks).expect("losses");
            [l.crsc, l.gmp, l.rbcs, l.total][pick]
        })?;
        ok &= report.passed;
        let line = LossCheck {
            loss: name,
            worst_segment: segment_of(&online, report.worst_index),
            report,
        };
        println!("{}", serde_json::to_string(&line).expect("json"));
        results.push(line);
    }
    write_file(
        &dir.join("gradcheck.json"),
        serde_json::to_string_pretty(&results).expect("json"),
    )?;
    if ok {
        Ok(0)
    } else {
        let worst = results.iter().find(|r| !r.report.passed).expect("a failure");
        eprintln!(
            "gradient check failed for {} at parameter {} ({}): relative error {:.3e}",
            worst.loss, worst.report.worst_index, worst.worst_segment, worst.report.max_rel_error
        );
        Ok(2)
    }
}

pub fn inspect_unit(out: Option<PathBuf>, args: ConfigArgs, volume: u64) -> Result<u8> {
    let config = resolve_config(&args, &[])?;
    let vol = windowed(&config, volume)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, volume));
    let regions = sample_subregions(&vol, &config.sampling_params(), &mut rng)?;
    let targets = BatchTargets::from_regions(&regions, config.member_voxels())?;
    let units: Vec<_> = targets
        .units
        .iter()
        .map(|u| {
            json!({
                "parents": u.parents,
                "members": u.members,
                "adjacent_distance_mm": u.adjacent_distance(),
                "distant_distance_mm": u.distant_distance(),
            })
        })
        .collect();
    let n = targets.gaps.len();
    let gaps: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| targets.gaps.get(i, j)).collect()).collect();
    let doc = json!({
        "volume_id": vol.id(),
        "patch_voxels": config.patch_voxels(),
        "member_voxels": config.member_voxels(),
        "regions": RegionManifest::from_regions(vol.id(), &regions),
        "units": units,
        "gap_matrix_mm": gaps,
    });
    let dir = output_dir(out, config.output.dir.as_deref())?;
    snapshot(&dir, &config)?;
    let mut f = create(&dir.join("inspect.json"))?;
    f.write_all(serde_json::to_string_pretty(&doc).expect("json").as_bytes())
        .map_err(|e| Error::io(dir.join("inspect.json"), e))?;
    print_json(&doc);
    Ok(0)
}
