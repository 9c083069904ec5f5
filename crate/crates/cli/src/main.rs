use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "voxrel", version, about = "Spatial self-supervision on synthetic 3D volumes")]
struct Cli {
    /// Output directory. Defaults to `output.dir` from the config, then `./voxrel-out`.
    #[arg(long, global = true, env = "VOXREL_OUT")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// TOML config file; omitted sections take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Dotted-key override, e.g. `--set sampling.alpha=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write phantom volumes as raw files with metadata sidecars.
    GenData {
        /// Phantom spec TOML (same keys as the `[phantom]` config section).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Overrides the seed in the phantom file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the pretraining loop. Single-threaded and bitwise reproducible.
    Pretrain {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from a checkpoint instead of initializing.
        #[arg(long, conflicts_with_all = ["config", "overrides", "seed"])]
        resume: Option<PathBuf>,
        /// Total iteration target; overrides the config or checkpoint value.
        #[arg(long)]
        iterations: Option<u64>,
        /// Progress line on stderr every this many steps (0 disables).
        #[arg(long, default_value_t = 500)]
        log_every: u64,
    },
    /// Score a checkpoint on held-out phantom volumes.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 32)]
        volumes: usize,
        #[arg(long, default_value_t = 0)]
        eval_seed: u64,
    },
    /// Compare analytic and finite-difference gradients of every loss on a tiny batch.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        /// Multiplies all lengths in mm before checking. Losses are squared
        /// millimetres, and at full scale their magnitude swamps central
        /// differences in round-off.
        #[arg(long, default_value_t = 0.00390625)]
        geometry_scale: f64,
        /// Perturb the analytic gradient at this parameter index.
        #[arg(long, hide = true)]
        inject_fault: Option<usize>,
    },
    /// Write plot-ready CSVs (similarity pairs, gap scatter, route arrows).
    ExportViz {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 32)]
        volumes: usize,
        #[arg(long, default_value_t = 0)]
        eval_seed: u64,
    },
    /// Print the regions, coupled units and gap matrix of one sampled batch as JSON.
    InspectUnit {
        #[command(flatten)]
        config: ConfigArgs,
        /// Phantom instance to sample from.
        #[arg(long, default_value_t = 0)]
        volume: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let out = cli.out;
    let result = match cli.command {
        Command::GenData { spec, count, seed } => commands::gen_data(out, spec, count, seed),
        Command::Pretrain {
            config,
            resume,
            iterations,
            log_every,
        } => commands::pretrain(out, config, resume, iterations, log_every),
        Command::Evaluate {
            checkpoint,
            volumes,
            eval_seed,
        } => commands::evaluate(out, checkpoint, volumes, eval_seed),
        Command::Gradcheck {
            config,
            tolerance,
            step,
            geometry_scale,
            inject_fault,
        } => commands::gradcheck(out, config, tolerance, step, geometry_scale, inject_fault),
        Command::ExportViz {
            checkpoint,
            volumes,
            eval_seed,
        } => commands::export_viz(out, checkpoint, volumes, eval_seed),
        Command::InspectUnit { config, volume } => commands::inspect_unit(out, config, volume),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
