//! `ktraj`: dataset generation, training, evaluation, trajectory audits and
//! plot data for joint trajectory and reconstruction learning.
//!
//! Exit codes: 0 on success, 2 on configuration or usage errors, 3 when a
//! run aborts at runtime (I/O, non-finite loss, malformed files).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ktraj::config::{resolve, ExperimentConfig};
use ktraj::data::Split;
use ktraj::experiment;
use ktraj::pipeline::TrajectoryMode;
use ktraj::training::NoopObserver;
use ktraj::Error;

#[derive(Parser)]
#[command(name = "ktraj", version, about = "Joint k-space trajectory and reconstruction learning for dynamic MRI")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Named preset: full-scale or desk-small.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// JSON config file, merged over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.total_epochs=60`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Shared,
    PerFrame,
}

impl From<ModeArg> for TrajectoryMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Shared => TrajectoryMode::Shared,
            ModeArg::PerFrame => TrajectoryMode::PerFrame,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    Val,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic phantom dataset.
    GenerateData {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overwrite an existing dataset directory.
        #[arg(long)]
        force: bool,
    },
    /// Train trajectories and the reconstruction model.
    Train {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, overrides_with = "no_freeze")]
        freeze: bool,
        #[arg(long)]
        no_freeze: bool,
        #[arg(long, overrides_with = "no_resets")]
        resets: bool,
        #[arg(long)]
        no_resets: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Metrics of a trained run, or of the golden-angle baseline.
    Evaluate {
        #[arg(long, conflicts_with = "gar", required_unless_present = "gar")]
        run_dir: Option<PathBuf>,
        /// Golden-angle radial sampling with the untrained model.
        #[arg(long)]
        gar: bool,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a trajectory file against the configured hardware limits.
    Audit {
        file: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Emit trajectory and curve CSVs of a run for external plotting.
    PlotData {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Train each mode at several shot counts and write a summary CSV.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "4,6,8")]
        shots: Vec<usize>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "shared,per-frame")]
        modes: Vec<ModeArg>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
}

fn split_set(s: &str) -> Result<(String, String), Error> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut sets = cli.global.sets.iter().map(|s| split_set(s)).collect::<Result<Vec<_>, _>>()?;
    let mut push = |k: &str, v: String| sets.push((k.to_string(), v));
    let path_json = |p: &PathBuf| serde_json::Value::String(p.display().to_string()).to_string();
    match &cli.command {
        Command::GenerateData { out, seed, .. } => {
            if let Some(o) = out {
                push("data_dir", path_json(o));
            }
            if let Some(s) = seed {
                push("data.seed", s.to_string());
            }
        }
        Command::Train {
            mode,
            freeze,
            no_freeze,
            resets,
            no_resets,
            epochs,
            shots,
            seed,
            data_dir,
            run_dir,
        } => {
            if let Some(m) = mode {
                let name = match m {
                    ModeArg::Shared => "shared",
                    ModeArg::PerFrame => "per-frame",
                };
                push("train.mode", format!("\"{name}\""));
                if matches!(m, ModeArg::Shared) && !freeze {
                    push("train.freeze", "false".into());
                }
            }
            if *freeze || *no_freeze {
                push("train.freeze", freeze.to_string());
            }
            if *resets || *no_resets {
                push("train.resets", resets.to_string());
            }
            if let Some(e) = epochs {
                push("train.total_epochs", e.to_string());
            }
            if let Some(s) = shots {
                push("trajectory.n_shots", s.to_string());
            }
            if let Some(s) = seed {
                push("train.seed", s.to_string());
            }
            if let Some(d) = data_dir {
                push("data_dir", path_json(d));
            }
            if let Some(d) = run_dir {
                push("run_dir", path_json(d));
            }
        }
        Command::Evaluate { data_dir: Some(d), .. } | Command::Sweep { data_dir: Some(d), .. } => {
            push("data_dir", path_json(d));
        }
        _ => {}
    }
    let cfg: ExperimentConfig = resolve(cli.global.preset.as_deref(), cli.global.config.as_deref(), std::env::vars(), &sets)?;

    match cli.command {
        Command::GenerateData { force, .. } => {
            let m = experiment::generate_data(&cfg, force)?;
            println!(
                "wrote {} sequences to {} (train {}, test {}, val {})",
                m.train.len() + m.test.len() + m.val.len(),
                cfg.data_dir.display(),
                m.train.len(),
                m.test.len(),
                m.val.len()
            );
        }
        Command::Train { .. } => {
            let data = experiment::load_data(&cfg)?;
            let report = experiment::train(&cfg, &data, &mut NoopObserver)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Evaluate { run_dir, split, out, .. } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
                SplitArg::Val => Split::Val,
            };
            let report = experiment::evaluate(&cfg, run_dir.as_deref(), split)?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(&p, json).map_err(|e| Error::Io { path: p, source: e })?,
                None => println!("{json}"),
            }
        }
        Command::Audit { file, tol } => {
            let report = experiment::audit_file(&file, &cfg.limits(), tol)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::PlotData { run_dir } => {
            for p in experiment::plot_data(&run_dir)? {
                println!("{}", p.display());
            }
        }
        Command::Sweep { shots, modes, out, .. } => {
            let data = experiment::load_data(&cfg)?;
            let modes: Vec<TrajectoryMode> = modes.into_iter().map(Into::into).collect();
            let rows = experiment::shots_sweep(&cfg, &data, &shots, &modes)?;
            experiment::write_sweep_csv(&rows, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
