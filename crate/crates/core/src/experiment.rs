//! Commands behind the CLI: dataset generation, training runs, evaluation,
//! trajectory audits, plot data and the shot-count sweep.
//!
//! Run directory layout:
//!
//! ```text
//! <run_dir>/config.json      resolved configuration
//! <run_dir>/log.csv          one row per epoch
//! <run_dir>/checkpoints/     KTRJ, RPRM and OPTM files per stage and "final"
//! <run_dir>/report.json      final validation and test metrics
//! <run_dir>/plots/           trajectory and curve CSVs from plot-data
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{read_dataset, write_dataset, Dataset, Split, SplitManifest};
use crate::error::{Error, Result};
use crate::kinematics::{audit, project_feasible, FeasibilityReport, KinematicLimits};
use crate::metrics::MetricsReport;
use crate::nufft::NufftOp;
use crate::pipeline::{PipelineState, TrajectoryMode};
use crate::reconmodel::{init_params, ReconParams};
use crate::training::{self, TrainObserver, TrainReport, CHECKPOINT_DIR, LOG_FILE};
use crate::trajectory::{init_golden_angle, load_trajectory};

pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "report.json";
pub const PLOT_DIR: &str = "plots";
pub const CURVES_FILE: &str = "curves.csv";

/// Write the phantom dataset to `cfg.data_dir`.
pub fn generate_data(cfg: &ExperimentConfig, force: bool) -> Result<SplitManifest> {
    cfg.data.validate()?;
    write_dataset(&cfg.data, &cfg.data_dir, force)
}

/// Dataset from `cfg.data_dir`, checked against the configured frame shape.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    let ds = read_dataset(&cfg.data_dir)?;
    let d = &cfg.data;
    for seq in ds.train.iter().chain(&ds.test).chain(&ds.val) {
        if (seq.n_frames, seq.height, seq.width) != (d.n_frames, d.height, d.width) {
            return Err(Error::shape(
                format!("{}x{}x{} sequences", d.n_frames, d.height, d.width),
                format!("{}x{}x{}", seq.n_frames, seq.height, seq.width),
            ));
        }
    }
    Ok(ds)
}

/// Initial pipeline state: configured trajectory initialization (projected
/// onto the feasible set) and a freshly initialized reconstruction model.
pub fn initial_state(cfg: &ExperimentConfig) -> Result<PipelineState> {
    cfg.validate()?;
    let t = &cfg.trajectory;
    let traj = t.init.build(cfg.trajectory_frames(), t.n_shots, t.samples_per_shot, t.k_extent)?;
    let limits = cfg.limits();
    let (traj, _) = project_feasible(&traj, &limits, cfg.train.projection_iters)?;
    let recon = init_params(&cfg.recon, cfg.train.seed)?;
    let op = NufftOp::new(cfg.nufft.kind, cfg.data.height, cfg.data.width, cfg.nufft.kernel())?;
    PipelineState::new(traj, recon, limits, op, cfg.train.mode)
}

/// Golden-angle rotated radial sampling per frame with the untrained
/// reconstruction model. No optimizer is involved.
pub fn gar_state(cfg: &ExperimentConfig) -> Result<PipelineState> {
    cfg.validate()?;
    let t = &cfg.trajectory;
    let traj = init_golden_angle(cfg.data.n_frames, t.n_shots, t.samples_per_shot, t.k_extent)?;
    let recon = init_params(&cfg.recon, cfg.train.seed)?;
    let op = NufftOp::new(cfg.nufft.kind, cfg.data.height, cfg.data.width, cfg.nufft.kernel())?;
    PipelineState::new(traj, recon, cfg.limits(), op, TrajectoryMode::PerFrame)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub epochs: usize,
    pub resets: Vec<training::ResetEvent>,
    pub feasible: bool,
    pub val: Option<MetricsReport>,
    pub test: Option<MetricsReport>,
}

/// Train in memory without touching the disk.
pub fn train_in_memory(
    cfg: &ExperimentConfig,
    data: &Dataset,
    observer: &mut dyn TrainObserver,
) -> Result<(PipelineState, TrainReport)> {
    let mut state = initial_state(cfg)?;
    let report = training::run(&cfg.train, &data.train, &data.val, &mut state, observer, None)?;
    Ok((state, report))
}

/// Full training run into `cfg.run_dir`.
pub fn train(cfg: &ExperimentConfig, data: &Dataset, observer: &mut dyn TrainObserver) -> Result<RunReport> {
    cfg.validate()?;
    let dir = &cfg.run_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    cfg.save(&dir.join(CONFIG_FILE))?;
    let mut state = initial_state(cfg)?;
    let report = training::run(&cfg.train, &data.train, &data.val, &mut state, observer, Some(dir))?;
    let run = RunReport {
        config_hash: format!("{:016x}", cfg.hash()),
        epochs: report.rows.len(),
        resets: report.resets,
        feasible: report.rows.last().is_some_and(|r| r.feasible),
        val: report.final_val,
        test: (!data.test.is_empty()).then(|| training::evaluate(&state, &data.test)).transpose()?,
    };
    let path = dir.join(REPORT_FILE);
    fs::write(&path, serde_json::to_string_pretty(&run)?).map_err(|e| Error::io(&path, e))?;
    Ok(run)
}

/// Pipeline state restored from the final checkpoint of a run.
pub fn load_run_state(cfg: &ExperimentConfig, run_dir: &Path) -> Result<PipelineState> {
    let ck = run_dir.join(CHECKPOINT_DIR);
    if !ck.join("final.ktrj").exists() {
        return Err(Error::InvalidArgument(format!("{} has no final checkpoint", run_dir.display())));
    }
    let traj = load_trajectory(&ck.join("final.ktrj"))?;
    let recon = ReconParams::load(&ck.join("final.rprm"), &cfg.recon)?;
    let op = NufftOp::new(cfg.nufft.kind, cfg.data.height, cfg.data.width, cfg.nufft.kernel())?;
    let mut state = PipelineState::new(traj, recon, cfg.limits(), op, cfg.train.mode)?;
    state.set_regrid_scale(initial_state(cfg)?.regrid_scale())?;
    Ok(state)
}

/// Metrics of a trained run (or of the golden-angle baseline) on one split.
pub fn evaluate(cfg: &ExperimentConfig, run_dir: Option<&Path>, split: Split) -> Result<MetricsReport> {
    let data = load_data(cfg)?;
    let state = match run_dir {
        Some(dir) => load_run_state(cfg, dir)?,
        None => gar_state(cfg)?,
    };
    training::evaluate(&state, data.split(split))
}

pub fn audit_file(path: &Path, limits: &KinematicLimits, tol: f64) -> Result<FeasibilityReport> {
    limits.validate()?;
    Ok(audit(&load_trajectory(path)?, limits, tol))
}

/// Trajectory CSVs (one per frame) and the training curves of a run.
/// Returns the written files.
pub fn plot_data(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let traj_path = run_dir.join(CHECKPOINT_DIR).join("final.ktrj");
    if !traj_path.exists() {
        return Err(Error::InvalidArgument(format!("{} has no final checkpoint", run_dir.display())));
    }
    let traj = load_trajectory(&traj_path)?;
    let out = run_dir.join(PLOT_DIR);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut written = Vec::new();
    for t in 0..traj.n_frames() {
        let mut csv = String::from("frame,shot,sample,kx,ky\n");
        for s in 0..traj.n_shots() {
            for j in 0..traj.samples_per_shot() {
                let [kx, ky] = traj.point(t, s, j);
                writeln!(csv, "{t},{s},{j},{kx},{ky}").expect("writing to a string");
            }
        }
        let path = out.join(format!("trajectory_frame{t}.csv"));
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let log_path = run_dir.join(LOG_FILE);
    let log = fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut curves = String::from("epoch,train_loss,val_psnr,val_vif,val_fsim\n");
    for line in log.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(Error::Parse {
                format: "log.csv",
                section: "row",
            });
        }
        writeln!(curves, "{},{},{},{},{}", f[0], f[5], f[6], f[7], f[8]).expect("writing to a string");
    }
    let path = out.join(CURVES_FILE);
    fs::write(&path, curves).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: TrajectoryMode,
    pub n_shots: usize,
    pub psnr: f64,
    pub psnr_se: f64,
    pub vif: f64,
    pub fsim: f64,
}

pub const SWEEP_HEADER: &str = "mode,n_shots,psnr,psnr_se,vif,fsim";

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let mode = match self.mode {
            TrajectoryMode::Shared => "shared",
            TrajectoryMode::PerFrame => "per-frame",
        };
        format!("{mode},{},{},{},{},{}", self.n_shots, self.psnr, self.psnr_se, self.vif, self.fsim)
    }
}

/// Train every (mode, shot count) pair in memory and report final
/// validation metrics. Shared runs drop freezing.
pub fn shots_sweep(cfg: &ExperimentConfig, data: &Dataset, shots: &[usize], modes: &[TrajectoryMode]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &mode in modes {
        for &n in shots {
            let mut c = cfg.with_mode(mode);
            c.trajectory.n_shots = n;
            log::info!("sweep: {mode:?} with {n} shots");
            let (_, report) = train_in_memory(&c, data, &mut training::NoopObserver)?;
            let val = report
                .final_val
                .ok_or_else(|| Error::InvalidArgument("the sweep needs a validation split".into()))?;
            rows.push(SweepRow {
                mode,
                n_shots: n,
                psnr: val.psnr.mean,
                psnr_se: val.psnr.std_err,
                vif: val.vif.mean,
                fsim: val.fsim.mean,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut csv = format!("{SWEEP_HEADER}\n");
    for r in rows {
        csv.push_str(&r.to_csv());
        csv.push('\n');
    }
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}
