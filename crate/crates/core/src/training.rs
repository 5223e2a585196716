//! Training orchestration: the trajectory-freezing stage schedule,
//! reconstruction resets, projected optimizer steps, per-epoch validation,
//! logs and checkpoints.
//!
//! With freezing enabled a per-frame run proceeds in `n_frames + 1` stages:
//! `S1` learns the trajectory of frame 0, `S2.i` copies the learned trajectory
//! of frame `i - 1` into frame `i` and learns it, and `S3` learns every frame
//! jointly. Only the active frame block receives updates; the reconstruction
//! model trains throughout and is re-initialized after `S1` and after every
//! `S2.i`. Without freezing, a single stage trains everything and resets fire
//! every `reset_period` epochs.
//!
//! Trajectory learning rates are given in k-space grid units (cycles per field
//! of view) and divided by `max(H, W)` before being applied to the normalized
//! coordinates. The trajectory schedule restarts at every stage; the
//! reconstruction schedule follows the global epoch.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{augment_with, draw_decisions, FrameSequence, AUGMENT_PROBABILITY};
use crate::error::{Error, Result};
use crate::kinematics::{audit, project_frames_in_place, DEFAULT_PROJECTION_ITERS};
use crate::metrics::{frame_metrics, MetricsReport};
use crate::optimizer::{AdamConfig, AdamState, LrSchedule};
use crate::pipeline::{backward, forward_loss, PipelineState, TrajectoryMode, STRICT_AUDIT_TOL};
use crate::reconmodel::{init_params, ForwardMode};
use crate::trajectory::{clone_frame_in_place, fnv1a, save_trajectory};

pub const LOG_FILE: &str = "log.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LOG_HEADER: &str = "epoch,stage,active_frame,lr_traj,lr_recon,train_loss,val_psnr,val_vif,val_fsim,feasible";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_epochs: usize,
    pub epochs_per_stage: usize,
    /// Length of the joint stage; `epochs_per_stage` when absent.
    pub final_stage_epochs: Option<usize>,
    /// Reset period `c` without freezing.
    pub reset_period: usize,
    pub freeze: bool,
    pub resets: bool,
    pub mode: TrajectoryMode,
    pub batch_size: usize,
    /// Base seed of the reconstruction initialization, shuffling and augmentation.
    pub seed: u64,
    /// In grid units.
    pub traj_lr: LrSchedule,
    pub recon_lr: LrSchedule,
    pub adam: AdamConfig,
    pub projection_iters: usize,
    pub augment: bool,
    pub augment_probability: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_epochs: 315,
            epochs_per_stage: 35,
            final_stage_epochs: None,
            reset_period: 35,
            freeze: true,
            resets: true,
            mode: TrajectoryMode::PerFrame,
            batch_size: 12,
            seed: 0,
            traj_lr: LrSchedule::multiplicative(0.2, 0.7, 3),
            recon_lr: LrSchedule::multiplicative(1e-4, 0.995, 30),
            adam: AdamConfig::default(),
            projection_iters: DEFAULT_PROJECTION_ITERS,
            augment: true,
            augment_probability: AUGMENT_PROBABILITY,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 || self.batch_size == 0 || self.projection_iters == 0 {
            return Err(Error::Config("total_epochs, batch_size and projection_iters must be positive".into()));
        }
        if self.resets && !self.freeze && self.reset_period == 0 {
            return Err(Error::Config("reset_period must be positive".into()));
        }
        if self.freeze && self.mode == TrajectoryMode::Shared {
            return Err(Error::Config("trajectory freezing needs per-frame trajectories".into()));
        }
        if !(0.0..=1.0).contains(&self.augment_probability) {
            return Err(Error::Config("augment_probability must lie in [0, 1]".into()));
        }
        self.adam.validate()?;
        self.traj_lr.validate(self.total_epochs)?;
        self.recon_lr.validate(self.total_epochs)
    }

    pub fn hash(&self) -> u64 {
        fnv1a(serde_json::to_vec(self).expect("config serializes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Learn the trajectory of frame 0.
    First,
    /// Learn the trajectory of frame `i`, initialized from frame `i - 1`.
    Frame(usize),
    /// Learn every frame jointly after the frame-by-frame stages.
    Joint,
    /// The single stage of a run without freezing.
    All,
}

impl Stage {
    /// Trajectory frame blocks that receive updates.
    pub fn active_frames(self, n_traj_frames: usize) -> Vec<usize> {
        match self {
            Stage::First => vec![0],
            Stage::Frame(i) => vec![i],
            Stage::Joint | Stage::All => (0..n_traj_frames).collect(),
        }
    }

    /// Active frame for the log, `None` when all frames train.
    pub fn active_frame(self) -> Option<usize> {
        match self {
            Stage::First => Some(0),
            Stage::Frame(i) => Some(i),
            Stage::Joint | Stage::All => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::First => write!(f, "S1"),
            Stage::Frame(i) => write!(f, "S2.{i}"),
            Stage::Joint => write!(f, "S3"),
            Stage::All => write!(f, "all"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagePlan {
    pub stage: Stage,
    pub start_epoch: usize,
    pub epochs: usize,
}

impl StagePlan {
    pub fn end_epoch(&self) -> usize {
        self.start_epoch + self.epochs
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeSchedule {
    pub stages: Vec<StagePlan>,
}

impl FreezeSchedule {
    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs).sum()
    }

    pub fn stage_at(&self, epoch: usize) -> Option<&StagePlan> {
        self.stages.iter().find(|s| (s.start_epoch..s.end_epoch()).contains(&epoch))
    }
}

/// Stage sequence for `n_frames` frames.
pub fn build_schedule(config: &TrainConfig, n_frames: usize) -> Result<FreezeSchedule> {
    if n_frames == 0 {
        return Err(Error::Config("at least one frame is required".into()));
    }
    if !config.freeze {
        return Ok(FreezeSchedule {
            stages: vec![StagePlan {
                stage: Stage::All,
                start_epoch: 0,
                epochs: config.total_epochs,
            }],
        });
    }
    if config.epochs_per_stage == 0 {
        return Err(Error::Config("epochs_per_stage must be positive".into()));
    }
    let mut kinds = vec![Stage::First];
    kinds.extend((1..n_frames).map(Stage::Frame));
    kinds.push(Stage::Joint);
    let final_epochs = config.final_stage_epochs.unwrap_or(config.epochs_per_stage);
    let mut start = 0;
    let stages = kinds
        .into_iter()
        .map(|stage| {
            let epochs = if stage == Stage::Joint { final_epochs } else { config.epochs_per_stage };
            let plan = StagePlan {
                stage,
                start_epoch: start,
                epochs,
            };
            start += epochs;
            plan
        })
        .collect();
    let schedule = FreezeSchedule { stages };
    if schedule.total_epochs() != config.total_epochs {
        return Err(Error::Config(format!(
            "freezing schedule for {n_frames} frames spans {} epochs but total_epochs is {}",
            schedule.total_epochs(),
            config.total_epochs
        )));
    }
    Ok(schedule)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResetEvent {
    /// Epoch at whose start the reset fired.
    pub epoch: usize,
    /// 1 for the first reset.
    pub index: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub stage: String,
    pub active_frame: Option<usize>,
    /// Grid units.
    pub lr_traj: f64,
    pub lr_recon: f64,
    pub train_loss: f64,
    pub val_psnr: Option<f64>,
    pub val_vif: Option<f64>,
    pub val_fsim: Option<f64>,
    pub feasible: bool,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.stage,
            self.active_frame.map(|f| f.to_string()).unwrap_or_else(|| "all".into()),
            self.lr_traj,
            self.lr_recon,
            self.train_loss,
            opt(self.val_psnr),
            opt(self.val_vif),
            opt(self.val_fsim),
            self.feasible
        )
    }
}

/// Hooks into a training run. Every method defaults to doing nothing.
pub trait TrainObserver {
    /// After stage setup (trajectory copy, reset), before the first epoch.
    fn stage_started(&mut self, _plan: &StagePlan, _state: &PipelineState) {}
    fn reset(&mut self, _event: &ResetEvent, _state: &PipelineState, _recon_opt: &AdamState) {}
    fn epoch_finished(&mut self, _row: &LogRow, _state: &PipelineState) {}
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<LogRow>,
    pub resets: Vec<ResetEvent>,
    /// Validation metrics after the last epoch.
    pub final_val: Option<MetricsReport>,
}

/// Metrics of the reconstructions of every sequence in `split`, outputs
/// clamped to `[0, 1]`.
pub fn evaluate(state: &PipelineState, split: &[FrameSequence]) -> Result<MetricsReport> {
    if split.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let per_frame = split
        .par_iter()
        .map(|seq| {
            let out = state.reconstruct(seq)?;
            (0..seq.n_frames)
                .map(|t| frame_metrics(&seq.magnitude(t), out.frame(t), seq.height, seq.width))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_frames(per_frame))
}

struct Outputs {
    log: fs::File,
    checkpoints: PathBuf,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self> {
        let checkpoints = dir.join(CHECKPOINT_DIR);
        fs::create_dir_all(&checkpoints).map_err(|e| Error::io(&checkpoints, e))?;
        let path = dir.join(LOG_FILE);
        let mut log = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(log, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
        Ok(Self { log, checkpoints })
    }

    fn row(&mut self, row: &LogRow) -> Result<()> {
        writeln!(self.log, "{}", row.to_csv()).map_err(|e| Error::io(LOG_FILE, e))
    }

    fn checkpoint(&self, tag: &str, state: &PipelineState, recon_opt: &AdamState, traj_opts: &[AdamState]) -> Result<()> {
        let with = |ext: &str| self.checkpoints.join(format!("{tag}.{ext}"));
        save_trajectory(&state.traj, &with("ktrj"))?;
        state.recon.save(&with("rprm"))?;
        recon_opt.save(&with("recon.optm"), state.recon.config().hash())?;
        let frame_hash = fnv1a(state.traj.shape_string().into_bytes());
        for (f, opt) in traj_opts.iter().enumerate() {
            opt.save(&with(&format!("traj{f}.optm")), frame_hash)?;
        }
        Ok(())
    }
}

fn non_finite(v: &[f64]) -> bool {
    v.iter().any(|x| !x.is_finite())
}

/// Train `state` in place. With `out`, writes `log.csv` and per-stage
/// checkpoints under it (the directory is created if needed).
pub fn run(
    config: &TrainConfig,
    train: &[FrameSequence],
    val: &[FrameSequence],
    state: &mut PipelineState,
    observer: &mut dyn TrainObserver,
    out: Option<&Path>,
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    if config.mode != state.mode {
        return Err(Error::Config(format!(
            "training config is for {:?} trajectories but the pipeline is {:?}",
            config.mode, state.mode
        )));
    }
    let n_frames = train[0].n_frames;
    let schedule = build_schedule(config, state.traj.n_frames())?;
    if state.mode == TrajectoryMode::PerFrame && state.traj.n_frames() != n_frames {
        return Err(Error::shape(
            format!("{n_frames} trajectory frames"),
            format!("{}", state.traj.n_frames()),
        ));
    }
    let (h, w) = state.nufft.shape();
    let grid = h.max(w) as f64;
    let mut outputs = out.map(Outputs::create).transpose()?;

    let frame_len = state.traj.frame_len();
    let mut recon_opt = AdamState::new(state.recon.len(), config.adam);
    let mut traj_opts: Vec<AdamState> = (0..state.traj.n_frames()).map(|_| AdamState::new(frame_len, config.adam)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e00_0000);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rows = Vec::with_capacity(config.total_epochs);
    let mut resets = Vec::new();
    let mut last_val = None;

    for (stage_index, plan) in schedule.stages.iter().enumerate() {
        if let Stage::Frame(i) = plan.stage {
            clone_frame_in_place(i - 1, i, &mut state.traj)?;
        }
        let active = plan.stage.active_frames(state.traj.n_frames());
        observer.stage_started(plan, state);
        for epoch in plan.start_epoch..plan.end_epoch() {
            let boundary_reset = config.freeze && epoch == plan.start_epoch && stage_index > 0;
            let periodic_reset = !config.freeze && epoch > 0 && epoch % config.reset_period.max(1) == 0;
            if config.resets && (boundary_reset || periodic_reset) {
                let index = resets.len() as u64 + 1;
                let event = ResetEvent {
                    epoch,
                    index,
                    seed: config.seed.wrapping_add(index),
                };
                state.recon.reset(event.seed);
                recon_opt.reset();
                log::info!("epoch {epoch}: reconstruction reset #{index} (seed {})", event.seed);
                observer.reset(&event, state, &recon_opt);
                resets.push(event);
            }

            let lr_traj = config.traj_lr.lr_at_epoch(epoch - plan.start_epoch);
            let lr_recon = config.recon_lr.lr_at_epoch(epoch);
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for (b, chunk) in order.chunks(config.batch_size).enumerate() {
                let batch: Vec<FrameSequence> = chunk
                    .iter()
                    .map(|&i| {
                        let seq = &train[i];
                        if config.augment {
                            augment_with(seq, &draw_decisions(&mut rng, seq.height, seq.width, config.augment_probability))
                        } else {
                            seq.clone()
                        }
                    })
                    .collect();
                let mode = ForwardMode {
                    dropout_seed: (state.recon.config().dropout > 0.0).then(|| rng.gen()),
                };
                let (loss, cache) = forward_loss(state, &batch, mode)?;
                let (g_traj, g_recon) = backward(state, &cache)?;
                if !loss.is_finite() || non_finite(&g_traj) || non_finite(&g_recon) {
                    return Err(Error::Aborted(format!(
                        "non-finite loss or gradient at epoch {epoch}, stage {}, batch {b} (loss {loss})",
                        plan.stage
                    )));
                }
                loss_sum += loss * chunk.len() as f64;
                recon_opt.step(&mut state.recon.values, &g_recon, lr_recon)?;
                for &f in &active {
                    let range = f * frame_len..(f + 1) * frame_len;
                    traj_opts[f].step(&mut state.traj.as_mut_slice()[range.clone()], &g_traj[range], lr_traj / grid)?;
                }
                project_frames_in_place(&mut state.traj, &active, &state.limits, config.projection_iters)?;
            }

            let feasible = audit(&state.traj, &state.limits, STRICT_AUDIT_TOL).feasible;
            let val_report = if val.is_empty() { None } else { Some(evaluate(state, val)?) };
            let row = LogRow {
                epoch,
                stage: plan.stage.to_string(),
                active_frame: plan.stage.active_frame(),
                lr_traj,
                lr_recon,
                train_loss: loss_sum / train.len() as f64,
                val_psnr: val_report.as_ref().map(|r| r.psnr.mean),
                val_vif: val_report.as_ref().map(|r| r.vif.mean),
                val_fsim: val_report.as_ref().map(|r| r.fsim.mean),
                feasible,
            };
            log::info!(
                "epoch {epoch} [{}] loss {:.6e} val psnr {}",
                row.stage,
                row.train_loss,
                row.val_psnr.map(|p| format!("{p:.3}")).unwrap_or_else(|| "-".into())
            );
            if let Some(o) = outputs.as_mut() {
                o.row(&row)?;
            }
            observer.epoch_finished(&row, state);
            rows.push(row);
            last_val = val_report;
        }
        if let Some(o) = outputs.as_ref() {
            o.checkpoint(&format!("stage{stage_index:02}_{}", plan.stage), state, &recon_opt, &traj_opts)?;
        }
    }
    if let Some(o) = outputs.as_ref() {
        o.checkpoint("final", state, &recon_opt, &traj_opts)?;
    }
    Ok(TrainReport {
        rows,
        resets,
        final_val: last_val,
    })
}

/// The reconstruction parameters a reset with `event` must produce.
pub fn reset_reference(state: &PipelineState, event: &ResetEvent) -> Result<Vec<f64>> {
    Ok(init_params(state.recon.config(), event.seed)?.values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn freezing(per_stage: usize, total: usize) -> TrainConfig {
        TrainConfig {
            total_epochs: total,
            epochs_per_stage: per_stage,
            ..Default::default()
        }
    }

    #[test]
    fn full_budget_for_eight_frames() {
        let s = build_schedule(&freezing(35, 315), 8).unwrap();
        assert_eq!(s.stages.len(), 9);
        assert_eq!(s.total_epochs(), 315);
        assert_eq!(s.stage_at(34).unwrap().stage, Stage::First);
        assert_eq!(s.stage_at(35).unwrap().stage, Stage::Frame(1));
        assert_eq!(s.stage_at(314).unwrap().stage, Stage::Joint);
        assert!(s.stage_at(315).is_none());
    }

    #[test]
    fn inconsistent_budget_is_rejected() {
        assert!(matches!(build_schedule(&freezing(35, 300), 8), Err(Error::Config(_))));
    }

    #[test]
    fn csv_row_format() {
        let row = LogRow {
            epoch: 3,
            stage: "S2.1".into(),
            active_frame: Some(1),
            lr_traj: 0.14,
            lr_recon: 1e-4,
            train_loss: 0.5,
            val_psnr: None,
            val_vif: Some(0.25),
            val_fsim: None,
            feasible: true,
        };
        assert_eq!(row.to_csv(), "3,S2.1,1,0.14,0.0001,0.5,,0.25,,true");
        assert_eq!(LOG_HEADER.split(',').count(), row.to_csv().split(',').count());
    }
}
