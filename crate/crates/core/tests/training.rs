use ktraj::config::ExperimentConfig;
use ktraj::data::{DataConfig, Dataset, FrameSequence};
use ktraj::experiment::initial_state;
use ktraj::nufft::NufftKind;
use ktraj::optimizer::AdamState;
use ktraj::pipeline::{PipelineState, TrajectoryMode};
use ktraj::reconmodel::{init_params, ReconConfig};
use ktraj::training::*;
use ktraj::trajectory::TrajectorySet;
use ktraj::Error;
use num_complex::Complex32;

fn tiny(n_frames: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.data = DataConfig {
        height: 16,
        width: 16,
        n_frames,
        n_sequences: 8,
        fractions: [0.5, 0.25, 0.25],
        seed: 3,
    };
    c.trajectory.n_shots = 2;
    c.trajectory.samples_per_shot = 16;
    c.nufft.kind = NufftKind::Direct;
    c.recon = ReconConfig {
        base_channels: 2,
        ..Default::default()
    };
    c.train = TrainConfig {
        total_epochs: n_frames + 1,
        epochs_per_stage: 1,
        batch_size: 2,
        seed: 11,
        recon_lr: ktraj::optimizer::LrSchedule::multiplicative(1e-2, 0.995, 30),
        ..Default::default()
    };
    c
}

fn dataset(c: &ExperimentConfig) -> Dataset {
    c.data.build().unwrap()
}

fn stages(c: &TrainConfig, n: usize) -> Vec<(Stage, usize, usize)> {
    build_schedule(c, n).unwrap().stages.iter().map(|p| (p.stage, p.start_epoch, p.epochs)).collect()
}

#[test]
fn schedule_stage_sequences() {
    let mut c = TrainConfig {
        total_epochs: 70,
        ..Default::default()
    };
    assert_eq!(stages(&c, 1), vec![(Stage::First, 0, 35), (Stage::Joint, 35, 35)]);
    c.total_epochs = 140;
    assert_eq!(
        stages(&c, 3),
        vec![(Stage::First, 0, 35), (Stage::Frame(1), 35, 35), (Stage::Frame(2), 70, 35), (Stage::Joint, 105, 35)]
    );
    c.total_epochs = 315;
    let mut expect = vec![(Stage::First, 0, 35)];
    expect.extend((1..8).map(|i| (Stage::Frame(i), 35 * i, 35)));
    expect.push((Stage::Joint, 280, 35));
    assert_eq!(stages(&c, 8), expect);
    assert_eq!(build_schedule(&c, 8).unwrap().total_epochs(), 315);

    c.final_stage_epochs = Some(12);
    c.epochs_per_stage = 6;
    c.total_epochs = 60;
    assert_eq!(build_schedule(&c, 8).unwrap().stages.last().unwrap().epochs, 12);
    c.freeze = false;
    assert_eq!(stages(&c, 8), vec![(Stage::All, 0, 60)]);
}

#[test]
fn stage_labels_and_active_frames() {
    assert_eq!(Stage::First.to_string(), "S1");
    assert_eq!(Stage::Frame(3).to_string(), "S2.3");
    assert_eq!(Stage::Joint.to_string(), "S3");
    assert_eq!(Stage::Frame(2).active_frames(4), vec![2]);
    assert_eq!(Stage::Joint.active_frames(3), vec![0, 1, 2]);
}

#[derive(Default)]
struct Recorder {
    stage_start: Option<(StagePlan, TrajectorySet)>,
    epoch_start: Option<TrajectorySet>,
    violations: Vec<String>,
    resets_checked: usize,
    active_moved: usize,
    epochs: usize,
}

impl TrainObserver for Recorder {
    fn stage_started(&mut self, plan: &StagePlan, state: &PipelineState) {
        if let Stage::Frame(i) = plan.stage {
            if state.traj.frame(i) != state.traj.frame(i - 1) {
                self.violations.push(format!("frame {i} not initialized from frame {}", i - 1));
            }
        }
        self.stage_start = Some((*plan, state.traj.clone()));
        self.epoch_start = Some(state.traj.clone());
    }

    fn reset(&mut self, event: &ResetEvent, state: &PipelineState, opt: &AdamState) {
        let fresh = init_params(state.recon.config(), event.seed).unwrap();
        if state.recon.values != fresh.values {
            self.violations.push(format!("reset {} does not match seeded init", event.index));
        }
        if opt.step != 0 || opt.m.iter().chain(&opt.v).any(|&x| x != 0.0) {
            self.violations.push(format!("reset {} left optimizer moments", event.index));
        }
        self.resets_checked += 1;
    }

    fn epoch_finished(&mut self, row: &LogRow, state: &PipelineState) {
        let (plan, _) = self.stage_start.as_ref().unwrap();
        let before = self.epoch_start.replace(state.traj.clone()).unwrap();
        let active = plan.stage.active_frames(state.traj.n_frames());
        for t in 0..state.traj.n_frames() {
            let same = before.frame(t).iter().zip(state.traj.frame(t)).all(|(a, b)| a.to_bits() == b.to_bits());
            if active.contains(&t) {
                self.active_moved += (!same) as usize;
            } else if !same {
                self.violations.push(format!("epoch {}: frozen frame {t} moved", row.epoch));
            }
        }
        if !row.feasible {
            self.violations.push(format!("epoch {} infeasible", row.epoch));
        }
        self.epochs += 1;
    }
}

#[test]
fn freezing_and_reset_contracts_hold_on_a_smoke_run() {
    let c = tiny(2);
    let data = dataset(&c);
    let mut state = initial_state(&c).unwrap();
    let mut rec = Recorder::default();
    let report = run(&c.train, &data.train, &data.val, &mut state, &mut rec, None).unwrap();
    assert!(rec.violations.is_empty(), "{:?}", rec.violations);
    assert_eq!(rec.epochs, 3);
    assert_eq!(rec.resets_checked, 2);
    assert!(rec.active_moved >= 3, "active blocks did not train");
    let labels: Vec<_> = report.rows.iter().map(|r| (r.stage.as_str(), r.active_frame)).collect();
    assert_eq!(labels, vec![("S1", Some(0)), ("S2.1", Some(1)), ("S3", None)]);
    assert_eq!(report.resets.iter().map(|r| (r.epoch, r.seed)).collect::<Vec<_>>(), vec![(1, 12), (2, 13)]);
    // The trajectory schedule restarts with every stage.
    assert!(report.rows.iter().all(|r| r.lr_traj == 0.2));
    assert!(report.final_val.is_some());
}

#[test]
fn periodic_resets_without_freezing() {
    let mut c = tiny(2);
    c.train.freeze = false;
    c.train.total_epochs = 5;
    c.train.reset_period = 2;
    let data = dataset(&c);
    let mut state = initial_state(&c).unwrap();
    let mut rec = Recorder::default();
    let report = run(&c.train, &data.train, &data.val, &mut state, &mut rec, None).unwrap();
    assert!(rec.violations.is_empty(), "{:?}", rec.violations);
    assert_eq!(report.resets.iter().map(|r| (r.epoch, r.index)).collect::<Vec<_>>(), vec![(2, 1), (4, 2)]);
    assert!(report.rows.iter().all(|r| r.stage == "all" && r.active_frame.is_none()));

    c.train.resets = false;
    let mut state = initial_state(&c).unwrap();
    let report = run(&c.train, &data.train, &data.val, &mut state, &mut NoopObserver, None).unwrap();
    assert!(report.resets.is_empty());
}

#[test]
fn shared_mode_trains_one_trajectory() {
    let mut c = tiny(2).with_mode(TrajectoryMode::Shared);
    c.train.total_epochs = 2;
    let data = dataset(&c);
    let mut state = initial_state(&c).unwrap();
    let before = state.traj.clone();
    run(&c.train, &data.train, &[], &mut state, &mut NoopObserver, None).unwrap();
    assert_eq!(state.traj.n_frames(), 1);
    assert_ne!(state.traj, before);
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let c = tiny(2);
    let data = dataset(&c);
    let go = || {
        let mut state = initial_state(&c).unwrap();
        let r = run(&c.train, &data.train, &data.val, &mut state, &mut NoopObserver, None).unwrap();
        (r.rows.iter().map(LogRow::to_csv).collect::<Vec<_>>(), state.traj, state.recon.values)
    };
    assert_eq!(go(), go());
}

#[test]
fn non_finite_loss_aborts() {
    let c = tiny(2);
    let mut data = dataset(&c);
    data.train[0].frames[5] = Complex32::new(f32::NAN, 0.0);
    let mut state = initial_state(&c).unwrap();
    let err = run(&c.train, &data.train, &[], &mut state, &mut NoopObserver, None).unwrap_err();
    assert!(matches!(err, Error::Aborted(ref m) if m.contains("epoch 0")), "{err}");
}

#[test]
fn invalid_inputs_are_rejected() {
    let c = tiny(2);
    let data = dataset(&c);
    let mut state = initial_state(&c).unwrap();
    assert!(run(&c.train, &[], &data.val, &mut state, &mut NoopObserver, None).is_err());
    let mut bad = c.train.clone();
    bad.total_epochs = 7;
    assert!(matches!(run(&bad, &data.train, &[], &mut state, &mut NoopObserver, None), Err(Error::Config(_))));
    let mut s2 = c.train.clone();
    s2.mode = TrajectoryMode::Shared;
    s2.freeze = false;
    assert!(matches!(run(&s2, &data.train, &[], &mut state, &mut NoopObserver, None), Err(Error::Config(_))));
}

fn cartesian_state(size: usize) -> PipelineState {
    let mut c = tiny(2);
    c.data.height = size;
    c.data.width = size;
    let mut coords = Vec::new();
    for p in 0..size {
        for q in 0..size {
            coords.push((p as f64 - (size / 2) as f64) / size as f64);
            coords.push((q as f64 - (size / 2) as f64) / size as f64);
        }
    }
    let one = TrajectorySet::from_coords(1, size, size, coords).unwrap();
    let mut state = initial_state(&c).unwrap();
    state.traj = one.broadcast_frame(0, 2).unwrap();
    PipelineState::new(state.traj.clone(), state.recon.clone(), state.limits, state.nufft.clone(), state.mode).unwrap()
}

#[test]
fn perfect_reconstruction_scores_at_the_fixed_points() {
    let state = cartesian_state(32);
    let mut c = tiny(2);
    c.data.height = 32;
    c.data.width = 32;
    let data = dataset(&c);
    let r = evaluate(&state, &data.val).unwrap();
    assert_eq!(r.psnr.mean, ktraj::metrics::PSNR_CAP_DB);
    assert!((r.vif.mean - 1.0).abs() <= 1e-6, "vif {}", r.vif.mean);
    assert!((r.fsim.mean - 1.0).abs() <= 1e-6, "fsim {}", r.fsim.mean);
    assert_eq!(r.per_frame.len(), data.val.len());
}

#[test]
fn evaluation_ignores_split_order() {
    let c = tiny(2);
    let data = dataset(&c);
    let state = initial_state(&c).unwrap();
    let all: Vec<FrameSequence> = data.train.iter().chain(&data.val).cloned().collect();
    let rev: Vec<FrameSequence> = all.iter().rev().cloned().collect();
    let a = evaluate(&state, &all).unwrap();
    let b = evaluate(&state, &rev).unwrap();
    assert_eq!((a.psnr, a.vif, a.fsim), (b.psnr, b.vif, b.fsim));
    assert!(evaluate(&state, &[]).is_err());
}

#[test]
fn run_directory_outputs() {
    let c = tiny(2);
    let data = dataset(&c);
    let dir = tempfile::tempdir().unwrap();
    let mut state = initial_state(&c).unwrap();
    run(&c.train, &data.train, &data.val, &mut state, &mut NoopObserver, Some(dir.path())).unwrap();
    let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], LOG_HEADER);
    assert_eq!(lines.len(), 4);
    let ck = dir.path().join(CHECKPOINT_DIR);
    for tag in ["stage00_S1", "stage01_S2.1", "stage02_S3", "final"] {
        for ext in ["ktrj", "rprm", "recon.optm", "traj0.optm", "traj1.optm"] {
            assert!(ck.join(format!("{tag}.{ext}")).exists(), "{tag}.{ext}");
        }
    }
    let reloaded = ktraj::trajectory::load_trajectory(&ck.join("final.ktrj")).unwrap();
    assert_eq!(reloaded, state.traj);
}
