//! End-to-end differentiable map from fully sampled sequences to the
//! reconstruction loss: subsample every frame on its trajectory with the
//! forward NUFFT, regrid with the scaled adjoint, reconstruct all frames, and
//! compare magnitudes with a mean squared error.
//!
//! The regridded frame is `s * F*(F(Z))`. The constant `s = H W / |F(1)|^2`
//! makes regridding reproduce a constant image in the least-squares sense; it
//! is averaged over the frames of the trajectory the state is built with and
//! stays fixed while the trajectory trains. Sampling every
//! Cartesian grid point gives `s = 1 / (H W)`, which returns the frame
//! unchanged. Trajectory gradients include the coordinate dependence of both
//! the forward and the adjoint transform.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::kinematics::{audit, KinematicLimits};
use crate::nufft::{ComplexImage, KSamples, NufftOp};
use crate::reconmodel::{self, ForwardMode, ReconCache, ReconInput, ReconOutput, ReconParams};
use crate::trajectory::TrajectorySet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryMode {
    /// One trajectory, used for every frame.
    Shared,
    /// An independent trajectory per frame.
    PerFrame,
}

/// Relative tolerance of the strict-mode audit.
pub const STRICT_AUDIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct PipelineState {
    /// One frame in shared mode, `n_frames` frames in per-frame mode.
    pub traj: TrajectorySet,
    pub recon: ReconParams,
    pub limits: KinematicLimits,
    pub nufft: NufftOp,
    pub mode: TrajectoryMode,
    /// Refuse to run on trajectories that fail the feasibility audit.
    pub strict: bool,
    regrid_scale: f64,
}

impl PipelineState {
    pub fn new(
        traj: TrajectorySet,
        recon: ReconParams,
        limits: KinematicLimits,
        nufft: NufftOp,
        mode: TrajectoryMode,
    ) -> Result<Self> {
        if mode == TrajectoryMode::Shared && traj.n_frames() != 1 {
            return Err(Error::InvalidArgument(format!(
                "shared mode needs a single-frame trajectory, got {} frames",
                traj.n_frames()
            )));
        }
        let (h, w) = nufft.shape();
        recon.config().check_shape(h, w)?;
        let regrid_scale = mean_preserving_scale(&nufft, &traj)?;
        Ok(Self {
            traj,
            recon,
            limits,
            nufft,
            mode,
            strict: false,
            regrid_scale,
        })
    }

    pub fn regrid_scale(&self) -> f64 {
        self.regrid_scale
    }

    /// Pin the regridding constant, e.g. to the value of the trajectory a
    /// checkpoint was trained from.
    pub fn set_regrid_scale(&mut self, s: f64) -> Result<()> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidArgument(format!("regrid scale {s} must be finite and positive")));
        }
        self.regrid_scale = s;
        Ok(())
    }

    /// Trajectory frame used to sample frame `t` of a sequence.
    pub fn traj_frame(&self, t: usize) -> usize {
        match self.mode {
            TrajectoryMode::Shared => 0,
            TrajectoryMode::PerFrame => t,
        }
    }

    fn check_sequence(&self, seq: &FrameSequence) -> Result<()> {
        let (h, w) = self.nufft.shape();
        if (seq.height, seq.width) != (h, w) {
            return Err(Error::shape(format!("{h}x{w} frames"), format!("{}x{}", seq.height, seq.width)));
        }
        if self.mode == TrajectoryMode::PerFrame && seq.n_frames != self.traj.n_frames() {
            return Err(Error::shape(
                format!("{} frames", self.traj.n_frames()),
                format!("{} frames", seq.n_frames),
            ));
        }
        Ok(())
    }

    fn check_feasible(&self) -> Result<()> {
        if self.strict {
            let report = audit(&self.traj, &self.limits, STRICT_AUDIT_TOL);
            if !report.feasible {
                return Err(Error::Infeasible(serde_json::to_string(&report)?));
            }
        }
        Ok(())
    }

    /// Subsample and regrid one sequence.
    fn simulate(&self, seq: &FrameSequence) -> Result<(Vec<ComplexImage>, Vec<KSamples>, ReconInput)> {
        self.check_sequence(seq)?;
        let s = self.regrid_scale();
        let n_shots = self.traj.n_shots();
        let frames: Vec<(ComplexImage, KSamples, ComplexImage)> = (0..seq.n_frames)
            .into_par_iter()
            .map(|t| {
                let z = seq.image(t);
                let coords = self.traj.frame(self.traj_frame(t));
                let x = self.nufft.forward(&z, coords, n_shots)?;
                let zt = self.nufft.adjoint(&x, coords)?;
                Ok((z, x, zt))
            })
            .collect::<Result<_>>()?;
        let mut input = ReconInput::zeros(seq.n_frames, seq.height, seq.width);
        let hw = seq.height * seq.width;
        let mut images = Vec::with_capacity(seq.n_frames);
        let mut samples = Vec::with_capacity(seq.n_frames);
        for (t, (z, x, zt)) in frames.into_iter().enumerate() {
            let f = input.frame_mut(t);
            for (i, v) in zt.data.iter().enumerate() {
                f[i] = s * v.re;
                f[hw + i] = s * v.im;
            }
            images.push(z);
            samples.push(x);
        }
        Ok((images, samples, input))
    }

    /// Regridded frames of one sequence, as fed to the reconstruction model.
    pub fn regrid(&self, seq: &FrameSequence) -> Result<ReconInput> {
        self.simulate(seq).map(|(_, _, input)| input)
    }

    /// Inference: reconstructed magnitudes of one sequence.
    pub fn reconstruct(&self, seq: &FrameSequence) -> Result<ReconOutput> {
        self.check_feasible()?;
        reconmodel::predict(&self.recon, &self.regrid(seq)?)
    }
}

/// Everything [`backward`] needs.
#[derive(Debug)]
pub struct PipelineCache {
    traj_hash: u64,
    recon_hash: u64,
    norm: f64,
    items: Vec<ItemCache>,
}

#[derive(Debug)]
struct ItemCache {
    images: Vec<ComplexImage>,
    samples: Vec<KSamples>,
    recon: ReconCache,
    output: ReconOutput,
    target: Vec<f64>,
}

impl PipelineCache {
    pub fn outputs(&self) -> impl Iterator<Item = &ReconOutput> {
        self.items.iter().map(|i| &i.output)
    }
}

/// `H W / |F(1)|^2` averaged over frames, capped at 1.
pub fn mean_preserving_scale(op: &NufftOp, traj: &TrajectorySet) -> Result<f64> {
    let (h, w) = op.shape();
    let hw = (h * w) as f64;
    let ones = ComplexImage::from_real(h, w, &vec![1.0; h * w])?;
    let mut energy = 0.0;
    for t in 0..traj.n_frames() {
        energy += op.forward(&ones, traj.frame(t), traj.n_shots())?.values.iter().map(|v| v.norm_sqr()).sum::<f64>();
    }
    Ok(hw / (energy / traj.n_frames() as f64).max(hw))
}

fn traj_hash(t: &TrajectorySet) -> u64 {
    (0..t.n_frames()).fold(0u64, |acc, f| acc.rotate_left(7) ^ t.frame_hash(f))
}

fn targets(seq: &FrameSequence) -> Vec<f64> {
    (0..seq.n_frames).flat_map(|t| seq.magnitude(t)).collect()
}

/// Mean over batch, frames and pixels of the squared magnitude error.
pub fn forward_loss(state: &PipelineState, batch: &[FrameSequence], mode: ForwardMode) -> Result<(f64, PipelineCache)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    state.check_feasible()?;
    let mut items = Vec::with_capacity(batch.len());
    let mut total = 0.0;
    let mut count = 0usize;
    for (b, seq) in batch.iter().enumerate() {
        let (images, samples, input) = state.simulate(seq)?;
        let item_mode = ForwardMode {
            dropout_seed: mode.dropout_seed.map(|s| s.wrapping_add(b as u64)),
        };
        let (output, recon) = reconmodel::forward(&state.recon, &input, item_mode)?;
        let target = targets(seq);
        total += output.data.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        count += target.len();
        items.push(ItemCache {
            images,
            samples,
            recon,
            output,
            target,
        });
    }
    let norm = 1.0 / count as f64;
    Ok((
        total * norm,
        PipelineCache {
            traj_hash: traj_hash(&state.traj),
            recon_hash: state.recon.hash(),
            norm,
            items,
        },
    ))
}

/// Gradients of the loss with respect to the trajectory (same layout as
/// `state.traj`) and the reconstruction parameters.
pub fn backward(state: &PipelineState, cache: &PipelineCache) -> Result<(Vec<f64>, Vec<f64>)> {
    if cache.traj_hash != traj_hash(&state.traj) || cache.recon_hash != state.recon.hash() {
        return Err(Error::StaleCache("pipeline state changed since the forward pass".into()));
    }
    let s = state.regrid_scale();
    let n_shots = state.traj.n_shots();
    let frame_len = state.traj.frame_len();
    let mut grad_traj = vec![0.0; state.traj.as_slice().len()];
    let mut grad_recon = vec![0.0; state.recon.len()];
    for item in &cache.items {
        let mut upstream = item.output.clone();
        for (u, t) in upstream.data.iter_mut().zip(&item.target) {
            *u = 2.0 * (*u - t) * cache.norm;
        }
        let (g_theta, g_input) = reconmodel::backward(&state.recon, &item.recon, &upstream)?;
        grad_recon.iter_mut().zip(&g_theta).for_each(|(a, b)| *a += b);
        let (h, w) = (g_input.height, g_input.width);
        let hw = h * w;
        let per_frame: Vec<Vec<f64>> = (0..g_input.n_frames)
            .into_par_iter()
            .map(|t| {
                let f = g_input.frame(t);
                let g_img = ComplexImage {
                    height: h,
                    width: w,
                    data: (0..hw).map(|i| Complex64::new(f[i], f[hw + i])).collect(),
                };
                let coords = state.traj.frame(state.traj_frame(t));
                let mut g_x = state.nufft.forward(&g_img, coords, n_shots)?;
                g_x.values.iter_mut().for_each(|v| *v *= s);
                let mut g = state.nufft.grad_wrt_coords(&item.images[t], coords, &g_x)?;
                let g_adj = state.nufft.grad_wrt_coords(&g_img, coords, &item.samples[t])?;
                g.iter_mut().zip(&g_adj).for_each(|(a, b)| *a += s * b);
                Ok(g)
            })
            .collect::<Result<_>>()?;
        for (t, g) in per_frame.into_iter().enumerate() {
            let slot = state.traj_frame(t) * frame_len;
            grad_traj[slot..slot + frame_len].iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
    }
    Ok((grad_traj, grad_recon))
}
