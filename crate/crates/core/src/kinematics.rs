//! Scanner hardware limits and the feasibility projection applied to
//! trajectories after every optimizer step.
//!
//! A shot `c_0 .. c_{m-1}` is feasible when every first difference satisfies
//! `|c_{i+1} - c_i| <= v_max`, every second difference satisfies
//! `|c_{i+1} - 2 c_i + c_{i-1}| <= a_max` (Euclidean norms over `(kx, ky)`),
//! and every point lies in the `[-0.5, 0.5]^2` box.
//!
//! The projection solves the Euclidean projection QP per shot with ADMM. The
//! linear step uses a banded LDL^T factorization of the pentadiagonal normal
//! matrix, and the penalty is adapted by residual balancing. The final iterate
//! is pulled toward the shot centroid by the smallest factor that makes it
//! exactly feasible; since the centroid curve has zero differences this only
//! rescales the differences and never breaks a constraint.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{TrajectorySet, K_LIMIT};

pub const DEFAULT_PROJECTION_ITERS: usize = 500;

/// Physical limits. Units: `g_max` mT/m, `s_max` T/m/s, `dt` s, `gamma` Hz/T,
/// `fov` m. `samples_per_fov` is the image matrix size along the field of view
/// and converts cycles-per-FOV into the normalized `[-0.5, 0.5]` units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicLimits {
    pub g_max: f64,
    pub s_max: f64,
    pub dt: f64,
    pub gamma: f64,
    pub fov: f64,
    pub samples_per_fov: f64,
}

impl KinematicLimits {
    /// 40 mT/m, 200 T/m/s, 10 us dwell, proton gamma, 0.3 m FOV.
    pub fn scanner_defaults(samples_per_fov: f64) -> Self {
        Self {
            g_max: 40.0,
            s_max: 200.0,
            dt: 10e-6,
            gamma: 42.576e6,
            fov: 0.3,
            samples_per_fov,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("g_max", self.g_max),
            ("s_max", self.s_max),
            ("dt", self.dt),
            ("gamma", self.gamma),
            ("fov", self.fov),
            ("samples_per_fov", self.samples_per_fov),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!(
                    "kinematic limit {name} must be finite and positive, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-step bounds `(v_max, a_max)` in normalized k-space units.
pub fn difference_bounds(limits: &KinematicLimits) -> (f64, f64) {
    let scale = limits.gamma * limits.fov / limits.samples_per_fov;
    let v_max = scale * limits.g_max * 1e-3 * limits.dt;
    let a_max = scale * limits.s_max * limits.dt * limits.dt;
    (v_max, a_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    Speed,
    Acceleration,
    Bounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotViolation {
    pub frame: usize,
    pub shot: usize,
    pub sample: usize,
    pub kind: ViolationKind,
    /// Excess over the bound, in normalized units.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub v_max: f64,
    pub a_max: f64,
    pub max_speed_violation: f64,
    pub max_accel_violation: f64,
    pub max_bounds_violation: f64,
    pub feasible: bool,
    pub per_shot_worst: Vec<ShotViolation>,
}

#[derive(Debug, Clone, Copy, Default)]
struct ShotAudit {
    speed: (f64, usize),
    accel: (f64, usize),
    bounds: (f64, usize),
}

fn audit_shot(shot: &[f64], v_max: f64, a_max: f64) -> ShotAudit {
    let m = shot.len() / 2;
    let p = |j: usize| [shot[2 * j], shot[2 * j + 1]];
    let mut out = ShotAudit::default();
    for j in 0..m {
        let q = p(j);
        let excess = (q[0].abs() - K_LIMIT).max(q[1].abs() - K_LIMIT);
        if excess > out.bounds.0 {
            out.bounds = (excess, j);
        }
        if j + 1 < m {
            let r = p(j + 1);
            let excess = (r[0] - q[0]).hypot(r[1] - q[1]) - v_max;
            if excess > out.speed.0 {
                out.speed = (excess, j);
            }
        }
        if j >= 1 && j + 1 < m {
            let (l, r) = (p(j - 1), p(j + 1));
            let excess = (r[0] - 2.0 * q[0] + l[0]).hypot(r[1] - 2.0 * q[1] + l[1]) - a_max;
            if excess > out.accel.0 {
                out.accel = (excess, j);
            }
        }
    }
    out
}

/// Audits every shot; `tol` is relative to the respective bound (and absolute
/// for the box, in normalized units).
pub fn audit(traj: &TrajectorySet, limits: &KinematicLimits, tol: f64) -> FeasibilityReport {
    let (v_max, a_max) = difference_bounds(limits);
    let mut report = FeasibilityReport {
        v_max,
        a_max,
        max_speed_violation: 0.0,
        max_accel_violation: 0.0,
        max_bounds_violation: 0.0,
        feasible: true,
        per_shot_worst: Vec::new(),
    };
    for t in 0..traj.n_frames() {
        for s in 0..traj.n_shots() {
            let a = audit_shot(traj.shot(t, s), v_max, a_max);
            report.max_speed_violation = report.max_speed_violation.max(a.speed.0);
            report.max_accel_violation = report.max_accel_violation.max(a.accel.0);
            report.max_bounds_violation = report.max_bounds_violation.max(a.bounds.0);
            let candidates = [
                (a.speed, ViolationKind::Speed, tol * v_max),
                (a.accel, ViolationKind::Acceleration, tol * a_max),
                (a.bounds, ViolationKind::Bounds, tol),
            ];
            let worst = candidates
                .iter()
                .filter(|(v, _, limit)| v.0 > *limit)
                .max_by(|x, y| (x.0 .0 / x.2.max(f64::MIN_POSITIVE)).total_cmp(&(y.0 .0 / y.2.max(f64::MIN_POSITIVE))));
            if let Some(&((excess, sample), kind, _)) = worst {
                report.per_shot_worst.push(ShotViolation {
                    frame: t,
                    shot: s,
                    sample,
                    kind,
                    excess,
                });
            }
        }
    }
    report.feasible = report.per_shot_worst.is_empty();
    report
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub shots_projected: usize,
    pub shots_unconverged: usize,
    pub max_iterations: usize,
    /// Largest distance a single shot moved, normalized units.
    pub max_shot_displacement: f64,
}

impl ProjectionReport {
    pub fn converged(&self) -> bool {
        self.shots_unconverged == 0
    }

    fn merge(&mut self, shot: &ShotOutcome) {
        if shot.projected {
            self.shots_projected += 1;
        }
        if !shot.converged {
            self.shots_unconverged += 1;
        }
        self.max_iterations = self.max_iterations.max(shot.iterations);
        self.max_shot_displacement = self.max_shot_displacement.max(shot.displacement);
    }
}

/// Projects every shot of every frame onto the feasible set.
pub fn project_feasible(
    traj: &TrajectorySet,
    limits: &KinematicLimits,
    iters: usize,
) -> Result<(TrajectorySet, ProjectionReport)> {
    let mut out = traj.clone();
    let frames: Vec<usize> = (0..traj.n_frames()).collect();
    let report = project_frames_in_place(&mut out, &frames, limits, iters)?;
    Ok((out, report))
}

/// Projects the shots of the listed frames in place; other frames are not touched.
pub fn project_frames_in_place(
    traj: &mut TrajectorySet,
    frames: &[usize],
    limits: &KinematicLimits,
    iters: usize,
) -> Result<ProjectionReport> {
    limits.validate()?;
    if iters == 0 {
        return Err(Error::InvalidArgument("projection needs at least one iteration".into()));
    }
    let (v_max, a_max) = difference_bounds(limits);
    let shot_len = traj.shot_len();
    let n_frames = traj.n_frames();
    let mut report = ProjectionReport::default();
    for &t in frames {
        if t >= n_frames {
            return Err(Error::InvalidArgument(format!("frame {t} out of range")));
        }
        let outcomes: Vec<ShotOutcome> = traj
            .frame_mut(t)
            .par_chunks_mut(shot_len)
            .map(|shot| project_shot(shot, v_max, a_max, iters))
            .collect();
        outcomes.iter().for_each(|o| report.merge(o));
    }
    if !report.converged() {
        log::warn!(
            "projection did not converge for {} shot(s) within {iters} iterations",
            report.shots_unconverged
        );
    }
    Ok(report)
}

/// Projection uses the identity on the gradient: the constraint is enforced
/// on the parameters between optimizer steps and is not differentiated.
pub fn project_gradient_passthrough(
    grad: Vec<f64>,
    traj_pre: &TrajectorySet,
    traj_post: &TrajectorySet,
) -> Result<Vec<f64>> {
    if !traj_pre.same_shape(traj_post) || grad.len() != traj_pre.as_slice().len() {
        return Err(Error::shape(traj_pre.shape_string(), format!("{} gradient entries", grad.len())));
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy)]
struct ShotOutcome {
    projected: bool,
    converged: bool,
    iterations: usize,
    displacement: f64,
}

fn shot_is_feasible(shot: &[f64], v_max: f64, a_max: f64) -> bool {
    let a = audit_shot(shot, v_max, a_max);
    a.speed.0 <= 0.0 && a.accel.0 <= 0.0 && a.bounds.0 <= 0.0
}

/// Projects one shot (interleaved `kx, ky`) in place.
fn project_shot(shot: &mut [f64], v_max: f64, a_max: f64, iters: usize) -> ShotOutcome {
    if shot_is_feasible(shot, v_max, a_max) {
        return ShotOutcome {
            projected: false,
            converged: true,
            iterations: 0,
            displacement: 0.0,
        };
    }
    let m = shot.len() / 2;
    let original: Vec<f64> = shot.to_vec();
    let (mut solution, converged, iterations) = if m == 1 {
        (original.iter().map(|c| c.clamp(-K_LIMIT, K_LIMIT)).collect(), true, 0)
    } else {
        ShotAdmm::new(&original, v_max, a_max).solve(iters)
    };
    pull_to_feasible(&mut solution, v_max, a_max);
    let displacement = solution
        .iter()
        .zip(&original)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    shot.copy_from_slice(&solution);
    ShotOutcome {
        projected: true,
        converged,
        iterations,
        displacement,
    }
}

/// Shrinks the curve toward its (box-clamped) centroid by the largest factor
/// `lambda <= 1` that satisfies every constraint exactly.
fn pull_to_feasible(shot: &mut [f64], v_max: f64, a_max: f64) {
    let m = shot.len() / 2;
    let mut center = [0.0; 2];
    for j in 0..m {
        center[0] += shot[2 * j];
        center[1] += shot[2 * j + 1];
    }
    for c in &mut center {
        *c = (*c / m as f64).clamp(-K_LIMIT, K_LIMIT);
    }
    let mut lambda: f64 = 1.0;
    for j in 0..m {
        for d in 0..2 {
            let x = shot[2 * j + d];
            if x.abs() > K_LIMIT {
                let edge = K_LIMIT.copysign(x);
                lambda = lambda.min((edge - center[d]) / (x - center[d]));
            }
        }
        if j + 1 < m {
            let n = (shot[2 * j + 2] - shot[2 * j]).hypot(shot[2 * j + 3] - shot[2 * j + 1]);
            if n > v_max {
                lambda = lambda.min(v_max / n);
            }
        }
        if j >= 1 && j + 1 < m {
            let n = (shot[2 * j + 2] - 2.0 * shot[2 * j] + shot[2 * j - 2])
                .hypot(shot[2 * j + 3] - 2.0 * shot[2 * j + 1] + shot[2 * j - 1]);
            if n > a_max {
                lambda = lambda.min(a_max / n);
            }
        }
    }
    if lambda < 1.0 {
        // Margin for the rounding of the rescaled differences.
        let lambda = (lambda * (1.0 - 1e-12)).max(0.0);
        for j in 0..m {
            for d in 0..2 {
                let x = &mut shot[2 * j + d];
                *x = (center[d] + lambda * (*x - center[d])).clamp(-K_LIMIT, K_LIMIT);
            }
        }
    }
}

/// Symmetric pentadiagonal matrix factorized as `L D L^T`.
struct PentaLdl {
    d: Vec<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
}

impl PentaLdl {
    /// Factors `I + rho (w1 D1^T D1 + w2 D2^T D2 + w3 I)` for `n` samples.
    fn normal_matrix(n: usize, rho: f64, w: [f64; 3]) -> Self {
        let mut diag = vec![1.0 + rho * w[2]; n];
        let mut off1 = vec![0.0; n];
        let mut off2 = vec![0.0; n];
        for i in 0..n.saturating_sub(1) {
            diag[i] += rho * w[0];
            diag[i + 1] += rho * w[0];
            off1[i] -= rho * w[0];
        }
        let r2 = rho * w[1];
        for i in 0..n.saturating_sub(2) {
            diag[i] += r2;
            diag[i + 1] += 4.0 * r2;
            diag[i + 2] += r2;
            off1[i] -= 2.0 * r2;
            off1[i + 1] -= 2.0 * r2;
            off2[i] += r2;
        }
        let mut d = vec![0.0; n];
        let mut l1 = vec![0.0; n];
        let mut l2 = vec![0.0; n];
        for i in 0..n {
            let mut di = diag[i];
            if i >= 1 {
                di -= l1[i - 1] * l1[i - 1] * d[i - 1];
            }
            if i >= 2 {
                di -= l2[i - 2] * l2[i - 2] * d[i - 2];
            }
            d[i] = di;
            if i + 1 < n {
                let mut e = off1[i];
                if i >= 1 {
                    e -= l2[i - 1] * l1[i - 1] * d[i - 1];
                }
                l1[i] = e / di;
            }
            if i + 2 < n {
                l2[i] = off2[i] / di;
            }
        }
        Self { d, l1, l2 }
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let n = b.len();
        for i in 0..n {
            if i >= 1 {
                b[i] -= self.l1[i - 1] * b[i - 1];
            }
            if i >= 2 {
                b[i] -= self.l2[i - 2] * b[i - 2];
            }
        }
        for i in 0..n {
            b[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            if i + 1 < n {
                b[i] -= self.l1[i] * b[i + 1];
            }
            if i + 2 < n {
                b[i] -= self.l2[i] * b[i + 2];
            }
        }
    }
}

/// ADMM state for the projection of one shot.
///
/// Splitting: `z1 = D1 c / v_max` (speed balls), `z2 = D2 c / a_max`
/// (acceleration balls), `z3 = c / 0.5` (box), so every constraint block is a
/// unit ball or unit box. Points are stored per axis.
struct ShotAdmm {
    m: usize,
    weight: [f64; 3],
    target: [Vec<f64>; 2],
    c: [Vec<f64>; 2],
    z: [[Vec<f64>; 2]; 3],
    u: [[Vec<f64>; 2]; 3],
    rho: f64,
}

const RELAXATION: f64 = 1.6;
const PRIMAL_TOL: f64 = 1e-6;
const DUAL_TOL: f64 = 1e-8;

impl ShotAdmm {
    fn new(shot: &[f64], v_max: f64, a_max: f64) -> Self {
        let m = shot.len() / 2;
        let target = [
            (0..m).map(|j| shot[2 * j]).collect::<Vec<_>>(),
            (0..m).map(|j| shot[2 * j + 1]).collect::<Vec<_>>(),
        ];
        let c = target.clone();
        let mut s = Self {
            m,
            weight: [1.0 / v_max, 1.0 / a_max, 1.0 / K_LIMIT],
            target,
            c,
            z: Default::default(),
            u: Default::default(),
            rho: 0.1 * v_max * v_max,
        };
        let mut z = s.apply_a();
        for (b, zb) in z.iter_mut().enumerate() {
            Self::project_block(b, zb);
        }
        s.u = std::array::from_fn(|b| std::array::from_fn(|axis| vec![0.0; z[b][axis].len()]));
        s.z = z;
        s
    }

    fn project_block(block: usize, z: &mut [Vec<f64>; 2]) {
        let (zx, zy) = z.split_at_mut(1);
        let (zx, zy) = (&mut zx[0], &mut zy[0]);
        if block == 2 {
            for v in zx.iter_mut().chain(zy.iter_mut()) {
                *v = v.clamp(-1.0, 1.0);
            }
            return;
        }
        for (x, y) in zx.iter_mut().zip(zy.iter_mut()) {
            let n = x.hypot(*y);
            if n > 1.0 {
                *x /= n;
                *y /= n;
            }
        }
    }

    fn apply_a(&self) -> [[Vec<f64>; 2]; 3] {
        let m = self.m;
        let [w1, w2, w3] = self.weight;
        let d1 = |c: &[f64]| (0..m - 1).map(|i| w1 * (c[i + 1] - c[i])).collect::<Vec<_>>();
        let d2 = |c: &[f64]| {
            (0..m.saturating_sub(2))
                .map(|i| w2 * (c[i + 2] - 2.0 * c[i + 1] + c[i]))
                .collect::<Vec<_>>()
        };
        let id = |c: &[f64]| c.iter().map(|v| w3 * v).collect::<Vec<_>>();
        [
            [d1(&self.c[0]), d1(&self.c[1])],
            [d2(&self.c[0]), d2(&self.c[1])],
            [id(&self.c[0]), id(&self.c[1])],
        ]
    }

    /// Weighted `A^T` applied to one axis of the three blocks.
    fn apply_at(&self, w: [&[f64]; 3]) -> Vec<f64> {
        let [w1, w2, w3] = self.weight;
        let mut out: Vec<f64> = w[2].iter().map(|v| w3 * v).collect();
        for (i, &v) in w[0].iter().enumerate() {
            out[i] -= w1 * v;
            out[i + 1] += w1 * v;
        }
        for (i, &v) in w[1].iter().enumerate() {
            out[i] += w2 * v;
            out[i + 1] -= 2.0 * w2 * v;
            out[i + 2] += w2 * v;
        }
        debug_assert_eq!(out.len(), self.m);
        out
    }

    fn factor(&self) -> PentaLdl {
        let w = self.weight.map(|w| w * w);
        PentaLdl::normal_matrix(self.m, self.rho, w)
    }

    fn solve(mut self, max_iters: usize) -> (Vec<f64>, bool, usize) {
        let mut factor = self.factor();
        let mut converged = false;
        let mut iterations = 0;
        for it in 0..max_iters {
            iterations = it + 1;
            for axis in 0..2 {
                let w: [Vec<f64>; 3] = std::array::from_fn(|b| {
                    self.z[b][axis]
                        .iter()
                        .zip(&self.u[b][axis])
                        .map(|(z, u)| z - u)
                        .collect()
                });
                let mut rhs = self.apply_at([&w[0], &w[1], &w[2]]);
                for (r, x) in rhs.iter_mut().zip(&self.target[axis]) {
                    *r = x + self.rho * *r;
                }
                factor.solve_in_place(&mut rhs);
                self.c[axis] = rhs;
            }
            let ac = self.apply_a();
            let z_old = std::mem::take(&mut self.z);
            let mut primal: f64 = 0.0;
            for b in 0..3 {
                let relaxed: [Vec<f64>; 2] = std::array::from_fn(|axis| {
                    ac[b][axis]
                        .iter()
                        .zip(&z_old[b][axis])
                        .map(|(a, z)| RELAXATION * a + (1.0 - RELAXATION) * z)
                        .collect()
                });
                let mut zb: [Vec<f64>; 2] = std::array::from_fn(|axis| {
                    relaxed[axis].iter().zip(&self.u[b][axis]).map(|(r, u)| r + u).collect()
                });
                Self::project_block(b, &mut zb);
                for axis in 0..2 {
                    for i in 0..zb[axis].len() {
                        self.u[b][axis][i] += relaxed[axis][i] - zb[axis][i];
                    }
                }
                for i in 0..zb[0].len() {
                    let dx = ac[b][0][i] - zb[0][i];
                    let dy = ac[b][1][i] - zb[1][i];
                    primal = primal.max(dx.hypot(dy));
                }
                self.z[b] = zb;
            }
            let mut dual: f64 = 0.0;
            let mut pull: f64 = 0.0;
            for axis in 0..2 {
                let dz: [Vec<f64>; 3] = std::array::from_fn(|b| {
                    self.z[b][axis].iter().zip(&z_old[b][axis]).map(|(a, b)| a - b).collect()
                });
                let at = self.apply_at([&dz[0], &dz[1], &dz[2]]);
                dual = dual.max(at.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) * self.rho);
                pull = self.c[axis]
                    .iter()
                    .zip(&self.target[axis])
                    .fold(pull, |acc, (c, x)| acc.max((c - x).abs()));
            }
            if primal <= PRIMAL_TOL && dual <= DUAL_TOL {
                converged = true;
                break;
            }
            if it % 10 == 9 {
                let dual_rel = dual / pull.max(1e-12);
                let ratio = (primal / dual_rel.max(1e-300)).sqrt();
                if !(0.2..=5.0).contains(&ratio) {
                    let new_rho = (self.rho * ratio).clamp(1e-12, 1e6);
                    let scale = self.rho / new_rho;
                    for ub in self.u.iter_mut() {
                        for ua in ub.iter_mut() {
                            ua.iter_mut().for_each(|v| *v *= scale);
                        }
                    }
                    self.rho = new_rho;
                    factor = self.factor();
                }
            }
        }
        let mut out = vec![0.0; 2 * self.m];
        for j in 0..self.m {
            out[2 * j] = self.c[0][j];
            out[2 * j + 1] = self.c[1][j];
        }
        (out, converged, iterations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn limits(v_max_target: f64) -> KinematicLimits {
        // Choose samples_per_fov so that v_max equals the requested value.
        let base = KinematicLimits::scanner_defaults(1.0);
        let (v, _) = difference_bounds(&base);
        KinematicLimits {
            samples_per_fov: v / v_max_target,
            ..base
        }
    }

    #[test]
    fn bounds_arithmetic() {
        let l = KinematicLimits::scanner_defaults(1.0);
        let (v, a) = difference_bounds(&l);
        // 42.576e6 * 0.040 * 1e-5 * 0.3 and 42.576e6 * 200 * 1e-10 * 0.3
        assert_relative_eq!(v, 5.10912, max_relative = 1e-12);
        assert_relative_eq!(a, 0.255456, max_relative = 1e-12);

        let l1000 = KinematicLimits::scanner_defaults(1000.0);
        assert_relative_eq!(difference_bounds(&l1000).0, 5.10912e-3, max_relative = 1e-12);

        let doubled = KinematicLimits { dt: 2.0 * l.dt, ..l };
        let (v2, a2) = difference_bounds(&doubled);
        assert_relative_eq!(v2, 2.0 * v, max_relative = 1e-14);
        assert_relative_eq!(a2, 4.0 * a, max_relative = 1e-14);

        let tiny = KinematicLimits { g_max: 1e-300, ..l };
        assert!(difference_bounds(&tiny).0 < 1e-290);
        assert!(KinematicLimits { g_max: 0.0, ..l }.validate().is_err());
    }

    #[test]
    fn stationary_is_feasible() {
        let t = TrajectorySet::from_coords(1, 1, 4, vec![0.1, -0.2, 0.1, -0.2, 0.1, -0.2, 0.1, -0.2]).unwrap();
        for g in [1e-6, 1.0, 40.0] {
            let l = KinematicLimits {
                g_max: g,
                ..KinematicLimits::scanner_defaults(64.0)
            };
            assert!(audit(&t, &l, 0.0).feasible);
        }
    }

    #[test]
    fn constructed_speed_violation() {
        let l = limits(0.01);
        let (v, _) = difference_bounds(&l);
        let coords: Vec<f64> = (0..5).flat_map(|j| [j as f64 * 1.5 * v, 0.0]).collect();
        let t = TrajectorySet::from_coords(1, 1, 5, coords).unwrap();
        let r = audit(&t, &l, 1e-9);
        assert!(!r.feasible);
        assert_relative_eq!(r.max_speed_violation, 0.5 * v, max_relative = 1e-9);
        assert_eq!(r.per_shot_worst.len(), 1);
        assert_eq!(r.per_shot_worst[0].kind, ViolationKind::Speed);
    }

    #[test]
    fn feasible_input_is_untouched() {
        let l = KinematicLimits::scanner_defaults(64.0);
        let t = crate::trajectory::init_radial(2, 4, 33, 0.25).unwrap();
        assert!(audit(&t, &l, 0.0).feasible);
        let (p, rep) = project_feasible(&t, &l, 50).unwrap();
        assert_eq!(p, t);
        assert_eq!(rep.shots_projected, 0);
    }

    #[test]
    fn two_point_closed_form() {
        let l = limits(0.02);
        let (v, _) = difference_bounds(&l);
        let t = TrajectorySet::from_coords(1, 1, 2, vec![0.1, 0.05, 0.1 + 2.0 * v * 0.6, 0.05 + 2.0 * v * 0.8]).unwrap();
        let (p, rep) = project_feasible(&t, &l, DEFAULT_PROJECTION_ITERS).unwrap();
        assert!(rep.converged());
        let a = p.point(0, 0, 0);
        let b = p.point(0, 0, 1);
        assert_relative_eq!((b[0] - a[0]).hypot(b[1] - a[1]), v, max_relative = 1e-5);
        let mid_in = [0.1 + v * 0.6, 0.05 + v * 0.8];
        assert_relative_eq!((a[0] + b[0]) / 2.0, mid_in[0], epsilon = 1e-7);
        assert_relative_eq!((a[1] + b[1]) / 2.0, mid_in[1], epsilon = 1e-7);
    }

    #[test]
    fn box_violations_are_repaired() {
        let l = KinematicLimits::scanner_defaults(64.0);
        let mut t = crate::trajectory::init_radial(1, 2, 17, 0.5).unwrap();
        t.as_mut_slice()[0] = 0.7;
        let (p, _) = project_feasible(&t, &l, DEFAULT_PROJECTION_ITERS).unwrap();
        assert!(audit(&p, &l, 0.0).feasible);
    }

    #[test]
    fn penta_solver_matches_dense() {
        let n = 7;
        let rho = 0.37;
        let f = PentaLdl::normal_matrix(n, rho, [1.0, 1.0, 1.0]);
        // Dense assembly of the same matrix.
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1.0 + rho;
        }
        for i in 0..n - 1 {
            let row = [(i, -1.0), (i + 1, 1.0)];
            for &(p, wp) in &row {
                for &(q, wq) in &row {
                    a[p][q] += rho * wp * wq;
                }
            }
        }
        for i in 0..n - 2 {
            let row = [(i, 1.0), (i + 1, -2.0), (i + 2, 1.0)];
            for &(p, wp) in &row {
                for &(q, wq) in &row {
                    a[p][q] += rho * wp * wq;
                }
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut b: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i][j] * x[j]).sum()).collect();
        f.solve_in_place(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert_relative_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn passthrough_is_identity() {
        let t = crate::trajectory::init_radial(1, 2, 4, 0.5).unwrap();
        let g: Vec<f64> = (0..16).map(|i| i as f64 * 0.5 - 3.0).collect();
        assert_eq!(project_gradient_passthrough(g.clone(), &t, &t).unwrap(), g);
        assert!(project_gradient_passthrough(vec![0.0; 3], &t, &t).is_err());
    }
}
