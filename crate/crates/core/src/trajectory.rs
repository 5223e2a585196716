//! The learnable trajectory tensor: `n_frames x n_shots x m` sample points in
//! normalized k-space (cycles per pixel, each axis in `[-0.5, 0.5]`).
//!
//! File format (`KTRJ`): magic, `u16` version, `n_frames`, `n_shots`, `m` as
//! little-endian `u32`, then every coordinate as little-endian `f64` in
//! frame-major, shot-major, sample-major, `(kx, ky)` order.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{read_file, write_file, Reader};
use crate::error::{Error, Result};

pub const KTRJ_MAGIC: &[u8; 4] = b"KTRJ";
pub const KTRJ_VERSION: u16 = 1;

/// Per-frame rotation of the golden-angle initializer, in degrees.
pub const GOLDEN_ANGLE_DEG: f64 = 111.246117975;

/// Largest admissible coordinate magnitude on either axis.
pub const K_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryInit {
    Radial,
    GoldenAngleRotated,
}

impl TrajectoryInit {
    pub fn build(self, n_frames: usize, n_shots: usize, m: usize, k_extent: f64) -> Result<TrajectorySet> {
        match self {
            TrajectoryInit::Radial => init_radial(n_frames, n_shots, m, k_extent),
            TrajectoryInit::GoldenAngleRotated => init_golden_angle(n_frames, n_shots, m, k_extent),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    n_frames: usize,
    n_shots: usize,
    m: usize,
    coords: Vec<f64>,
}

impl TrajectorySet {
    /// All-zero (stationary at the k-space origin) trajectory.
    pub fn zeros(n_frames: usize, n_shots: usize, m: usize) -> Result<Self> {
        check_dims(n_frames, n_shots, m)?;
        Ok(Self {
            n_frames,
            n_shots,
            m,
            coords: vec![0.0; n_frames * n_shots * m * 2],
        })
    }

    pub fn from_coords(n_frames: usize, n_shots: usize, m: usize, coords: Vec<f64>) -> Result<Self> {
        check_dims(n_frames, n_shots, m)?;
        let expected = n_frames * n_shots * m * 2;
        if coords.len() != expected {
            return Err(Error::shape(
                format!("{expected} coordinates"),
                format!("{} coordinates", coords.len()),
            ));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite() || c.abs() > K_LIMIT) {
            return Err(Error::InvalidArgument(format!(
                "trajectory coordinate {bad} outside [-0.5, 0.5]"
            )));
        }
        Ok(Self {
            n_frames,
            n_shots,
            m,
            coords,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_shots(&self) -> usize {
        self.n_shots
    }

    pub fn samples_per_shot(&self) -> usize {
        self.m
    }

    /// Number of `f64` values in one frame block.
    pub fn frame_len(&self) -> usize {
        self.n_shots * self.m * 2
    }

    pub fn shot_len(&self) -> usize {
        self.m * 2
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    /// Mutable access to the raw coordinates. Callers are expected to restore
    /// the box invariant (for instance by projecting) before further use.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.coords[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.coords[t * n..(t + 1) * n]
    }

    pub fn shot(&self, t: usize, s: usize) -> &[f64] {
        let f = self.frame(t);
        &f[s * self.m * 2..(s + 1) * self.m * 2]
    }

    pub fn point(&self, t: usize, s: usize, j: usize) -> [f64; 2] {
        let i = ((t * self.n_shots + s) * self.m + j) * 2;
        [self.coords[i], self.coords[i + 1]]
    }

    pub fn same_shape(&self, other: &TrajectorySet) -> bool {
        self.n_frames == other.n_frames && self.n_shots == other.n_shots && self.m == other.m
    }

    pub fn shape_string(&self) -> String {
        format!("[{}][{}][{}][2]", self.n_frames, self.n_shots, self.m)
    }

    /// A trajectory of `n_frames` frames, each a copy of frame `t` of `self`.
    pub fn broadcast_frame(&self, t: usize, n_frames: usize) -> Result<Self> {
        if t >= self.n_frames {
            return Err(Error::InvalidArgument(format!(
                "frame {t} out of range for {} frames",
                self.n_frames
            )));
        }
        let block = self.frame(t);
        let mut coords = Vec::with_capacity(block.len() * n_frames);
        for _ in 0..n_frames {
            coords.extend_from_slice(block);
        }
        Self::from_coords(n_frames, self.n_shots, self.m, coords)
    }

    pub fn clamp_to_box(&mut self) {
        for c in &mut self.coords {
            *c = c.clamp(-K_LIMIT, K_LIMIT);
        }
    }

    /// Stable 64-bit fingerprint of the coordinate bits of frame `t`.
    pub fn frame_hash(&self, t: usize) -> u64 {
        fnv1a(self.frame(t).iter().flat_map(|x| x.to_bits().to_le_bytes()))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + self.coords.len() * 8);
        out.extend_from_slice(KTRJ_MAGIC);
        out.extend_from_slice(&KTRJ_VERSION.to_le_bytes());
        for d in [self.n_frames, self.n_shots, self.m] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for c in &self.coords {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "KTRJ");
        r.magic(KTRJ_MAGIC)?;
        let version = r.u16("version")?;
        if version != KTRJ_VERSION {
            return Err(Error::Version {
                format: "KTRJ",
                found: version,
                expected: KTRJ_VERSION,
            });
        }
        let n_frames = r.u32("n_frames")? as usize;
        let n_shots = r.u32("n_shots")? as usize;
        let m = r.u32("samples per shot")? as usize;
        check_dims(n_frames, n_shots, m)?;
        let n = n_frames * n_shots * m * 2;
        if r.remaining() != n * 8 {
            return Err(Error::shape(
                format!("{} coordinate bytes for [{n_frames}][{n_shots}][{m}][2]", n * 8),
                format!("{} bytes", r.remaining()),
            ));
        }
        let coords = r.f64_vec(n, "coordinates")?;
        Self::from_coords(n_frames, n_shots, m, coords)
    }
}

pub(crate) fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn check_dims(n_frames: usize, n_shots: usize, m: usize) -> Result<()> {
    if n_frames == 0 || n_shots == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "trajectory dimensions must be positive, got [{n_frames}][{n_shots}][{m}]"
        )));
    }
    Ok(())
}

fn check_extent(k_extent: f64) -> Result<()> {
    if !(k_extent > 0.0 && k_extent <= K_LIMIT) {
        return Err(Error::InvalidArgument(format!(
            "k_extent must lie in (0, 0.5], got {k_extent}"
        )));
    }
    Ok(())
}

/// Writes `n_shots` spokes, rotated by `offset` radians, into one frame block.
fn fill_radial_frame(block: &mut [f64], n_shots: usize, m: usize, k_extent: f64, offset: f64) {
    for s in 0..n_shots {
        let angle = offset + s as f64 * PI / n_shots as f64;
        let (sin, cos) = angle.sin_cos();
        for j in 0..m {
            let r = if m == 1 {
                0.0
            } else {
                -k_extent + 2.0 * k_extent * j as f64 / (m - 1) as f64
            };
            let i = (s * m + j) * 2;
            block[i] = (r * cos).clamp(-K_LIMIT, K_LIMIT);
            block[i + 1] = (r * sin).clamp(-K_LIMIT, K_LIMIT);
        }
    }
}

/// Identical radial patterns in every frame: spoke `i` at angle `i * pi / n_shots`,
/// `m` endpoint-inclusive samples on `[-k_extent, k_extent]`.
pub fn init_radial(n_frames: usize, n_shots: usize, m: usize, k_extent: f64) -> Result<TrajectorySet> {
    let mut traj = TrajectorySet::zeros(n_frames, n_shots, m)?;
    check_extent(k_extent)?;
    for t in 0..n_frames {
        fill_radial_frame(traj.frame_mut(t), n_shots, m, k_extent, 0.0);
    }
    Ok(traj)
}

/// Radial pattern of frame `t` rotated by `t` golden angles.
pub fn init_golden_angle(n_frames: usize, n_shots: usize, m: usize, k_extent: f64) -> Result<TrajectorySet> {
    let mut traj = TrajectorySet::zeros(n_frames, n_shots, m)?;
    check_extent(k_extent)?;
    for t in 0..n_frames {
        let offset = (t as f64 * GOLDEN_ANGLE_DEG).to_radians();
        fill_radial_frame(traj.frame_mut(t), n_shots, m, k_extent, offset);
    }
    Ok(traj)
}

/// Copies frame `t_src` onto frame `t_dst`.
pub fn clone_frame_trajectory(t_src: usize, t_dst: usize, traj: &TrajectorySet) -> Result<TrajectorySet> {
    let mut out = traj.clone();
    clone_frame_in_place(t_src, t_dst, &mut out)?;
    Ok(out)
}

pub fn clone_frame_in_place(t_src: usize, t_dst: usize, traj: &mut TrajectorySet) -> Result<()> {
    let n = traj.n_frames;
    if t_src >= n || t_dst >= n {
        return Err(Error::InvalidArgument(format!(
            "frame indices ({t_src}, {t_dst}) out of range for {n} frames"
        )));
    }
    if t_src != t_dst {
        let len = traj.frame_len();
        traj.coords.copy_within(t_src * len..(t_src + 1) * len, t_dst * len);
    }
    Ok(())
}

pub fn save_trajectory(traj: &TrajectorySet, path: &Path) -> Result<()> {
    write_file(path, &traj.encode())
}

pub fn load_trajectory(path: &Path) -> Result<TrajectorySet> {
    TrajectorySet::decode(&read_file(path)?)
}
