//! Synthetic dynamic phantoms, augmentation, dataset splits and the `DSEQ`
//! sequence file format.
//!
//! `DSEQ` layout: magic, `u16` version, `n_frames`, `height`, `width` as
//! little-endian `u32`, then every pixel as interleaved little-endian `f32`
//! `(re, im)` in frame-major, row-major order. A JSON sidecar at
//! `<file>.json` carries the sequence metadata.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::{Complex32, Complex64};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{read_file, write_file, Reader};
use crate::error::{Error, Result};
use crate::nufft::ComplexImage;

pub const DSEQ_MAGIC: &[u8; 4] = b"DSEQ";
pub const DSEQ_VERSION: u16 = 1;
pub const DSEQ_EXTENSION: &str = "dseq";

/// Where a sequence came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SequenceMeta {
    Phantom { spec: PhantomSpec, seed: u64 },
    Source { id: String },
}

/// A fully sampled dynamic sequence with magnitudes in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    /// `frames[(t * height + x) * width + y]`.
    pub frames: Vec<Complex32>,
    pub meta: SequenceMeta,
}

impl FrameSequence {
    pub fn new(n_frames: usize, height: usize, width: usize, frames: Vec<Complex32>, meta: SequenceMeta) -> Result<Self> {
        if n_frames == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument("sequence dimensions must be positive".into()));
        }
        if frames.len() != n_frames * height * width {
            return Err(Error::shape(
                format!("{n_frames}x{height}x{width} pixels"),
                format!("{} values", frames.len()),
            ));
        }
        if frames.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("sequence contains non-finite values".into()));
        }
        Ok(Self {
            n_frames,
            height,
            width,
            frames,
            meta,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[Complex32] {
        let n = self.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn image(&self, t: usize) -> ComplexImage {
        ComplexImage {
            height: self.height,
            width: self.width,
            data: self.frame(t).iter().map(|z| Complex64::new(z.re as f64, z.im as f64)).collect(),
        }
    }

    pub fn magnitude(&self, t: usize) -> Vec<f64> {
        self.frame(t).iter().map(|z| (z.re as f64).hypot(z.im as f64)).collect()
    }

    pub fn same_shape(&self, other: &FrameSequence) -> bool {
        (self.n_frames, self.height, self.width) == (other.n_frames, other.height, other.width)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + self.frames.len() * 8);
        out.extend_from_slice(DSEQ_MAGIC);
        out.extend_from_slice(&DSEQ_VERSION.to_le_bytes());
        for d in [self.n_frames, self.height, self.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for z in &self.frames {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], meta: SequenceMeta) -> Result<Self> {
        let mut r = Reader::new(bytes, "DSEQ");
        r.magic(DSEQ_MAGIC)?;
        let version = r.u16("version")?;
        if version != DSEQ_VERSION {
            return Err(Error::Version {
                format: "DSEQ",
                found: version,
                expected: DSEQ_VERSION,
            });
        }
        let n_frames = r.u32("n_frames")? as usize;
        let height = r.u32("height")? as usize;
        let width = r.u32("width")? as usize;
        let n = n_frames * height * width;
        if r.remaining() != n * 8 {
            return Err(Error::shape(format!("{} payload bytes", n * 8), format!("{} bytes", r.remaining())));
        }
        let raw = r.f32_vec(2 * n, "pixels")?;
        let frames = raw.chunks_exact(2).map(|c| Complex32::new(c[0], c[1])).collect();
        Self::new(n_frames, height, width, frames, meta)
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_sequence(seq: &FrameSequence, path: &Path) -> Result<()> {
    write_file(path, &seq.encode())?;
    write_file(&sidecar_path(path), &serde_json::to_vec_pretty(&seq.meta)?)
}

/// Load a sequence; a missing sidecar yields a `Source` entry named after the file.
pub fn load_sequence(path: &Path) -> Result<FrameSequence> {
    let bytes = read_file(path)?;
    let side = sidecar_path(path);
    let meta = if side.exists() {
        serde_json::from_slice(&read_file(&side)?)?
    } else {
        SequenceMeta::Source {
            id: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        }
    };
    FrameSequence::decode(&bytes, meta)
}

/// Sequence files of a directory, sorted by file name.
pub fn list_sequences(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == DSEQ_EXTENSION))
        .collect();
    out.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(out)
}

pub fn load_directory(dir: &Path) -> Result<Vec<FrameSequence>> {
    list_sequences(dir)?.iter().map(|p| load_sequence(p)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipseSpec {
    /// Rest center in units of the half field of view (`[-1, 1]` spans the image).
    pub center: [f64; 2],
    /// Semi-axes in the same units.
    pub axes: [f64; 2],
    /// Rotation in radians.
    pub rotation: f64,
    /// Added intensity, in `[0, 1]`.
    pub intensity: f64,
    /// Sinusoidal displacement amplitude of the center.
    pub motion: [f64; 2],
    /// Relative amplitude of the periodic change of both semi-axes.
    pub beat: f64,
    /// Phase offset of the motion in radians.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub n_frames: usize,
    /// Motion period in frames.
    pub period: f64,
    pub ellipses: Vec<EllipseSpec>,
    /// Amplitude of the smooth background texture.
    pub texture: f64,
    pub texture_seed: u64,
    /// Phase map `a * x + b * y + c` with `x, y` in half-FOV units.
    pub phase_ramp: [f64; 3],
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.n_frames == 0 {
            return Err(Error::InvalidArgument("phantom dimensions must be positive".into()));
        }
        if !(self.period > 0.0) {
            return Err(Error::InvalidArgument("phantom period must be positive".into()));
        }
        for (i, e) in self.ellipses.iter().enumerate() {
            if !(e.axes[0] > 0.0 && e.axes[1] > 0.0) {
                return Err(Error::InvalidArgument(format!("ellipse {i} has a zero-size axis")));
            }
            if !(0.0..=1.0).contains(&e.intensity) {
                return Err(Error::InvalidArgument(format!("ellipse {i} intensity outside [0, 1]")));
            }
            if !(e.beat.abs() < 1.0) {
                return Err(Error::InvalidArgument(format!("ellipse {i} beat amplitude must be below 1")));
            }
        }
        Ok(())
    }

    /// A cardiac-like phantom: a static body, a moving and beating inner
    /// ellipse with a bright wall, and a few small structures.
    pub fn random(height: usize, width: usize, n_frames: usize, rng: &mut impl Rng) -> Self {
        let mut ellipses = Vec::new();
        let body = [rng.gen_range(0.72..0.88), rng.gen_range(0.6..0.8)];
        ellipses.push(EllipseSpec {
            center: [rng.gen_range(-0.04..0.04), rng.gen_range(-0.04..0.04)],
            axes: body,
            rotation: rng.gen_range(-0.3..0.3),
            intensity: rng.gen_range(0.25..0.4),
            motion: [rng.gen_range(0.0..0.02), 0.0],
            beat: 0.0,
            phase: 0.0,
        });
        let heart_center = [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)];
        let heart_axes = [rng.gen_range(0.22..0.32), rng.gen_range(0.2..0.3)];
        let motion = [rng.gen_range(0.03..0.08), rng.gen_range(0.0..0.05)];
        let phase = rng.gen_range(0.0..2.0 * PI);
        let rotation = rng.gen_range(-0.6..0.6);
        ellipses.push(EllipseSpec {
            center: heart_center,
            axes: heart_axes,
            rotation,
            intensity: rng.gen_range(0.3..0.45),
            motion,
            beat: rng.gen_range(0.08..0.2),
            phase,
        });
        ellipses.push(EllipseSpec {
            center: heart_center,
            axes: [heart_axes[0] * 0.6, heart_axes[1] * 0.6],
            rotation,
            intensity: rng.gen_range(0.15..0.3),
            motion,
            beat: rng.gen_range(0.2..0.35),
            phase,
        });
        for _ in 0..rng.gen_range(2..5) {
            let r = rng.gen_range(0.04..0.1);
            let a = rng.gen_range(0.0..2.0 * PI);
            let d = rng.gen_range(0.3..0.55);
            ellipses.push(EllipseSpec {
                center: [d * a.cos(), d * a.sin()],
                axes: [r, r * rng.gen_range(0.6..1.4)],
                rotation: rng.gen_range(0.0..PI),
                intensity: rng.gen_range(0.1..0.5),
                motion: [rng.gen_range(0.0..0.02), rng.gen_range(0.0..0.02)],
                beat: 0.0,
                phase: rng.gen_range(0.0..2.0 * PI),
            });
        }
        Self {
            height,
            width,
            n_frames,
            period: n_frames as f64,
            ellipses,
            texture: rng.gen_range(0.02..0.06),
            texture_seed: rng.gen(),
            phase_ramp: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-PI..PI)],
        }
    }

    /// Same geometry with every motion and beat amplitude set to zero.
    pub fn without_motion(mut self) -> Self {
        for e in &mut self.ellipses {
            e.motion = [0.0, 0.0];
            e.beat = 0.0;
        }
        self
    }
}

/// Smoothed indicator of the unit disc with an edge width of about one pixel.
fn soft_inside(r: f64, edge: f64) -> f64 {
    0.5 * (1.0 - ((r - 1.0) / edge).tanh())
}

/// Render a phantom. `seed` only affects the background texture.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<FrameSequence> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ spec.texture_seed);
    let waves: Vec<[f64; 4]> = (0..6)
        .map(|_| {
            [
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.5..1.0),
            ]
        })
        .collect();
    let coord = |i: usize, n: usize| (i as f64 + 0.5) / n as f64 * 2.0 - 1.0;
    let edge_px = 2.0 / h.min(w) as f64;
    let mut frames = Vec::with_capacity(spec.n_frames * h * w);
    let mut mags = vec![0.0; spec.n_frames * h * w];
    for t in 0..spec.n_frames {
        for x in 0..h {
            for y in 0..w {
                let (px, py) = (coord(x, h), coord(y, w));
                let mut v = 0.0;
                let mut body = 0.0;
                for (k, e) in spec.ellipses.iter().enumerate() {
                    let phase_t = (2.0 * PI * t as f64 / spec.period + e.phase).sin();
                    let cx = e.center[0] + e.motion[0] * phase_t;
                    let cy = e.center[1] + e.motion[1] * phase_t;
                    let scale = 1.0 + e.beat * phase_t;
                    let (ax, ay) = (e.axes[0] * scale, e.axes[1] * scale);
                    let (dx, dy) = (px - cx, py - cy);
                    let (c, sn) = (e.rotation.cos(), e.rotation.sin());
                    let (u, vv) = (c * dx + sn * dy, -sn * dx + c * dy);
                    let r = ((u / ax).powi(2) + (vv / ay).powi(2)).sqrt();
                    let inside = soft_inside(r, edge_px / ax.min(ay));
                    v += e.intensity * inside;
                    if k == 0 {
                        body = inside;
                    }
                }
                let tex: f64 = waves
                    .iter()
                    .map(|wv| wv[3] * (PI * (wv[0] * px + wv[1] * py) + wv[2]).sin())
                    .sum::<f64>()
                    / waves.len() as f64;
                mags[(t * h + x) * w + y] = (v + spec.texture * tex * body).max(0.0);
            }
        }
    }
    let peak = mags.iter().cloned().fold(0.0, f64::max);
    let norm = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    for t in 0..spec.n_frames {
        for x in 0..h {
            for y in 0..w {
                let (px, py) = (coord(x, h), coord(y, w));
                let phi = spec.phase_ramp[0] * px + spec.phase_ramp[1] * py + spec.phase_ramp[2];
                let m = mags[(t * h + x) * w + y] * norm;
                frames.push(Complex32::new((m * phi.cos()) as f32, (m * phi.sin()) as f32));
            }
        }
    }
    FrameSequence::new(
        spec.n_frames,
        h,
        w,
        frames,
        SequenceMeta::Phantom {
            spec: spec.clone(),
            seed,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlipAxis {
    /// Mirror rows (top-bottom).
    Vertical,
    /// Mirror columns (left-right).
    Horizontal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMask {
    /// Center in pixel coordinates.
    pub center: [f64; 2],
    pub sigma: f64,
}

/// The random choices of one augmentation, shared by all frames of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentDecisions {
    pub flip: Option<FlipAxis>,
    pub rescale: Option<f64>,
    pub mask: Option<GaussianMask>,
}

pub const AUGMENT_PROBABILITY: f64 = 0.4;

/// Draw which augmentations fire, each independently with probability `p`.
pub fn draw_decisions(rng: &mut impl Rng, height: usize, width: usize, p: f64) -> AugmentDecisions {
    let flip = rng.gen_bool(p).then(|| {
        if rng.gen_bool(0.5) {
            FlipAxis::Horizontal
        } else {
            FlipAxis::Vertical
        }
    });
    let rescale = rng.gen_bool(p).then(|| rng.gen_range(0.8..=1.2));
    let mask = rng.gen_bool(p).then(|| {
        let m = height.min(width) as f64;
        GaussianMask {
            center: [rng.gen_range(0.0..height as f64), rng.gen_range(0.0..width as f64)],
            sigma: rng.gen_range(0.2..=0.5) * m,
        }
    });
    AugmentDecisions { flip, rescale, mask }
}

pub fn flip(seq: &FrameSequence, axis: FlipAxis) -> FrameSequence {
    let (h, w) = (seq.height, seq.width);
    let mut out = seq.clone();
    for t in 0..seq.n_frames {
        let src = seq.frame(t);
        let dst = &mut out.frames[t * h * w..(t + 1) * h * w];
        for x in 0..h {
            for y in 0..w {
                let (sx, sy) = match axis {
                    FlipAxis::Vertical => (h - 1 - x, y),
                    FlipAxis::Horizontal => (x, w - 1 - y),
                };
                dst[x * w + y] = src[sx * w + sy];
            }
        }
    }
    out
}

/// Zoom about the image center by `factor` with bilinear interpolation;
/// the output keeps the input size (center crop or zero padding).
pub fn rescale(seq: &FrameSequence, factor: f64) -> FrameSequence {
    let (h, w) = (seq.height, seq.width);
    let (cx, cy) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = seq.clone();
    for t in 0..seq.n_frames {
        let src = seq.frame(t);
        let at = |x: isize, y: isize| -> Complex32 {
            if x < 0 || y < 0 || x >= h as isize || y >= w as isize {
                Complex32::new(0.0, 0.0)
            } else {
                src[x as usize * w + y as usize]
            }
        };
        for x in 0..h {
            for y in 0..w {
                let sx = (x as f64 - cx) / factor + cx;
                let sy = (y as f64 - cy) / factor + cy;
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
                let (x0, y0) = (x0 as isize, y0 as isize);
                let v = at(x0, y0) * (1.0 - fx) * (1.0 - fy)
                    + at(x0 + 1, y0) * fx * (1.0 - fy)
                    + at(x0, y0 + 1) * (1.0 - fx) * fy
                    + at(x0 + 1, y0 + 1) * fx * fy;
                out.frames[(t * h + x) * w + y] = clamp_magnitude(v);
            }
        }
    }
    out
}

fn clamp_magnitude(z: Complex32) -> Complex32 {
    let n = z.norm();
    if n > 1.0 {
        z / n
    } else {
        z
    }
}

pub fn apply_mask(seq: &FrameSequence, mask: GaussianMask) -> FrameSequence {
    let (h, w) = (seq.height, seq.width);
    let mut out = seq.clone();
    for t in 0..seq.n_frames {
        for x in 0..h {
            for y in 0..w {
                let d2 = (x as f64 - mask.center[0]).powi(2) + (y as f64 - mask.center[1]).powi(2);
                let g = (-d2 / (2.0 * mask.sigma * mask.sigma)).exp() as f32;
                let i = (t * h + x) * w + y;
                out.frames[i] = clamp_magnitude(out.frames[i] * g);
            }
        }
    }
    out
}

pub fn augment_with(seq: &FrameSequence, d: &AugmentDecisions) -> FrameSequence {
    let mut out = match d.flip {
        Some(axis) => flip(seq, axis),
        None => seq.clone(),
    };
    if let Some(f) = d.rescale {
        out = rescale(&out, f);
    }
    if let Some(m) = d.mask {
        out = apply_mask(&out, m);
    }
    out
}

pub fn augment(seq: &FrameSequence, rng: &mut impl Rng) -> FrameSequence {
    let d = draw_decisions(rng, seq.height, seq.width, AUGMENT_PROBABILITY);
    augment_with(seq, &d)
}

/// Split sizes by largest-remainder rounding of `n * fraction`.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let quotas = fractions.map(|f| f * n as f64);
    let mut sizes = quotas.map(|q| q.floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let frac = |q: f64| ((q - q.floor()) * 1e9).round();
        frac(quotas[b]).partial_cmp(&frac(quotas[a])).unwrap().then(a.cmp(&b))
    });
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

/// Deterministic shuffled split into `(train, test, val)`.
pub fn split_dataset<T>(samples: Vec<T>, fractions: [f64; 3], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let [a, b, _] = split_sizes(samples.len(), fractions)?;
    let mut samples = samples;
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = samples.split_off(a + b);
    let test = samples.split_off(a);
    Ok((samples, test, val))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Val,
}

/// File names of each split, written next to the sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub fractions: [f64; 3],
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub val: Vec<String>,
}

pub const MANIFEST_FILE: &str = "splits.json";

impl SplitManifest {
    pub fn files(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::Val => &self.val,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&read_file(&dir.join(MANIFEST_FILE))?)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(self)?)
    }
}

/// Shape and size of a generated phantom dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub height: usize,
    pub width: usize,
    pub n_frames: usize,
    pub n_sequences: usize,
    /// Train, test and validation fractions.
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            n_frames: 8,
            n_sequences: 200,
            fractions: [0.8, 0.175, 0.025],
            seed: 7,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.n_frames == 0 || self.n_sequences == 0 {
            return Err(Error::Config("data dimensions and sequence count must be positive".into()));
        }
        split_sizes(self.n_sequences, self.fractions).map(|_| ())
    }

    /// Phantom `i` of the dataset, independent of all others.
    pub fn phantom(&self, i: usize) -> Result<FrameSequence> {
        let seed = self.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = PhantomSpec::random(self.height, self.width, self.n_frames, &mut rng);
        generate_phantom(&spec, seed)
    }

    /// Generate all phantoms in memory and split them.
    pub fn build(&self) -> Result<Dataset> {
        self.validate()?;
        let all = (0..self.n_sequences).map(|i| self.phantom(i)).collect::<Result<Vec<_>>>()?;
        let (train, test, val) = split_dataset(all, self.fractions, self.seed)?;
        Ok(Dataset { train, test, val })
    }
}

/// In-memory dataset.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<FrameSequence>,
    pub test: Vec<FrameSequence>,
    pub val: Vec<FrameSequence>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[FrameSequence] {
        match s {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::Val => &self.val,
        }
    }
}

/// Write every phantom as a `DSEQ` file plus the split manifest.
pub fn write_dataset(cfg: &DataConfig, dir: &Path, force: bool) -> Result<SplitManifest> {
    cfg.validate()?;
    if dir.exists() && !force {
        return Err(Error::InvalidArgument(format!(
            "{} already exists (use --force to overwrite)",
            dir.display()
        )));
    }
    if dir.exists() {
        for p in list_sequences(dir)? {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            let side = sidecar_path(&p);
            if side.exists() {
                fs::remove_file(&side).map_err(|e| Error::io(&side, e))?;
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let width = cfg.n_sequences.to_string().len().max(4);
    let mut names = Vec::with_capacity(cfg.n_sequences);
    for i in 0..cfg.n_sequences {
        let name = format!("seq_{i:0width$}.{DSEQ_EXTENSION}");
        save_sequence(&cfg.phantom(i)?, &dir.join(&name))?;
        names.push(name);
    }
    let (train, test, val) = split_dataset(names, cfg.fractions, cfg.seed)?;
    let manifest = SplitManifest {
        seed: cfg.seed,
        fractions: cfg.fractions,
        train,
        test,
        val,
    };
    manifest.save(dir)?;
    Ok(manifest)
}

/// Load a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let m = SplitManifest::load(dir)?;
    let load = |names: &[String]| names.iter().map(|n| load_sequence(&dir.join(n))).collect::<Result<Vec<_>>>();
    Ok(Dataset {
        train: load(&m.train)?,
        test: load(&m.test)?,
        val: load(&m.val)?,
    })
}
