//! Non-uniform Fourier operators between a complex image and samples at
//! arbitrary k-space locations of one trajectory frame.
//!
//! Conventions: the forward transform is
//! `X[j] = sum_{x,y} img[x][y] * exp(-2 pi i (kx_j u(x) + ky_j v(y)))`
//! with centered pixel grids `u(x) = x - H/2`, `v(y) = y - W/2`. `kx` pairs
//! with the row (height) axis. No normalization is applied, and the adjoint
//! is the exact conjugate transpose of the forward.
//!
//! The fast path grids with a separable Kaiser-Bessel kernel on a
//! `sigma`-oversampled grid. Its adjoint is the exact adjoint of the fast
//! forward (not only of the direct one), so gradient checks through the fast
//! path are consistent.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::container::write_file;
use crate::error::{Error, Result};
use crate::trajectory::K_LIMIT;

/// Complex image stored row-major, `data[x * width + y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("image dimensions must be positive".into()));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!("{height}x{width} pixels"), format!("{} values", data.len())));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("image contains non-finite values".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_real(height: usize, width: usize, data: &[f64]) -> Result<Self> {
        Self::from_data(height, width, data.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn get(&self, x: usize, y: usize) -> Complex64 {
        self.data[x * self.width + y]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Pixel-wise product with the centered row index `u(x)`.
    pub fn weighted_by_u(&self) -> Self {
        let mut out = self.clone();
        for (x, row) in out.data.chunks_mut(self.width).enumerate() {
            let u = centered(x, self.height);
            row.iter_mut().for_each(|z| *z *= u);
        }
        out
    }

    /// Pixel-wise product with the centered column index `v(y)`.
    pub fn weighted_by_v(&self) -> Self {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.width) {
            for (y, z) in row.iter_mut().enumerate() {
                *z *= centered(y, self.width);
            }
        }
        out
    }
}

/// Samples of one frame, `values[s * m + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KSamples {
    pub n_shots: usize,
    pub m: usize,
    pub values: Vec<Complex64>,
}

impl KSamples {
    pub fn zeros(n_shots: usize, m: usize) -> Self {
        Self {
            n_shots,
            m,
            values: vec![Complex64::new(0.0, 0.0); n_shots * m],
        }
    }

    pub fn from_values(n_shots: usize, values: Vec<Complex64>) -> Result<Self> {
        if n_shots == 0 || values.len() % n_shots != 0 {
            return Err(Error::shape(format!("a multiple of {n_shots} samples"), values.len().to_string()));
        }
        Ok(Self {
            n_shots,
            m: values.len() / n_shots,
            values,
        })
    }

    /// Debug dump with columns `shot,sample,kx,ky,re,im`.
    pub fn to_csv(&self, coords: &[f64]) -> Result<String> {
        check_samples(self, coords)?;
        let mut out = String::from("shot,sample,kx,ky,re,im\n");
        for s in 0..self.n_shots {
            for j in 0..self.m {
                let i = s * self.m + j;
                let z = self.values[i];
                writeln!(out, "{s},{j},{},{},{},{}", coords[2 * i], coords[2 * i + 1], z.re, z.im).unwrap();
            }
        }
        Ok(out)
    }

    pub fn write_csv(&self, coords: &[f64], path: &Path) -> Result<()> {
        write_file(path, self.to_csv(coords)?.as_bytes())
    }
}

fn centered(i: usize, n: usize) -> f64 {
    i as f64 - (n / 2) as f64
}

fn check_coords(coords: &[f64], n_shots: usize) -> Result<usize> {
    if n_shots == 0 || coords.len() % (2 * n_shots) != 0 {
        return Err(Error::shape(
            format!("2 * {n_shots} * m coordinates"),
            format!("{} coordinates", coords.len()),
        ));
    }
    if let Some(c) = coords.iter().find(|c| !c.is_finite() || c.abs() > K_LIMIT) {
        return Err(Error::InvalidArgument(format!("k-space coordinate {c} outside [-0.5, 0.5]")));
    }
    Ok(coords.len() / (2 * n_shots))
}

fn check_samples(samples: &KSamples, coords: &[f64]) -> Result<()> {
    if samples.values.len() != samples.n_shots * samples.m || coords.len() != 2 * samples.values.len() {
        return Err(Error::shape(
            format!("{} coordinates", 2 * samples.values.len()),
            format!("{} coordinates", coords.len()),
        ));
    }
    Ok(())
}

/// Phase factors `exp(-2 pi i k c)` for the centered grid `c` of length `n`.
fn phase_row(k: f64, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|i| Complex64::from_polar(1.0, -2.0 * PI * k * centered(i, n)))
        .collect()
}

/// Exact evaluation of the forward transform, `O(H W m)`.
pub fn forward_direct(img: &ComplexImage, coords: &[f64], n_shots: usize) -> Result<KSamples> {
    let m = check_coords(coords, n_shots)?;
    let values = coords
        .chunks_exact(2)
        .map(|k| {
            let ex = phase_row(k[0], img.height);
            let ey = phase_row(k[1], img.width);
            img.data
                .chunks_exact(img.width)
                .zip(&ex)
                .map(|(row, &px)| px * row.iter().zip(&ey).map(|(a, b)| a * b).sum::<Complex64>())
                .sum()
        })
        .collect();
    Ok(KSamples { n_shots, m, values })
}

/// Exact conjugate transpose of [`forward_direct`].
pub fn adjoint_direct(samples: &KSamples, coords: &[f64], height: usize, width: usize) -> Result<ComplexImage> {
    check_samples(samples, coords)?;
    check_coords(coords, samples.n_shots)?;
    let mut out = ComplexImage::zeros(height, width);
    for (k, &y) in coords.chunks_exact(2).zip(&samples.values) {
        let ex = phase_row(k[0], height);
        let ey = phase_row(k[1], width);
        for (row, px) in out.data.chunks_exact_mut(width).zip(&ex) {
            let a = y * px.conj();
            for (z, py) in row.iter_mut().zip(&ey) {
                *z += a * py.conj();
            }
        }
    }
    Ok(out)
}

/// Real gradient of a loss with respect to the sample coordinates, exact path.
///
/// `upstream[j] = dL/dRe X[j] + i dL/dIm X[j]`. Output is interleaved
/// `(dL/dkx, dL/dky)` per sample.
pub fn grad_wrt_coords_direct(img: &ComplexImage, coords: &[f64], upstream: &KSamples) -> Result<Vec<f64>> {
    let n_shots = upstream.n_shots;
    let du = forward_direct(&img.weighted_by_u(), coords, n_shots)?;
    let dv = forward_direct(&img.weighted_by_v(), coords, n_shots)?;
    check_samples(upstream, coords)?;
    Ok(pair_gradients(&du, &dv, upstream))
}

fn pair_gradients(du: &KSamples, dv: &KSamples, upstream: &KSamples) -> Vec<f64> {
    let minus_two_pi_i = Complex64::new(0.0, -2.0 * PI);
    let mut out = Vec::with_capacity(2 * upstream.values.len());
    for ((g, a), b) in upstream.values.iter().zip(&du.values).zip(&dv.values) {
        out.push((g.conj() * minus_two_pi_i * a).re);
        out.push((g.conj() * minus_two_pi_i * b).re);
    }
    out
}

/// Separable Kaiser-Bessel gridding kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GriddingKernel {
    /// Full support in oversampled grid cells.
    pub width: usize,
    pub oversampling: f64,
    pub beta: f64,
}

pub const DEFAULT_KERNEL_WIDTH: usize = 7;
pub const DEFAULT_OVERSAMPLING: f64 = 2.0;

impl Default for GriddingKernel {
    fn default() -> Self {
        Self::new(DEFAULT_KERNEL_WIDTH, DEFAULT_OVERSAMPLING).expect("default kernel is valid")
    }
}

impl GriddingKernel {
    /// Kernel with the Beatty shape parameter for the given width and oversampling.
    pub fn new(width: usize, oversampling: f64) -> Result<Self> {
        if width < 2 {
            return Err(Error::InvalidArgument(format!("kernel width {width} < 2")));
        }
        if !(oversampling >= 1.25) {
            return Err(Error::InvalidArgument(format!("oversampling {oversampling} < 1.25")));
        }
        let w = width as f64;
        let s = oversampling;
        let arg = (w / s).powi(2) * (s - 0.5).powi(2) - 0.8;
        Ok(Self {
            width,
            oversampling,
            beta: PI * arg.max(0.0).sqrt(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.width, self.oversampling).map(|_| ())?;
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidArgument(format!("kernel shape {} is invalid", self.beta)));
        }
        Ok(())
    }

    /// Kernel value at offset `t` grid cells from its center.
    pub fn eval(&self, t: f64) -> f64 {
        let r = 2.0 * t / self.width as f64;
        if r.abs() > 1.0 {
            return 0.0;
        }
        bessel_i0(self.beta * (1.0 - r * r).sqrt())
    }

    /// Continuous Fourier transform of [`eval`](Self::eval) at frequency `xi`
    /// (cycles per grid cell).
    pub fn transform(&self, xi: f64) -> f64 {
        let w = self.width as f64;
        let q = self.beta * self.beta - (PI * w * xi).powi(2);
        if q > 1e-12 {
            let s = q.sqrt();
            w * s.sinh() / s
        } else if q < -1e-12 {
            let s = (-q).sqrt();
            w * s.sin() / s
        } else {
            w
        }
    }
}

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > 1e-17 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// One axis of the gridding plan.
#[derive(Clone)]
struct Axis {
    n: usize,
    grid: usize,
    /// `1 / transform(u / grid)` for each centered image index.
    deapod: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Axis {
    fn new(n: usize, kernel: &GriddingKernel, planner: &mut FftPlanner<f64>) -> Self {
        let mut grid = (kernel.oversampling * n as f64).ceil() as usize;
        grid += grid % 2;
        grid = grid.max(kernel.width + 1);
        let deapod = (0..n)
            .map(|i| 1.0 / kernel.transform(centered(i, n) / grid as f64))
            .collect();
        Self {
            n,
            grid,
            deapod,
            fwd: planner.plan_fft_forward(grid),
            inv: planner.plan_fft_inverse(grid),
        }
    }

    fn grid_index(&self, i: usize) -> usize {
        let u = i as isize - (self.n / 2) as isize;
        u.rem_euclid(self.grid as isize) as usize
    }

    /// First grid index and kernel weights of the window around `k`.
    fn window(&self, k: f64, kernel: &GriddingKernel, w: &mut Vec<f64>) -> isize {
        let t = k * self.grid as f64;
        let half = kernel.width as f64 / 2.0;
        let lo = (t - half).ceil() as isize;
        let hi = (t + half).floor() as isize;
        w.clear();
        w.extend((lo..=hi).map(|l| kernel.eval(t - l as f64)));
        lo
    }
}

/// Precomputed fast NUFFT for one image shape and kernel.
#[derive(Clone)]
pub struct NufftPlan {
    kernel: GriddingKernel,
    rows: Axis,
    cols: Axis,
}

impl std::fmt::Debug for NufftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NufftPlan")
            .field("kernel", &self.kernel)
            .field("shape", &(self.rows.n, self.cols.n))
            .field("grid", &(self.rows.grid, self.cols.grid))
            .finish()
    }
}

impl NufftPlan {
    pub fn new(height: usize, width: usize, kernel: GriddingKernel) -> Result<Self> {
        kernel.validate()?;
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("image dimensions must be positive".into()));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            kernel,
            rows: Axis::new(height, &kernel, &mut planner),
            cols: Axis::new(width, &kernel, &mut planner),
        })
    }

    pub fn height(&self) -> usize {
        self.rows.n
    }

    pub fn width(&self) -> usize {
        self.cols.n
    }

    pub fn kernel(&self) -> &GriddingKernel {
        &self.kernel
    }

    fn check_image(&self, img: &ComplexImage) -> Result<()> {
        if img.height != self.rows.n || img.width != self.cols.n {
            return Err(Error::shape(
                format!("{}x{} image", self.rows.n, self.cols.n),
                format!("{}x{}", img.height, img.width),
            ));
        }
        Ok(())
    }

    /// In-place 2D FFT of the oversampled grid.
    fn fft2(&self, buf: &mut [Complex64], forward: bool) {
        let (g1, g2) = (self.rows.grid, self.cols.grid);
        let (row_fft, col_fft) = if forward {
            (&self.cols.fwd, &self.rows.fwd)
        } else {
            (&self.cols.inv, &self.rows.inv)
        };
        row_fft.process(buf);
        let mut t = vec![Complex64::new(0.0, 0.0); g1 * g2];
        transpose(buf, &mut t, g1, g2);
        col_fft.process(&mut t);
        transpose(&t, buf, g2, g1);
    }

    /// Fast forward transform of one frame.
    pub fn forward(&self, img: &ComplexImage, coords: &[f64], n_shots: usize) -> Result<KSamples> {
        self.check_image(img)?;
        let m = check_coords(coords, n_shots)?;
        let (g1, g2) = (self.rows.grid, self.cols.grid);
        let mut grid = vec![Complex64::new(0.0, 0.0); g1 * g2];
        for x in 0..self.rows.n {
            let gx = self.rows.grid_index(x);
            let dx = self.rows.deapod[x];
            for y in 0..self.cols.n {
                grid[gx * g2 + self.cols.grid_index(y)] = img.get(x, y) * (dx * self.cols.deapod[y]);
            }
        }
        self.fft2(&mut grid, true);
        let (mut wx, mut wy) = (Vec::new(), Vec::new());
        let values = coords
            .chunks_exact(2)
            .map(|k| {
                let lx = self.rows.window(k[0], &self.kernel, &mut wx);
                let ly = self.cols.window(k[1], &self.kernel, &mut wy);
                let mut acc = Complex64::new(0.0, 0.0);
                for (a, &wa) in wx.iter().enumerate() {
                    let ix = (lx + a as isize).rem_euclid(g1 as isize) as usize;
                    let row = &grid[ix * g2..(ix + 1) * g2];
                    let mut racc = Complex64::new(0.0, 0.0);
                    for (b, &wb) in wy.iter().enumerate() {
                        let iy = (ly + b as isize).rem_euclid(g2 as isize) as usize;
                        racc += row[iy] * wb;
                    }
                    acc += racc * wa;
                }
                acc
            })
            .collect();
        Ok(KSamples { n_shots, m, values })
    }

    /// Exact adjoint of [`forward`](Self::forward).
    pub fn adjoint(&self, samples: &KSamples, coords: &[f64]) -> Result<ComplexImage> {
        check_samples(samples, coords)?;
        check_coords(coords, samples.n_shots)?;
        let (g1, g2) = (self.rows.grid, self.cols.grid);
        let mut grid = vec![Complex64::new(0.0, 0.0); g1 * g2];
        let (mut wx, mut wy) = (Vec::new(), Vec::new());
        for (k, &val) in coords.chunks_exact(2).zip(&samples.values) {
            let lx = self.rows.window(k[0], &self.kernel, &mut wx);
            let ly = self.cols.window(k[1], &self.kernel, &mut wy);
            for (a, &wa) in wx.iter().enumerate() {
                let ix = (lx + a as isize).rem_euclid(g1 as isize) as usize;
                let va = val * wa;
                let row = &mut grid[ix * g2..(ix + 1) * g2];
                for (b, &wb) in wy.iter().enumerate() {
                    let iy = (ly + b as isize).rem_euclid(g2 as isize) as usize;
                    row[iy] += va * wb;
                }
            }
        }
        self.fft2(&mut grid, false);
        let mut out = ComplexImage::zeros(self.rows.n, self.cols.n);
        for x in 0..self.rows.n {
            let gx = self.rows.grid_index(x);
            let dx = self.rows.deapod[x];
            for y in 0..self.cols.n {
                out.data[x * self.cols.n + y] = grid[gx * g2 + self.cols.grid_index(y)] * (dx * self.cols.deapod[y]);
            }
        }
        Ok(out)
    }

    /// Coordinate gradient through the fast forward, evaluated with two
    /// transforms of the coordinate-weighted images.
    pub fn grad_wrt_coords(&self, img: &ComplexImage, coords: &[f64], upstream: &KSamples) -> Result<Vec<f64>> {
        check_samples(upstream, coords)?;
        let du = self.forward(&img.weighted_by_u(), coords, upstream.n_shots)?;
        let dv = self.forward(&img.weighted_by_v(), coords, upstream.n_shots)?;
        Ok(pair_gradients(&du, &dv, upstream))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NufftKind {
    Direct,
    Fast,
}

/// Either transform path behind one interface.
#[derive(Debug, Clone)]
pub enum NufftOp {
    Direct { height: usize, width: usize },
    Fast(NufftPlan),
}

impl NufftOp {
    pub fn new(kind: NufftKind, height: usize, width: usize, kernel: GriddingKernel) -> Result<Self> {
        match kind {
            NufftKind::Direct => Ok(NufftOp::Direct { height, width }),
            NufftKind::Fast => NufftPlan::new(height, width, kernel).map(NufftOp::Fast),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            NufftOp::Direct { height, width } => (*height, *width),
            NufftOp::Fast(p) => (p.height(), p.width()),
        }
    }

    pub fn forward(&self, img: &ComplexImage, coords: &[f64], n_shots: usize) -> Result<KSamples> {
        match self {
            NufftOp::Direct { .. } => forward_direct(img, coords, n_shots),
            NufftOp::Fast(p) => p.forward(img, coords, n_shots),
        }
    }

    pub fn adjoint(&self, samples: &KSamples, coords: &[f64]) -> Result<ComplexImage> {
        match self {
            NufftOp::Direct { height, width } => adjoint_direct(samples, coords, *height, *width),
            NufftOp::Fast(p) => p.adjoint(samples, coords),
        }
    }

    pub fn grad_wrt_coords(&self, img: &ComplexImage, coords: &[f64], upstream: &KSamples) -> Result<Vec<f64>> {
        match self {
            NufftOp::Direct { .. } => grad_wrt_coords_direct(img, coords, upstream),
            NufftOp::Fast(p) => p.grad_wrt_coords(img, coords, upstream),
        }
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Complex inner product `sum conj(a) b`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}
