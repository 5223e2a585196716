//! Image quality metrics on magnitude images: PSNR, pixel-domain VIF and
//! FSIM.
//!
//! VIF and FSIM operate on images scaled to the 0..255 range (the scale their
//! stabilizing constants were tuned for); inputs are expected in `[0, 1]`.
//!
//! FSIM constants: phase congruency from a log-Gabor bank with 4 scales and
//! 4 orientations, minimum wavelength 6, scale factor 2, `sigma_onf = 0.55`,
//! angular spread ratio 1.2, noise threshold `k = 2` divided by 1.7, lowpass
//! radius 0.45 with order 15; Scharr gradients divided by 16; `T1 = 0.85`,
//! `T2 = 160`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// PSNR reported for a zero mean squared error.
pub const PSNR_CAP_DB: f64 = 100.0;

fn check_same(a: &[f64], b: &[f64], height: usize, width: usize) -> Result<()> {
    if a.len() != height * width || b.len() != height * width {
        return Err(Error::shape(
            format!("two {height}x{width} images"),
            format!("{} and {} pixels", a.len(), b.len()),
        ));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    Ok(())
}

pub fn mse(reference: &[f64], test: &[f64]) -> Result<f64> {
    if reference.len() != test.len() || reference.is_empty() {
        return Err(Error::shape(format!("{} pixels", reference.len()), format!("{} pixels", test.len())));
    }
    Ok(reference.iter().zip(test).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / reference.len() as f64)
}

/// `10 log10(range^2 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: &[f64], test: &[f64], data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument(format!("data range {data_range} must be positive")));
    }
    let e = mse(reference, test)?;
    if e == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (data_range * data_range / e).log10()).min(PSNR_CAP_DB))
}

fn to_255(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x * 255.0).collect()
}

/// Normalized 1-D Gaussian of `n` taps and width `sigma`.
fn gaussian_taps(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let t: Vec<f64> = (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = t.iter().sum();
    t.into_iter().map(|v| v / s).collect()
}

/// Separable 'valid' filtering.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = taps.len();
    let (h2, w2) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * w2];
    for x in 0..h {
        for y in 0..w2 {
            rows[x * w2 + y] = taps.iter().enumerate().map(|(k, t)| t * img[x * w + y + k]).sum();
        }
    }
    let mut out = vec![0.0; h2 * w2];
    for x in 0..h2 {
        for y in 0..w2 {
            out[x * w2 + y] = taps.iter().enumerate().map(|(k, t)| t * rows[(x + k) * w2 + y]).sum();
        }
    }
    (out, h2, w2)
}

fn decimate(img: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(h2 * w2);
    for x in (0..h).step_by(2) {
        for y in (0..w).step_by(2) {
            out.push(img[x * w + y]);
        }
    }
    (out, h2, w2)
}

/// Pixel-domain visual information fidelity over four Gaussian scales.
///
/// A constant reference carries no information; the score is then 1 for an
/// identical test image and 0 otherwise.
pub fn vif(reference: &[f64], test: &[f64], height: usize, width: usize) -> Result<f64> {
    check_same(reference, test, height, width)?;
    const SIGMA_NSQ: f64 = 2.0;
    const EPS: f64 = 1e-10;
    let mut r = to_255(reference);
    let mut d = to_255(test);
    let (mut h, mut w) = (height, width);
    let (mut num, mut den) = (0.0, 0.0);
    for scale in 1..=4u32 {
        let n = (1usize << (5 - scale)) + 1;
        let taps = gaussian_taps(n, n as f64 / 5.0);
        if scale > 1 {
            if h < n || w < n {
                break;
            }
            let (fr, hh, ww) = filter_valid(&r, h, w, &taps);
            let (fd, _, _) = filter_valid(&d, h, w, &taps);
            let (dr, h2, w2) = decimate(&fr, hh, ww);
            let (dd, _, _) = decimate(&fd, hh, ww);
            r = dr;
            d = dd;
            h = h2;
            w = w2;
        }
        if h < n || w < n {
            break;
        }
        let (mu1, _, _) = filter_valid(&r, h, w, &taps);
        let (mu2, _, _) = filter_valid(&d, h, w, &taps);
        let rr: Vec<f64> = r.iter().map(|v| v * v).collect();
        let dd: Vec<f64> = d.iter().map(|v| v * v).collect();
        let rd: Vec<f64> = r.iter().zip(&d).map(|(a, b)| a * b).collect();
        let (s11, _, _) = filter_valid(&rr, h, w, &taps);
        let (s22, _, _) = filter_valid(&dd, h, w, &taps);
        let (s12, _, _) = filter_valid(&rd, h, w, &taps);
        for i in 0..mu1.len() {
            let mut sigma1_sq = (s11[i] - mu1[i] * mu1[i]).max(0.0);
            let sigma2_sq = (s22[i] - mu2[i] * mu2[i]).max(0.0);
            let sigma12 = s12[i] - mu1[i] * mu2[i];
            let mut g = sigma12 / (sigma1_sq + EPS);
            let mut sv_sq = sigma2_sq - g * sigma12;
            if sigma1_sq < EPS {
                g = 0.0;
                sv_sq = sigma2_sq;
                sigma1_sq = 0.0;
            }
            if sigma2_sq < EPS {
                g = 0.0;
                sv_sq = 0.0;
            }
            if g < 0.0 {
                sv_sq = sigma2_sq;
                g = 0.0;
            }
            sv_sq = sv_sq.max(EPS);
            num += (1.0 + g * g * sigma1_sq / (sv_sq + SIGMA_NSQ)).log10();
            den += (1.0 + sigma1_sq / SIGMA_NSQ).log10();
        }
    }
    if den <= 0.0 {
        return Ok(if reference == test { 1.0 } else { 0.0 });
    }
    Ok(num / den)
}

/// Frequency of FFT bin `i` of `n` on the grid used by the filter bank.
fn bank_freq(i: usize, n: usize) -> f64 {
    if n % 2 == 0 {
        let k = if i < n / 2 { i as f64 } else { i as f64 - n as f64 };
        k / n as f64
    } else {
        let half = (n - 1) / 2;
        let k = if i <= half { i as f64 } else { i as f64 - n as f64 };
        k / (n as f64 - 1.0).max(1.0)
    }
}

struct Fft2 {
    h: usize,
    w: usize,
    row_f: std::sync::Arc<dyn rustfft::Fft<f64>>,
    col_f: std::sync::Arc<dyn rustfft::Fft<f64>>,
    row_i: std::sync::Arc<dyn rustfft::Fft<f64>>,
    col_i: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Fft2 {
    fn new(h: usize, w: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            h,
            w,
            row_f: p.plan_fft_forward(w),
            col_f: p.plan_fft_forward(h),
            row_i: p.plan_fft_inverse(w),
            col_i: p.plan_fft_inverse(h),
        }
    }

    fn run(&self, buf: &mut [Complex64], forward: bool) {
        let (h, w) = (self.h, self.w);
        let (r, c) = if forward { (&self.row_f, &self.col_f) } else { (&self.row_i, &self.col_i) };
        r.process(buf);
        let mut t = vec![Complex64::new(0.0, 0.0); h * w];
        for x in 0..h {
            for y in 0..w {
                t[y * h + x] = buf[x * w + y];
            }
        }
        c.process(&mut t);
        for x in 0..h {
            for y in 0..w {
                buf[x * w + y] = t[y * h + x];
            }
        }
        if !forward {
            let s = 1.0 / (h * w) as f64;
            buf.iter_mut().for_each(|v| *v *= s);
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    let n = v.len();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Phase congruency map from a log-Gabor filter bank.
pub fn phase_congruency(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    const NSCALE: usize = 4;
    const NORIENT: usize = 4;
    const MIN_WAVELENGTH: f64 = 6.0;
    const MULT: f64 = 2.0;
    const SIGMA_ONF: f64 = 0.55;
    const D_THETA_ON_SIGMA: f64 = 1.2;
    const K: f64 = 2.0;
    const EPSILON: f64 = 1e-4;
    let theta_sigma = PI / NORIENT as f64 / D_THETA_ON_SIGMA;
    let n = h * w;
    let fft = Fft2::new(h, w);
    let mut spectrum: Vec<Complex64> = img.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.run(&mut spectrum, true);

    let mut radius = vec![0.0; n];
    let mut theta = vec![0.0; n];
    for x in 0..h {
        let fy = bank_freq(x, h);
        for y in 0..w {
            let fx = bank_freq(y, w);
            radius[x * w + y] = fx.hypot(fy);
            theta[x * w + y] = (-fy).atan2(fx);
        }
    }
    radius[0] = 1.0;
    let lowpass: Vec<f64> = radius.iter().map(|r| 1.0 / (1.0 + (r / 0.45).powi(30))).collect();
    let log_gabor: Vec<Vec<f64>> = (0..NSCALE)
        .map(|s| {
            let fo = 1.0 / (MIN_WAVELENGTH * MULT.powi(s as i32));
            let mut g: Vec<f64> = radius
                .iter()
                .zip(&lowpass)
                .map(|(r, lp)| (-(r / fo).ln().powi(2) / (2.0 * SIGMA_ONF.ln().powi(2))).exp() * lp)
                .collect();
            g[0] = 0.0;
            g
        })
        .collect();

    let mut energy_all = vec![0.0; n];
    let mut an_all = vec![0.0; n];
    for o in 0..NORIENT {
        let angl = o as f64 * PI / NORIENT as f64;
        let (ca, sa) = (angl.cos(), angl.sin());
        let spread: Vec<f64> = theta
            .iter()
            .map(|t| {
                let (st, ct) = (t.sin(), t.cos());
                let ds = st * ca - ct * sa;
                let dc = ct * ca + st * sa;
                let dtheta = ds.atan2(dc).abs();
                (-dtheta * dtheta / (2.0 * theta_sigma * theta_sigma)).exp()
            })
            .collect();
        let mut sum_e = vec![0.0; n];
        let mut sum_o = vec![0.0; n];
        let mut sum_an = vec![0.0; n];
        let mut eo_all = Vec::with_capacity(NSCALE);
        let mut ifft_filters = Vec::with_capacity(NSCALE);
        let mut em_n = 0.0;
        for (s, lg) in log_gabor.iter().enumerate() {
            let filter: Vec<f64> = lg.iter().zip(&spread).map(|(a, b)| a * b).collect();
            let mut f: Vec<Complex64> = filter.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft.run(&mut f, false);
            let sq = (n as f64).sqrt();
            ifft_filters.push(f.iter().map(|v| v.re * sq).collect::<Vec<f64>>());
            let mut eo: Vec<Complex64> = spectrum.iter().zip(&filter).map(|(a, b)| a * b).collect();
            fft.run(&mut eo, false);
            for i in 0..n {
                sum_an[i] += eo[i].norm();
                sum_e[i] += eo[i].re;
                sum_o[i] += eo[i].im;
            }
            if s == 0 {
                em_n = filter.iter().map(|v| v * v).sum();
            }
            eo_all.push(eo);
        }
        let mut energy = vec![0.0; n];
        for i in 0..n {
            let xe = sum_e[i].hypot(sum_o[i]) + EPSILON;
            let (me, mo) = (sum_e[i] / xe, sum_o[i] / xe);
            for eo in &eo_all {
                let (e, od) = (eo[i].re, eo[i].im);
                energy[i] += e * me + od * mo - (e * mo - od * me).abs();
            }
        }
        let median_e2n = median(eo_all[0].iter().map(|v| v.norm_sqr()).collect());
        let mean_e2n = -median_e2n / 0.5f64.ln();
        let noise_power = if em_n > 0.0 { mean_e2n / em_n } else { 0.0 };
        let mut sum_an2 = 0.0;
        let mut sum_aiaj = 0.0;
        for i in 0..n {
            for a in 0..NSCALE {
                sum_an2 += ifft_filters[a][i].powi(2);
                for b in a + 1..NSCALE {
                    sum_aiaj += ifft_filters[a][i] * ifft_filters[b][i];
                }
            }
        }
        let est_noise_energy2 = 2.0 * noise_power * sum_an2 + 4.0 * noise_power * sum_aiaj;
        let tau = (est_noise_energy2 / 2.0).max(0.0).sqrt();
        let est_noise_energy = tau * (PI / 2.0).sqrt();
        let est_noise_sigma = ((2.0 - PI / 2.0) * tau * tau).sqrt();
        let t = (est_noise_energy + K * est_noise_sigma) / 1.7;
        for i in 0..n {
            energy_all[i] += (energy[i] - t).max(0.0);
            an_all[i] += sum_an[i];
        }
    }
    energy_all
        .iter()
        .zip(&an_all)
        .map(|(e, a)| if *a > f64::MIN_POSITIVE { e / a } else { 0.0 })
        .collect()
}

fn scharr_magnitude(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= h as isize || y >= w as isize {
            0.0
        } else {
            img[x as usize * w + y as usize]
        }
    };
    let mut out = vec![0.0; h * w];
    for x in 0..h as isize {
        for y in 0..w as isize {
            let gx = (3.0 * (at(x - 1, y - 1) - at(x - 1, y + 1)) + 10.0 * (at(x, y - 1) - at(x, y + 1)) + 3.0 * (at(x + 1, y - 1) - at(x + 1, y + 1))) / 16.0;
            let gy = (3.0 * (at(x - 1, y - 1) - at(x + 1, y - 1)) + 10.0 * (at(x - 1, y) - at(x + 1, y)) + 3.0 * (at(x - 1, y + 1) - at(x + 1, y + 1))) / 16.0;
            out[x as usize * w + y as usize] = gx.hypot(gy);
        }
    }
    out
}

/// Feature similarity index of two grayscale images.
pub fn fsim(reference: &[f64], test: &[f64], height: usize, width: usize) -> Result<f64> {
    check_same(reference, test, height, width)?;
    const T1: f64 = 0.85;
    const T2: f64 = 160.0;
    let (r, d) = (to_255(reference), to_255(test));
    let pc1 = phase_congruency(&r, height, width);
    let pc2 = phase_congruency(&d, height, width);
    let g1 = scharr_magnitude(&r, height, width);
    let g2 = scharr_magnitude(&d, height, width);
    let (mut num, mut den, mut grad_only) = (0.0, 0.0, 0.0);
    for i in 0..r.len() {
        let pcs = (2.0 * pc1[i] * pc2[i] + T1) / (pc1[i] * pc1[i] + pc2[i] * pc2[i] + T1);
        let gs = (2.0 * g1[i] * g2[i] + T2) / (g1[i] * g1[i] + g2[i] * g2[i] + T2);
        let pcm = pc1[i].max(pc2[i]);
        num += gs * pcs * pcm;
        den += pcm;
        grad_only += gs;
    }
    if den <= 0.0 {
        return Ok(grad_only / r.len() as f64);
    }
    Ok((num / den).clamp(0.0, 1.0))
}

/// Metrics of one reconstructed frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub psnr: f64,
    pub vif: f64,
    pub fsim: f64,
}

/// Frame metrics with the reconstruction clamped to the data range `[0, 1]`.
pub fn frame_metrics(reference: &[f64], recon: &[f64], height: usize, width: usize) -> Result<FrameMetrics> {
    let clamped: Vec<f64> = recon.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok(FrameMetrics {
        psnr: psnr(reference, &clamped, 1.0)?,
        vif: vif(reference, &clamped, height, width)?,
        fsim: fsim(reference, &clamped, height, width)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Standard error of the mean.
    pub std_err: f64,
    pub n: usize,
}

impl Summary {
    /// Order-independent: values are sorted before accumulation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        let mean = v.iter().sum::<f64>() / n as f64;
        let std_err = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std_err, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub psnr: Summary,
    pub vif: Summary,
    pub fsim: Summary,
    /// `per_frame[sample][frame]`.
    pub per_frame: Vec<Vec<FrameMetrics>>,
}

impl MetricsReport {
    pub fn from_frames(per_frame: Vec<Vec<FrameMetrics>>) -> Self {
        let all: Vec<FrameMetrics> = per_frame.iter().flatten().copied().collect();
        let pick = |f: fn(&FrameMetrics) -> f64| Summary::of(&all.iter().map(f).collect::<Vec<_>>());
        Self {
            psnr: pick(|m| m.psnr),
            vif: pick(|m| m.vif),
            fsim: pick(|m| m.fsim),
            per_frame,
        }
    }
}
