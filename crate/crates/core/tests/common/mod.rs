//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::PI;

/// Projection of one shot (interleaved kx, ky) onto
/// `{|D1 c| <= v, |D2 c| <= a, |c|_inf <= 0.5}` by accelerated projected
/// gradient (FISTA) on the dual problem. Returns the primal point `x - A^T q`.
pub fn dual_fista_projection(shot: &[f64], v: f64, a: f64, iters: usize) -> Vec<f64> {
    let m = shot.len() / 2;
    let n1 = m - 1;
    let n2 = m.saturating_sub(2);
    // Dual variables per block and axis, flattened as [block][i][axis].
    let dim = 2 * (n1 + n2 + m);
    let apply_at = |q: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; 2 * m];
        for i in 0..n1 {
            for d in 0..2 {
                let w = q[2 * i + d];
                out[2 * i + d] -= w;
                out[2 * (i + 1) + d] += w;
            }
        }
        let o2 = 2 * n1;
        for i in 0..n2 {
            for d in 0..2 {
                let w = q[o2 + 2 * i + d];
                out[2 * i + d] += w;
                out[2 * (i + 1) + d] -= 2.0 * w;
                out[2 * (i + 2) + d] += w;
            }
        }
        let o3 = 2 * (n1 + n2);
        for j in 0..2 * m {
            out[j] += q[o3 + j];
        }
        out
    };
    let apply_a = |c: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for i in 0..n1 {
            for d in 0..2 {
                out[2 * i + d] = c[2 * (i + 1) + d] - c[2 * i + d];
            }
        }
        let o2 = 2 * n1;
        for i in 0..n2 {
            for d in 0..2 {
                out[o2 + 2 * i + d] = c[2 * (i + 2) + d] - 2.0 * c[2 * (i + 1) + d] + c[2 * i + d];
            }
        }
        let o3 = 2 * (n1 + n2);
        out[o3..].copy_from_slice(c);
        out
    };
    // Projection onto B (balls and box) of y.
    let proj_b = |y: &mut [f64]| {
        for i in 0..n1 {
            let n = y[2 * i].hypot(y[2 * i + 1]);
            if n > v {
                y[2 * i] *= v / n;
                y[2 * i + 1] *= v / n;
            }
        }
        let o2 = 2 * n1;
        for i in 0..n2 {
            let n = y[o2 + 2 * i].hypot(y[o2 + 2 * i + 1]);
            if n > a {
                y[o2 + 2 * i] *= a / n;
                y[o2 + 2 * i + 1] *= a / n;
            }
        }
        let o3 = 2 * (n1 + n2);
        for e in &mut y[o3..] {
            *e = e.clamp(-0.5, 0.5);
        }
    };
    let lip = 21.0;
    let t = 1.0 / lip;
    let mut q = vec![0.0; dim];
    let mut yk = q.clone();
    let mut tk = 1.0f64;
    for _ in 0..iters {
        // gradient of the smooth part at yk: -A c(yk)
        let at = apply_at(&yk);
        let c: Vec<f64> = shot.iter().zip(&at).map(|(x, w)| x - w).collect();
        let ac = apply_a(&c);
        let mut step: Vec<f64> = yk.iter().zip(&ac).map(|(y, g)| y + t * g).collect();
        // prox of t * support function: s - t * P_B(s / t)
        let mut scaled: Vec<f64> = step.iter().map(|s| s / t).collect();
        proj_b(&mut scaled);
        for (s, p) in step.iter_mut().zip(&scaled) {
            *s -= t * p;
        }
        let t_next = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
        let beta = (tk - 1.0) / t_next;
        yk = step.iter().zip(&q).map(|(n, o)| n + beta * (n - o)).collect();
        q = step;
        tk = t_next;
    }
    let at = apply_at(&q);
    shot.iter().zip(&at).map(|(x, w)| x - w).collect()
}

/// Random shot that violates the speed and acceleration bounds.
pub fn random_infeasible_shot<R: Rng>(rng: &mut R, m: usize, v: f64, a: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * m);
    let mut p = [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)];
    let mut vel = [0.0, 0.0];
    for _ in 0..m {
        out.extend_from_slice(&p);
        let ang = rng.gen_range(0.0..2.0 * PI);
        let mag = rng.gen_range(0.0..3.0) * a;
        vel[0] += mag * ang.cos();
        vel[1] += mag * ang.sin();
        let speed = vel[0].hypot(vel[1]);
        let cap = rng.gen_range(0.5..2.5) * v;
        if speed > cap {
            vel[0] *= cap / speed;
            vel[1] *= cap / speed;
        }
        p[0] = (p[0] + vel[0]).clamp(-0.45, 0.45);
        p[1] = (p[1] + vel[1]).clamp(-0.45, 0.45);
    }
    out
}

pub fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Exact O(HW) DTFT sample of an image at `(kx, ky)`, centered integer grids.
pub fn dtft(img: &[Complex64], h: usize, w: usize, kx: f64, ky: f64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for x in 0..h {
        for y in 0..w {
            let u = x as f64 - (h / 2) as f64;
            let vv = y as f64 - (w / 2) as f64;
            acc += img[x * w + y] * Complex64::from_polar(1.0, -2.0 * PI * (kx * u + ky * vv));
        }
    }
    acc
}

pub fn random_complex<R: Rng>(rng: &mut R, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

pub fn random_coords<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..2 * n).map(|_| rng.gen_range(-0.5..0.5)).collect()
}
