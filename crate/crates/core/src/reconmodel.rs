//! Multi-frame reconstruction model: a small encoder-decoder applied to every
//! frame, fed with the real and imaginary parts of the frame and its `r`
//! temporal neighbours (edge frames replicate), and a residual path that adds
//! the magnitude of the input frame.
//!
//! All parameters live in one flat `f64` vector described by a layer-layout
//! table, so optimizers, resets and checkpoints treat the model as a vector.
//! Gradients are computed by hand-written backpropagation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{VectorContainer, PARAMS_MAGIC};
use crate::error::{Error, Result};
use crate::trajectory::fnv1a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    /// Channels at the finest scale; doubled at every coarser scale.
    pub base_channels: usize,
    /// Number of resolution scales (1 disables pooling).
    pub scales: usize,
    /// Temporal context radius `r`.
    pub temporal_radius: usize,
    /// Dropout probability on the coarsest features during training.
    pub dropout: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            base_channels: 4,
            scales: 3,
            temporal_radius: 1,
            dropout: 0.0,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Config("recon.base_channels must be positive".into()));
        }
        if self.scales == 0 || self.scales > 6 {
            return Err(Error::Config(format!("recon.scales must be in 1..=6, got {}", self.scales)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("recon.dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    /// Image sizes must be divisible by this factor.
    pub fn size_multiple(&self) -> usize {
        1 << (self.scales - 1)
    }

    pub fn input_channels(&self) -> usize {
        2 * (2 * self.temporal_radius + 1)
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn check_shape(&self, height: usize, width: usize) -> Result<()> {
        let k = self.size_multiple();
        if height == 0 || width == 0 || height % k != 0 || width % k != 0 {
            return Err(Error::Config(format!(
                "image size {height}x{width} must be a positive multiple of {k} for {} scales",
                self.scales
            )));
        }
        Ok(())
    }

    pub fn hash(&self) -> u64 {
        fnv1a(serde_json::to_vec(self).expect("config serializes"))
    }

    /// Layer layout: `(name, cout, cin, kernel)` for every convolution.
    fn layers(&self) -> Vec<(String, usize, usize, usize)> {
        let mut out = Vec::new();
        let mut cin = self.input_channels();
        for l in 0..self.scales {
            let c = self.channels(l);
            out.push((format!("enc{l}.conv0"), c, cin, 3));
            out.push((format!("enc{l}.conv1"), c, c, 3));
            cin = c;
        }
        for l in (0..self.scales.saturating_sub(1)).rev() {
            let c = self.channels(l);
            out.push((format!("dec{l}.conv0"), c, self.channels(l + 1) + c, 3));
            out.push((format!("dec{l}.conv1"), c, c, 3));
        }
        out.push(("out.conv".into(), 1, self.channels(0), 1));
        out
    }
}

/// One entry of the parameter layout table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSpec {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl LayerSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    b: usize,
    cout: usize,
    cin: usize,
    k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconParams {
    config: ReconConfig,
    layout: Vec<LayerSpec>,
    pub values: Vec<f64>,
}

fn build_layout(config: &ReconConfig) -> (Vec<LayerSpec>, usize) {
    let mut layout = Vec::new();
    let mut offset = 0;
    for (name, cout, cin, k) in config.layers() {
        let w = LayerSpec {
            name: format!("{name}.weight"),
            offset,
            shape: vec![cout, cin, k, k],
        };
        offset += w.len();
        let b = LayerSpec {
            name: format!("{name}.bias"),
            offset,
            shape: vec![cout],
        };
        offset += b.len();
        layout.push(w);
        layout.push(b);
    }
    layout.push(LayerSpec {
        name: "residual.gain".into(),
        offset,
        shape: vec![1],
    });
    (layout, offset + 1)
}

/// Deterministic initialization: conv weights uniform in `+-1/sqrt(fan_in)`,
/// zero biases, a zero output layer and unit residual gain, so the untrained
/// model returns the input magnitude.
pub fn init_params(config: &ReconConfig, seed: u64) -> Result<ReconParams> {
    config.validate()?;
    let (layout, len) = build_layout(config);
    let mut values = vec![0.0; len];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for spec in &layout {
        if spec.name.ends_with(".weight") && !spec.name.starts_with("out.") {
            let fan_in = (spec.shape[1] * spec.shape[2] * spec.shape[3]) as f64;
            let bound = 1.0 / fan_in.sqrt();
            for v in &mut values[spec.range()] {
                *v = rng.gen_range(-bound..bound);
            }
        }
    }
    values[len - 1] = 1.0;
    Ok(ReconParams {
        config: config.clone(),
        layout,
        values,
    })
}

impl ReconParams {
    pub fn config(&self) -> &ReconConfig {
        &self.config
    }

    pub fn layout(&self) -> &[LayerSpec] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&LayerSpec> {
        self.layout.iter().find(|l| l.name == name)
    }

    /// FNV-1a hash of the parameter bytes.
    pub fn hash(&self) -> u64 {
        fnv1a(self.values.iter().flat_map(|v| v.to_le_bytes()))
    }

    /// Re-initialize in place; equivalent to `init_params(config, seed)`.
    pub fn reset(&mut self, seed: u64) {
        *self = init_params(&self.config, seed).expect("config was validated at construction");
    }

    fn convs(&self) -> Vec<Conv> {
        self.layout
            .chunks(2)
            .filter(|c| c.len() == 2)
            .map(|c| Conv {
                w: c[0].offset,
                b: c[1].offset,
                cout: c[0].shape[0],
                cin: c[0].shape[1],
                k: c[0].shape[2],
            })
            .collect()
    }

    fn gain_index(&self) -> usize {
        self.values.len() - 1
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        VectorContainer {
            config_hash: self.config.hash(),
            step: 0,
            vectors: vec![self.values.clone()],
        }
        .save(path, PARAMS_MAGIC)
    }

    pub fn load(path: &Path, config: &ReconConfig) -> Result<Self> {
        let c = VectorContainer::load(path, PARAMS_MAGIC, "RPRM")?;
        let mut params = init_params(config, 0)?;
        if c.config_hash != config.hash() {
            return Err(Error::Config(format!(
                "{}: parameters were saved for a different model configuration",
                path.display()
            )));
        }
        let values = c.vectors.into_iter().next().unwrap_or_default();
        if values.len() != params.values.len() {
            return Err(Error::shape(format!("{} parameters", params.values.len()), values.len().to_string()));
        }
        params.values = values;
        Ok(params)
    }
}

/// Regridded frames as real channels, `data[((t * 2 + c) * H + x) * W + y]`
/// with `c = 0` real and `c = 1` imaginary.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconInput {
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ReconInput {
    pub fn zeros(n_frames: usize, height: usize, width: usize) -> Self {
        Self {
            n_frames,
            height,
            width,
            data: vec![0.0; n_frames * 2 * height * width],
        }
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = 2 * self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let n = 2 * self.height * self.width;
        &mut self.data[t * n..(t + 1) * n]
    }
}

/// Magnitude reconstruction, `data[(t * H + x) * W + y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconOutput {
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ReconOutput {
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }
}

/// Activations kept by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ReconCache {
    params_hash: u64,
    n_frames: usize,
    height: usize,
    width: usize,
    frames: Vec<FrameCache>,
}

#[derive(Debug, Clone, Default)]
struct FrameCache {
    stacked: Vec<f64>,
    /// Post-activation outputs of every 3x3 convolution, in layer order.
    acts: Vec<Vec<f64>>,
    /// Inputs of every 3x3 convolution, in layer order.
    inputs: Vec<Vec<f64>>,
    dropout_mask: Option<Vec<f64>>,
    magnitude: Vec<f64>,
}

/// Stack the `2r + 1` neighbours of frame `t` (replicate padding).
fn stack_frame(input: &ReconInput, t: usize, r: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((2 * r + 1) * 2 * input.height * input.width);
    for d in 0..=2 * r {
        let src = (t + d).saturating_sub(r).min(input.n_frames - 1);
        out.extend_from_slice(input.frame(src));
    }
    out
}

fn conv_forward(p: &[f64], c: Conv, inp: &[f64], h: usize, w: usize, out: &mut [f64]) {
    let hw = h * w;
    let weights = &p[c.w..c.w + c.cout * c.cin * c.k * c.k];
    let bias = &p[c.b..c.b + c.cout];
    for co in 0..c.cout {
        let o = &mut out[co * hw..(co + 1) * hw];
        o.fill(bias[co]);
        for ci in 0..c.cin {
            let src = &inp[ci * hw..(ci + 1) * hw];
            let wk = &weights[(co * c.cin + ci) * c.k * c.k..][..c.k * c.k];
            if c.k == 1 {
                let wv = wk[0];
                o.iter_mut().zip(src).for_each(|(a, b)| *a += wv * b);
                continue;
            }
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = wk[ky * 3 + kx];
                    for_each_shift(h, w, ky, kx, |orow, srow, x0, x1, s0| {
                        let dst = &mut o[orow * w + x0..orow * w + x1];
                        let s = &src[srow * w + s0..srow * w + s0 + (x1 - x0)];
                        dst.iter_mut().zip(s).for_each(|(a, b)| *a += wv * b);
                    });
                }
            }
        }
    }
}

/// Visit the overlapping row segments of a 3x3 tap `(ky, kx)` with zero
/// padding: output row, source row, output column range, source column start.
#[inline]
fn for_each_shift(h: usize, w: usize, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let (y0, y1) = if ky == 0 { (1, h) } else if ky == 1 { (0, h) } else { (0, h - 1) };
    let (x0, x1, s0) = match kx {
        0 => (1, w, 0),
        1 => (0, w, 0),
        _ => (0, w - 1, 1),
    };
    if x1 <= x0 {
        return;
    }
    for y in y0..y1 {
        f(y, y + ky - 1, x0, x1, s0);
    }
}

/// Accumulate weight, bias and input gradients of one convolution.
fn conv_backward(
    p: &[f64],
    c: Conv,
    inp: &[f64],
    dout: &[f64],
    h: usize,
    w: usize,
    grad: &mut [f64],
    mut din: Option<&mut [f64]>,
) {
    let hw = h * w;
    let kk = c.k * c.k;
    for co in 0..c.cout {
        let g = &dout[co * hw..(co + 1) * hw];
        grad[c.b + co] += g.iter().sum::<f64>();
        for ci in 0..c.cin {
            let src = &inp[ci * hw..(ci + 1) * hw];
            let widx = c.w + (co * c.cin + ci) * kk;
            if c.k == 1 {
                grad[widx] += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                if let Some(d) = din.as_deref_mut() {
                    let wv = p[widx];
                    d[ci * hw..(ci + 1) * hw].iter_mut().zip(g).for_each(|(a, b)| *a += wv * b);
                }
                continue;
            }
            for ky in 0..3 {
                for kx in 0..3 {
                    let mut acc = 0.0;
                    let wv = p[widx + ky * 3 + kx];
                    for_each_shift(h, w, ky, kx, |orow, srow, x0, x1, s0| {
                        let go = &g[orow * w + x0..orow * w + x1];
                        let s = &src[srow * w + s0..srow * w + s0 + (x1 - x0)];
                        acc += go.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                    });
                    grad[widx + ky * 3 + kx] += acc;
                    if let Some(d) = din.as_deref_mut() {
                        let dch = &mut d[ci * hw..(ci + 1) * hw];
                        for_each_shift(h, w, ky, kx, |orow, srow, x0, x1, s0| {
                            let go = &g[orow * w + x0..orow * w + x1];
                            let ds = &mut dch[srow * w + s0..srow * w + s0 + (x1 - x0)];
                            ds.iter_mut().zip(go).for_each(|(a, b)| *a += wv * b);
                        });
                    }
                }
            }
        }
    }
}

fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn avg_pool(inp: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![0.0; c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                let s = &inp[ch * h * w..];
                out[(ch * h2 + y) * w2 + x] =
                    0.25 * (s[2 * y * w + 2 * x] + s[2 * y * w + 2 * x + 1] + s[(2 * y + 1) * w + 2 * x] + s[(2 * y + 1) * w + 2 * x + 1]);
            }
        }
    }
    out
}

fn avg_pool_backward(dout: &[f64], c: usize, h: usize, w: usize, din: &mut [f64]) {
    let (h2, w2) = (h / 2, w / 2);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                din[(ch * h + y) * w + x] += 0.25 * dout[(ch * h2 + y / 2) * w2 + x / 2];
            }
        }
    }
}

/// Nearest-neighbour 2x upsampling of `c` channels of size `h x w`.
fn upsample(inp: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                out[(ch * h2 + y) * w2 + x] = inp[(ch * h + y / 2) * w + x / 2];
            }
        }
    }
    out
}

fn upsample_backward(dout: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut din = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                din[(ch * h + y / 2) * w + x / 2] += dout[(ch * h2 + y) * w2 + x];
            }
        }
    }
    din
}

fn magnitude(frame: &[f64], hw: usize) -> Vec<f64> {
    (0..hw).map(|i| frame[i].hypot(frame[hw + i])).collect()
}

/// Options of a forward pass that differ between training and inference.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardMode {
    /// Seed for the dropout masks; `None` disables dropout.
    pub dropout_seed: Option<u64>,
}

fn forward_frame(params: &ReconParams, input: &ReconInput, t: usize, mode: ForwardMode) -> (Vec<f64>, FrameCache) {
    let cfg = &params.config;
    let p = &params.values;
    let convs = params.convs();
    let (h0, w0) = (input.height, input.width);
    let stacked = stack_frame(input, t, cfg.temporal_radius);
    let mut cache = FrameCache {
        magnitude: magnitude(&input.frame(t), h0 * w0),
        ..Default::default()
    };
    let mut li = 0;
    let mut run = |inp: Vec<f64>, h: usize, w: usize, cache: &mut FrameCache| -> Vec<f64> {
        let c = convs[li];
        li += 1;
        let mut out = vec![0.0; c.cout * h * w];
        conv_forward(p, c, &inp, h, w, &mut out);
        relu_in_place(&mut out);
        cache.inputs.push(inp);
        cache.acts.push(out.clone());
        out
    };
    let mut skips = Vec::with_capacity(cfg.scales);
    let (mut h, mut w) = (h0, w0);
    let mut x = stacked.clone();
    for l in 0..cfg.scales {
        if l > 0 {
            x = avg_pool(&x, cfg.channels(l - 1), h, w);
            h /= 2;
            w /= 2;
        }
        let a = run(x, h, w, &mut cache);
        x = run(a, h, w, &mut cache);
        skips.push(x.clone());
    }
    if let (Some(seed), true) = (mode.dropout_seed, cfg.dropout > 0.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let keep = 1.0 - cfg.dropout;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        x.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        cache.dropout_mask = Some(mask);
    }
    for l in (0..cfg.scales - 1).rev() {
        let up = upsample(&x, cfg.channels(l + 1), h, w);
        h *= 2;
        w *= 2;
        let mut cat = up;
        cat.extend_from_slice(&skips[l]);
        let a = run(cat, h, w, &mut cache);
        x = run(a, h, w, &mut cache);
    }
    let last = convs[li];
    let mut out = vec![0.0; h0 * w0];
    conv_forward(p, last, &x, h0, w0, &mut out);
    let gain = p[params.gain_index()];
    out.iter_mut().zip(&cache.magnitude).for_each(|(o, m)| *o += gain * m);
    cache.inputs.push(x);
    cache.stacked = stacked;
    (out, cache)
}

/// Reconstruct every frame. Returns the output and the cache for
/// [`backward`].
pub fn forward(params: &ReconParams, input: &ReconInput, mode: ForwardMode) -> Result<(ReconOutput, ReconCache)> {
    params.config.check_shape(input.height, input.width)?;
    if input.n_frames == 0 || input.data.len() != input.n_frames * 2 * input.height * input.width {
        return Err(Error::shape(
            format!("{} frames of 2x{}x{}", input.n_frames, input.height, input.width),
            format!("{} values", input.data.len()),
        ));
    }
    let results: Vec<(Vec<f64>, FrameCache)> = (0..input.n_frames)
        .into_par_iter()
        .map(|t| forward_frame(params, input, t, mode))
        .collect();
    let mut data = Vec::with_capacity(input.n_frames * input.height * input.width);
    let mut frames = Vec::with_capacity(input.n_frames);
    for (o, c) in results {
        data.extend(o);
        frames.push(c);
    }
    Ok((
        ReconOutput {
            n_frames: input.n_frames,
            height: input.height,
            width: input.width,
            data,
        },
        ReconCache {
            params_hash: params.hash(),
            n_frames: input.n_frames,
            height: input.height,
            width: input.width,
            frames,
        },
    ))
}

/// Inference-only forward pass.
pub fn predict(params: &ReconParams, input: &ReconInput) -> Result<ReconOutput> {
    forward(params, input, ForwardMode::default()).map(|(o, _)| o)
}

fn backward_frame(params: &ReconParams, cache: &FrameCache, h0: usize, w0: usize, upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let cfg = &params.config;
    let p = &params.values;
    let convs = params.convs();
    let mut grad = vec![0.0; p.len()];
    let gi = params.gain_index();
    grad[gi] = upstream.iter().zip(&cache.magnitude).map(|(g, m)| g * m).sum();
    let gain = p[gi];

    let n3 = convs.len() - 1;
    let mut dx = vec![0.0; cfg.channels(0) * h0 * w0];
    conv_backward(p, convs[n3], &cache.inputs[n3], upstream, h0, w0, &mut grad, Some(&mut dx));

    let mut li = n3;
    // Backward through one conv + ReLU; returns the input gradient.
    let mut back = |dout: Vec<f64>, h: usize, w: usize, grad: &mut Vec<f64>, need_input: bool| -> Vec<f64> {
        li -= 1;
        let c = convs[li];
        let act = &cache.acts[li];
        let masked: Vec<f64> = dout.iter().zip(act).map(|(g, a)| if *a > 0.0 { *g } else { 0.0 }).collect();
        let mut din = vec![0.0; c.cin * h * w];
        conv_backward(p, c, &cache.inputs[li], &masked, h, w, grad, need_input.then_some(din.as_mut_slice()));
        din
    };

    let mut sizes = vec![(h0, w0)];
    for l in 1..cfg.scales {
        let (h, w) = sizes[l - 1];
        sizes.push((h / 2, w / 2));
    }
    let mut dskips: Vec<Vec<f64>> = (0..cfg.scales).map(|l| vec![0.0; cfg.channels(l) * sizes[l].0 * sizes[l].1]).collect();
    for l in 0..cfg.scales - 1 {
        let (h, w) = sizes[l];
        let da = back(dx, h, w, &mut grad, true);
        let dcat = back(da, h, w, &mut grad, true);
        let cu = cfg.channels(l + 1);
        let split = cu * h * w;
        dskips[l].iter_mut().zip(&dcat[split..]).for_each(|(a, b)| *a += b);
        dx = upsample_backward(&dcat[..split], cu, sizes[l + 1].0, sizes[l + 1].1);
    }
    if let Some(mask) = &cache.dropout_mask {
        dx.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
    }
    let mut dcur = dx;
    for l in (0..cfg.scales).rev() {
        let (h, w) = sizes[l];
        dcur.iter_mut().zip(&dskips[l]).for_each(|(a, b)| *a += b);
        let da = back(dcur, h, w, &mut grad, true);
        let din = back(da, h, w, &mut grad, true);
        if l > 0 {
            let mut dprev = vec![0.0; cfg.channels(l - 1) * sizes[l - 1].0 * sizes[l - 1].1];
            avg_pool_backward(&din, cfg.channels(l - 1), sizes[l - 1].0, sizes[l - 1].1, &mut dprev);
            dcur = dprev;
        } else {
            dcur = din;
        }
    }
    // dcur is the gradient of the stacked input; add the residual path.
    let hw = h0 * w0;
    let centre = 2 * cfg.temporal_radius * hw;
    let s = &cache.stacked;
    for i in 0..hw {
        let m = cache.magnitude[i];
        if m > 0.0 {
            let g = upstream[i] * gain / m;
            dcur[centre + i] += g * s[centre + i];
            dcur[centre + hw + i] += g * s[centre + hw + i];
        }
    }
    (grad, dcur)
}

/// Exact gradients of `sum(upstream * output)` with respect to the parameters
/// and the input.
pub fn backward(params: &ReconParams, cache: &ReconCache, upstream: &ReconOutput) -> Result<(Vec<f64>, ReconInput)> {
    if cache.params_hash != params.hash() {
        return Err(Error::StaleCache("parameters changed since the forward pass".into()));
    }
    if upstream.n_frames != cache.n_frames || upstream.height != cache.height || upstream.width != cache.width {
        return Err(Error::shape(
            format!("{}x{}x{}", cache.n_frames, cache.height, cache.width),
            format!("{}x{}x{}", upstream.n_frames, upstream.height, upstream.width),
        ));
    }
    let (h, w) = (cache.height, cache.width);
    let per_frame: Vec<(Vec<f64>, Vec<f64>)> = (0..cache.n_frames)
        .into_par_iter()
        .map(|t| backward_frame(params, &cache.frames[t], h, w, upstream.frame(t)))
        .collect();
    let mut grad = vec![0.0; params.len()];
    let mut gin = ReconInput::zeros(cache.n_frames, h, w);
    let r = params.config.temporal_radius;
    let n = 2 * h * w;
    for (t, (g, dstack)) in per_frame.into_iter().enumerate() {
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        for d in 0..=2 * r {
            let src = (t + d).saturating_sub(r).min(cache.n_frames - 1);
            gin.frame_mut(src).iter_mut().zip(&dstack[d * n..(d + 1) * n]).for_each(|(a, b)| *a += b);
        }
    }
    Ok((grad, gin))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous_and_covering() {
        let p = init_params(&ReconConfig::default(), 1).unwrap();
        let mut next = 0;
        for l in p.layout() {
            assert_eq!(l.offset, next, "{}", l.name);
            next += l.len();
        }
        assert_eq!(next, p.len());
    }

    #[test]
    fn untrained_model_returns_input_magnitude() {
        let cfg = ReconConfig::default();
        let p = init_params(&cfg, 3).unwrap();
        let mut input = ReconInput::zeros(3, 8, 8);
        for (i, v) in input.data.iter_mut().enumerate() {
            *v = ((i * 37 % 11) as f64 - 5.0) / 7.0;
        }
        let out = predict(&p, &input).unwrap();
        for t in 0..3 {
            let f = input.frame(t);
            for i in 0..64 {
                assert_eq!(out.frame(t)[i], f[i].hypot(f[64 + i]));
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let p = init_params(&ReconConfig::default(), 0).unwrap();
        assert!(predict(&p, &ReconInput::zeros(1, 6, 8)).is_err());
        let mut bad = ReconInput::zeros(2, 8, 8);
        bad.data.pop();
        assert!(predict(&p, &bad).is_err());
        assert!(ReconConfig { scales: 0, ..Default::default() }.validate().is_err());
        assert!(ReconConfig { dropout: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn stale_cache_is_refused() {
        let mut p = init_params(&ReconConfig::default(), 0).unwrap();
        let input = ReconInput::zeros(1, 8, 8);
        let (out, cache) = forward(&p, &input, ForwardMode::default()).unwrap();
        p.values[0] += 1.0;
        assert!(matches!(backward(&p, &cache, &out), Err(Error::StaleCache(_))));
    }
}
