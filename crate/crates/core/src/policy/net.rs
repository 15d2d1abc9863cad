//! Flat-parameter MLP with hand-written backpropagation.
//!
//! Every weight lives in one `Vec<f64>`; a [`Layout`] records where each
//! dense block starts. Weights are stored `outputs x inputs`, row-major,
//! immediately followed by the bias.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

/// Network sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Frames per observation stack.
    pub history: usize,
    /// Side of the average-pool grid.
    pub grid: usize,
    pub encoder_hidden: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    pub action_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { history: 2, grid: 8, encoder_hidden: 128, feature_dim: 64, hidden: 128, action_dim: 3 }
    }
}

impl Architecture {
    pub fn cells(&self) -> usize {
        self.grid * self.grid
    }

    /// Encoder input width after the (optional) adapter: three channels per frame.
    pub fn encoder_inputs(&self) -> usize {
        self.history * 3 * self.cells()
    }

    /// Width of the pooled raw input for observations with `planes` channels.
    pub fn raw_inputs(&self, planes: usize) -> usize {
        self.history * planes * self.cells()
    }
}

/// One dense block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
}

impl Dense {
    pub fn len(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.outputs * self.inputs
    }

    pub fn w<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.outputs, self.inputs), &p[self.offset..self.bias_offset()]).expect("layout")
    }

    pub fn b<'a>(&self, p: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&p[self.bias_offset()..self.offset + self.len()])
    }

    fn w_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.outputs, self.inputs), &mut p[self.offset..self.bias_offset()]).expect("layout")
    }

    fn b_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut1<'a, f64> {
        let end = self.offset + self.len();
        ArrayViewMut1::from(&mut p[self.bias_offset()..end])
    }

    /// `x W^T + b` for a batch of rows.
    fn forward(&self, p: &[f64], x: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.dot(&self.w(p).t());
        out += &self.b(p);
        out
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        x: &ArrayView2<f64>,
        dy: &Array2<f64>,
        need_dx: bool,
    ) -> Option<Array2<f64>> {
        self.w_mut(g).scaled_add(1.0, &dy.t().dot(x));
        self.b_mut(g).scaled_add(1.0, &dy.sum_axis(Axis(0)));
        need_dx.then(|| dy.dot(&self.w(p)))
    }
}

/// Offsets of every block, in declared order: adapter (S2 only), two
/// encoder layers, three velocity layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub arch: Architecture,
    pub adapter: Option<Dense>,
    pub enc1: Dense,
    pub enc2: Dense,
    pub vel1: Dense,
    pub vel2: Dense,
    pub vel3: Dense,
    pub len: usize,
}

impl Layout {
    pub fn new(arch: Architecture, with_adapter: bool) -> Self {
        let mut offset = 0;
        let mut dense = |inputs, outputs| {
            let d = Dense { inputs, outputs, offset };
            offset += d.len();
            d
        };
        let adapter = with_adapter.then(|| dense(2, 3));
        let enc1 = dense(arch.encoder_inputs(), arch.encoder_hidden);
        let enc2 = dense(arch.encoder_hidden, arch.feature_dim);
        let vel1 = dense(arch.feature_dim + arch.action_dim + 1, arch.hidden);
        let vel2 = dense(arch.hidden, arch.hidden);
        let vel3 = dense(arch.hidden, arch.action_dim);
        Self { arch, adapter, enc1, enc2, vel1, vel2, vel3, len: offset }
    }

    pub fn blocks(&self) -> Vec<(&'static str, Dense)> {
        let mut out = Vec::new();
        if let Some(a) = self.adapter {
            out.push(("adapter", a));
        }
        out.extend([
            ("enc1", self.enc1),
            ("enc2", self.enc2),
            ("vel1", self.vel1),
            ("vel2", self.vel2),
            ("vel3", self.vel3),
        ]);
        out
    }

    pub fn raw_planes(&self) -> usize {
        if self.adapter.is_some() {
            2
        } else {
            3
        }
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let sig = 1.0 / (1.0 + (-x).exp());
    sig * (1.0 + x * (1.0 - sig))
}

/// Mixes `[frame][plane][cell]` rows of two planes into `[frame][channel][cell]`
/// rows of three channels.
fn apply_adapter(a: &Dense, p: &[f64], raw: &ArrayView2<f64>, arch: &Architecture) -> Array2<f64> {
    let (w, b) = (a.w(p), a.b(p));
    let cells = arch.cells();
    let mut out = Array2::zeros((raw.nrows(), arch.encoder_inputs()));
    for (row, mut o) in raw.outer_iter().zip(out.outer_iter_mut()) {
        for f in 0..arch.history {
            for c in 0..3 {
                for k in 0..cells {
                    let m = row[(f * 2) * cells + k];
                    let d = row[(f * 2 + 1) * cells + k];
                    o[(f * 3 + c) * cells + k] = w[[c, 0]] * m + w[[c, 1]] * d + b[c];
                }
            }
        }
    }
    out
}

fn adapter_backward(a: &Dense, g: &mut [f64], raw: &ArrayView2<f64>, dp: &Array2<f64>, arch: &Architecture) {
    let cells = arch.cells();
    let mut dw = [[0.0; 2]; 3];
    let mut db = [0.0; 3];
    for (row, d) in raw.outer_iter().zip(dp.outer_iter()) {
        for f in 0..arch.history {
            for c in 0..3 {
                for k in 0..cells {
                    let gk = d[(f * 3 + c) * cells + k];
                    dw[c][0] += gk * row[(f * 2) * cells + k];
                    dw[c][1] += gk * row[(f * 2 + 1) * cells + k];
                    db[c] += gk;
                }
            }
        }
    }
    let mut w = a.w_mut(g);
    for c in 0..3 {
        w[[c, 0]] += dw[c][0];
        w[[c, 1]] += dw[c][1];
    }
    let mut b = a.b_mut(g);
    for c in 0..3 {
        b[c] += db[c];
    }
}

pub(crate) struct EncoderCache {
    raw: Array2<f64>,
    input: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

/// Pooled raw rows to features.
pub(crate) fn encode(layout: &Layout, p: &[f64], raw: &ArrayView2<f64>) -> (Array2<f64>, EncoderCache) {
    let input = match &layout.adapter {
        Some(a) => apply_adapter(a, p, raw, &layout.arch),
        None => raw.to_owned(),
    };
    let pre = layout.enc1.forward(p, &input.view());
    let hidden = pre.mapv(silu);
    let feat = layout.enc2.forward(p, &hidden.view());
    (feat, EncoderCache { raw: raw.to_owned(), input, pre, hidden })
}

fn encode_backward(layout: &Layout, p: &[f64], g: &mut [f64], cache: &EncoderCache, dfeat: &Array2<f64>) {
    let dh = layout.enc2.backward(p, g, &cache.hidden.view(), dfeat, true).expect("dx");
    let dpre = dh * cache.pre.mapv(silu_grad);
    let need_dx = layout.adapter.is_some();
    let dinput = layout.enc1.backward(p, g, &cache.input.view(), &dpre, need_dx);
    if let (Some(a), Some(dinput)) = (&layout.adapter, dinput) {
        adapter_backward(a, g, &cache.raw.view(), &dinput, &layout.arch);
    }
}

pub(crate) struct VelocityCache {
    z: Array2<f64>,
    pre1: Array2<f64>,
    h1: Array2<f64>,
    pre2: Array2<f64>,
    h2: Array2<f64>,
}

/// `v(x, s; feat)` for a batch; `x` is `B x action_dim`, `s` has length `B`.
pub(crate) fn velocity(
    layout: &Layout,
    p: &[f64],
    feat: &ArrayView2<f64>,
    x: &ArrayView2<f64>,
    s: &ArrayView1<f64>,
) -> (Array2<f64>, VelocityCache) {
    let (fd, ad) = (layout.arch.feature_dim, layout.arch.action_dim);
    let mut z = Array2::zeros((feat.nrows(), fd + ad + 1));
    z.slice_mut(s![.., ..fd]).assign(feat);
    z.slice_mut(s![.., fd..fd + ad]).assign(x);
    z.column_mut(fd + ad).assign(s);
    let pre1 = layout.vel1.forward(p, &z.view());
    let h1 = pre1.mapv(silu);
    let pre2 = layout.vel2.forward(p, &h1.view());
    let h2 = pre2.mapv(silu);
    let v = layout.vel3.forward(p, &h2.view());
    (v, VelocityCache { z, pre1, h1, pre2, h2 })
}

/// Returns the gradient with respect to the features.
fn velocity_backward(
    layout: &Layout,
    p: &[f64],
    g: &mut [f64],
    cache: &VelocityCache,
    dv: &Array2<f64>,
) -> Array2<f64> {
    let dh2 = layout.vel3.backward(p, g, &cache.h2.view(), dv, true).expect("dx");
    let dpre2 = dh2 * cache.pre2.mapv(silu_grad);
    let dh1 = layout.vel2.backward(p, g, &cache.h1.view(), &dpre2, true).expect("dx");
    let dpre1 = dh1 * cache.pre1.mapv(silu_grad);
    let dz = layout.vel1.backward(p, g, &cache.z.view(), &dpre1, true).expect("dx");
    dz.slice(s![.., ..layout.arch.feature_dim]).to_owned()
}

/// One flow-matching minibatch with its noise drawn up front.
#[derive(Debug, Clone)]
pub struct FlowBatch {
    /// Pooled raw observation stacks, one row per sample.
    pub inputs: Array2<f64>,
    /// Normalized target actions `a`.
    pub actions: Array2<f64>,
    /// Base samples `x_0`.
    pub noise: Array2<f64>,
    /// Flow times `s`.
    pub times: Array1<f64>,
}

impl FlowBatch {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `x_s = (1 - s) x_0 + s a` and the constant target `a - x_0`.
    pub fn path(&self) -> (Array2<f64>, Array2<f64>) {
        let s = self.times.view().insert_axis(Axis(1));
        let xs = &self.noise * &s.mapv(|t| 1.0 - t) + &self.actions * &s;
        let target = &self.actions - &self.noise;
        (xs, target)
    }
}

/// Mean squared velocity error and, optionally, its gradient.
pub(crate) fn loss_and_grad(layout: &Layout, p: &[f64], batch: &FlowBatch, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let (feat, enc_cache) = encode(layout, p, &batch.inputs.view());
    let (xs, target) = batch.path();
    let (v, vel_cache) = velocity(layout, p, &feat.view(), &xs.view(), &batch.times.view());
    let err = v - target;
    let n = batch.len() as f64;
    let loss = err.iter().map(|e| e * e).sum::<f64>() / n;
    if !want_grad {
        return (loss, None);
    }
    let mut g = vec![0.0; layout.len];
    let dv = err * (2.0 / n);
    let dfeat = velocity_backward(layout, p, &mut g, &vel_cache, &dv);
    encode_backward(layout, p, &mut g, &enc_cache, &dfeat);
    (loss, Some(g))
}
