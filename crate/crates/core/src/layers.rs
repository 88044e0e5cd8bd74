//! Inference-only neural layers in 32-bit float.
//!
//! Every temporal layer comes in two forms: a single-frame step that carries
//! explicit state (for streaming) and a whole-sequence form (for offline
//! reference processing). Both are causal; state starts at zero.

use crate::error::{Error, Result};

fn check_len(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::shape(what, expected, actual));
    }
    Ok(())
}

/// Affine map `y = W^T x + b` with `W` stored `in_dim x out_dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Fc {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl Fc {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidConfig("fc dimensions must be positive".into()));
        }
        check_len("fc weight", in_dim * out_dim, weight.len())?;
        check_len("fc bias", out_dim, bias.len())?;
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Self::new(dim, dim, weight, vec![0.0; dim]).unwrap()
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> &[f32] {
        &self.weight
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    #[inline]
    pub fn forward_into(&self, x: &[f32], y: &mut [f32]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(y.len(), self.out_dim);
        y.copy_from_slice(&self.bias);
        for (&xi, row) in x.iter().zip(self.weight.chunks_exact(self.out_dim)) {
            if xi == 0.0 {
                continue;
            }
            for (yj, &w) in y.iter_mut().zip(row) {
                *yj += xi * w;
            }
        }
    }

    pub fn forward(&self, x: &[f32]) -> Result<Vec<f32>> {
        check_len("fc input", self.in_dim, x.len())?;
        let mut y = vec![0.0; self.out_dim];
        self.forward_into(x, &mut y);
        Ok(y)
    }
}

/// Parametric ReLU with one slope per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Prelu {
    slopes: Vec<f32>,
}

impl Prelu {
    pub fn new(slopes: Vec<f32>) -> Self {
        Self { slopes }
    }

    pub fn channels(&self) -> usize {
        self.slopes.len()
    }

    #[inline]
    pub fn apply_in_place(&self, x: &mut [f32]) {
        debug_assert_eq!(x.len(), self.slopes.len());
        for (v, &a) in x.iter_mut().zip(&self.slopes) {
            if *v < 0.0 {
                *v *= a;
            }
        }
    }

    pub fn forward(&self, x: &[f32]) -> Result<Vec<f32>> {
        check_len("prelu input", self.slopes.len(), x.len())?;
        let mut y = x.to_vec();
        self.apply_in_place(&mut y);
        Ok(y)
    }
}

/// Causal depthwise convolution over time. `kernel[c * k + j]` multiplies
/// channel `c` of the input `j` frames in the past (`j = 0` is the current
/// frame).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseConv {
    channels: usize,
    kernel_size: usize,
    kernel: Vec<f32>,
    bias: Vec<f32>,
}

impl DepthwiseConv {
    pub fn new(channels: usize, kernel_size: usize, kernel: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if channels == 0 || kernel_size == 0 {
            return Err(Error::InvalidConfig("conv dimensions must be positive".into()));
        }
        check_len("depthwise kernel", channels * kernel_size, kernel.len())?;
        check_len("depthwise bias", channels, bias.len())?;
        Ok(Self {
            channels,
            kernel_size,
            kernel,
            bias,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn new_history(&self) -> ConvHistory {
        ConvHistory::new(self.channels, self.kernel_size - 1)
    }

    /// One streaming step; `hist` is advanced to include `x`.
    pub fn step_into(&self, x: &[f32], hist: &mut ConvHistory, y: &mut [f32]) {
        debug_assert_eq!(x.len(), self.channels);
        debug_assert_eq!(hist.depth, self.kernel_size - 1);
        let k = self.kernel_size;
        for c in 0..self.channels {
            y[c] = self.bias[c] + self.kernel[c * k] * x[c];
        }
        for lag in 1..k {
            let past = hist.past(lag);
            for c in 0..self.channels {
                y[c] += self.kernel[c * k + lag] * past[c];
            }
        }
        hist.push(x);
    }

    pub fn step(&self, x: &[f32], hist: &mut ConvHistory) -> Result<Vec<f32>> {
        check_len("conv input", self.channels, x.len())?;
        check_len("conv history channels", self.channels, hist.channels)?;
        check_len("conv history depth", self.kernel_size - 1, hist.depth)?;
        let mut y = vec![0.0; self.channels];
        self.step_into(x, hist, &mut y);
        Ok(y)
    }

    /// Whole-sequence causal convolution with zeros before the first frame.
    pub fn forward_sequence(&self, xs: &[Vec<f32>]) -> Vec<Vec<f32>> {
        let k = self.kernel_size;
        (0..xs.len())
            .map(|t| {
                (0..self.channels)
                    .map(|c| {
                        let mut acc = self.bias[c];
                        for lag in 0..k.min(t + 1) {
                            acc += self.kernel[c * k + lag] * xs[t - lag][c];
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    }
}

/// Ring of the last `depth` input frames of a causal convolution,
/// zero-initialized.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvHistory {
    channels: usize,
    depth: usize,
    buf: Vec<f32>,
    // slot holding the most recent frame
    head: usize,
}

impl ConvHistory {
    pub fn new(channels: usize, depth: usize) -> Self {
        Self {
            channels,
            depth,
            buf: vec![0.0; channels * depth],
            head: 0,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Frame from `lag` steps ago, `1 <= lag <= depth`.
    fn past(&self, lag: usize) -> &[f32] {
        let slot = (self.head + self.depth - (lag - 1)) % self.depth;
        &self.buf[slot * self.channels..(slot + 1) * self.channels]
    }

    fn push(&mut self, x: &[f32]) {
        if self.depth == 0 {
            return;
        }
        self.head = (self.head + 1) % self.depth;
        self.buf[self.head * self.channels..(self.head + 1) * self.channels].copy_from_slice(x);
    }

    pub fn reset(&mut self) {
        self.buf.fill(0.0);
        self.head = 0;
    }
}

/// Depthwise conv followed by a 1x1 pointwise FC.
pub fn dsconv_step(
    x: &[f32],
    hist: &mut ConvHistory,
    depthwise: &DepthwiseConv,
    pointwise: &Fc,
) -> Result<Vec<f32>> {
    let mid = depthwise.step(x, hist)?;
    pointwise.forward(&mid)
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Gated recurrent unit. Gate blocks are ordered reset, update, candidate:
///
/// ```text
/// r  = sigmoid(W_r x + b_ir + U_r h + b_hr)
/// z  = sigmoid(W_z x + b_iz + U_z h + b_hz)
/// n  = tanh(W_n x + b_in + r * (U_n h + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
///
/// `weight_ih` is `[3, input, hidden]`, `weight_hh` `[3, hidden, hidden]`,
/// biases `[3, hidden]`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    input: usize,
    hidden: usize,
    weight_ih: Vec<f32>,
    weight_hh: Vec<f32>,
    bias_ih: Vec<f32>,
    bias_hh: Vec<f32>,
}

/// Reusable buffers for [`Gru::step_into`].
#[derive(Debug, Clone, Default)]
pub struct GruScratch {
    gi: Vec<f32>,
    gh: Vec<f32>,
}

pub const GRU_GATES: usize = 3;

impl Gru {
    pub fn new(
        input: usize,
        hidden: usize,
        weight_ih: Vec<f32>,
        weight_hh: Vec<f32>,
        bias_ih: Vec<f32>,
        bias_hh: Vec<f32>,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::InvalidConfig("gru dimensions must be positive".into()));
        }
        check_len("gru weight_ih", GRU_GATES * input * hidden, weight_ih.len())?;
        check_len("gru weight_hh", GRU_GATES * hidden * hidden, weight_hh.len())?;
        check_len("gru bias_ih", GRU_GATES * hidden, bias_ih.len())?;
        check_len("gru bias_hh", GRU_GATES * hidden, bias_hh.len())?;
        Ok(Self {
            input,
            hidden,
            weight_ih,
            weight_hh,
            bias_ih,
            bias_hh,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    fn gate_affine(weight: &[f32], bias: &[f32], x: &[f32], hidden: usize, out: &mut Vec<f32>) {
        out.clear();
        out.extend_from_slice(bias);
        let in_dim = x.len();
        for g in 0..GRU_GATES {
            let acc = &mut out[g * hidden..(g + 1) * hidden];
            let block = &weight[g * in_dim * hidden..(g + 1) * in_dim * hidden];
            for (&xi, row) in x.iter().zip(block.chunks_exact(hidden)) {
                for (a, &w) in acc.iter_mut().zip(row) {
                    *a += xi * w;
                }
            }
        }
    }

    /// Updates `h` in place.
    pub fn step_into(&self, x: &[f32], h: &mut [f32], scratch: &mut GruScratch) {
        let hd = self.hidden;
        Self::gate_affine(&self.weight_ih, &self.bias_ih, x, hd, &mut scratch.gi);
        Self::gate_affine(&self.weight_hh, &self.bias_hh, h, hd, &mut scratch.gh);
        let (gi, gh) = (&scratch.gi, &scratch.gh);
        for j in 0..hd {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[hd + j] + gh[hd + j]);
            let n = (gi[2 * hd + j] + r * gh[2 * hd + j]).tanh();
            h[j] = (1.0 - z) * n + z * h[j];
        }
    }

    /// Checked single step returning the new state (which is also the output).
    pub fn step(&self, x: &[f32], h: &[f32]) -> Result<Vec<f32>> {
        check_len("gru input", self.input, x.len())?;
        check_len("gru state", self.hidden, h.len())?;
        if h.iter().chain(x).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gru input or state".into()));
        }
        let mut next = h.to_vec();
        self.step_into(x, &mut next, &mut GruScratch::default());
        Ok(next)
    }

    /// Runs the whole sequence from a zero state, one gate matrix at a time.
    pub fn forward_sequence(&self, xs: &[Vec<f32>]) -> Vec<Vec<f32>> {
        let hd = self.hidden;
        // Input projections for every frame first, then the recurrence.
        let projected: Vec<Vec<f32>> = xs
            .iter()
            .map(|x| {
                (0..GRU_GATES * hd)
                    .map(|gj| {
                        let (g, j) = (gj / hd, gj % hd);
                        let mut acc = self.bias_ih[gj];
                        for (i, &xi) in x.iter().enumerate() {
                            acc += xi * self.weight_ih[(g * self.input + i) * hd + j];
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        let mut h = vec![0.0f32; hd];
        let mut out = Vec::with_capacity(xs.len());
        for gi in &projected {
            let gh: Vec<f32> = (0..GRU_GATES * hd)
                .map(|gj| {
                    let (g, j) = (gj / hd, gj % hd);
                    let mut acc = self.bias_hh[gj];
                    for (i, &hi) in h.iter().enumerate() {
                        acc += hi * self.weight_hh[(g * hd + i) * hd + j];
                    }
                    acc
                })
                .collect();
            h = (0..hd)
                .map(|j| {
                    let r = sigmoid(gi[j] + gh[j]);
                    let z = sigmoid(gi[hd + j] + gh[hd + j]);
                    let n = (gi[2 * hd + j] + r * gh[2 * hd + j]).tanh();
                    (1.0 - z) * n + z * h[j]
                })
                .collect();
            out.push(h.clone());
        }
        out
    }
}
