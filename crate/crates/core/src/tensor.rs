//! Dense f32 kernels for the layer types the models use.
//!
//! Layouts follow the common deep-learning convention: a weight matrix is
//! `[out, in]` row-major, recurrent cells stack their gate blocks along the
//! output axis.
//!
//! * GRU: gates ordered `r, z, n`; separate input and hidden biases, because
//!   the hidden bias of the candidate is scaled by the reset gate.
//! * LSTM: gates ordered `i, f, g, o`; one combined bias per gate.
//! * Gated conv: kernel `[C, C, 2]`, tap 0 reads `x[t - dilation]`, tap 1
//!   reads `x[t]`.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("{expected} elements for shape {shape:?}"),
                data.len(),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f32, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = if bound > 0.0 {
            (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
        } else {
            vec![0.0; n]
        };
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn expect_shape(&self, context: &str, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::dim(context, format!("{shape:?}"), format!("{:?}", self.shape)));
        }
        Ok(())
    }
}

/// Lanes of the fixed accumulation order shared by [`dot`] and the
/// distance kernel.
pub const LANES: usize = 64;

#[inline(always)]
fn reduce_lanes(acc: &[f32; LANES]) -> f32 {
    let mut v = *acc;
    let mut width = LANES / 2;
    while width > 0 {
        for k in 0..width {
            v[k] += v[k + width];
        }
        width /= 2;
    }
    v[0]
}

#[inline(always)]
fn lane_sum_generic<F: Fn(f32, f32) -> f32>(a: &[f32], b: &[f32], term: F) -> f32 {
    let mut acc = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] += term(x[k], y[k]);
        }
    }
    let mut tail = 0.0;
    for (&x, &y) in ra.iter().zip(rb) {
        tail += term(x, y);
    }
    reduce_lanes(&acc) + tail
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn lane_sum_avx2<F: Fn(f32, f32) -> f32>(a: &[f32], b: &[f32], term: F) -> f32 {
    lane_sum_generic(a, b, term)
}

/// `Σ term(a[i], b[i])` in a fixed lane order, so every code path returns
/// the same bits.
#[inline]
pub(crate) fn lane_sum<F: Fn(f32, f32) -> f32>(a: &[f32], b: &[f32], term: F) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { lane_sum_avx2(a, b, term) };
    }
    lane_sum_generic(a, b, term)
}

/// Dot product with a fixed 64-lane accumulation order. Products longer
/// than 4096 terms accumulate in f64.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() > 4096 {
        return a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>() as f32;
    }
    lane_sum(a, b, |x, y| x * y)
}

/// `out[r] += W[r, :] · x` for a row-major `[rows, x.len()]` matrix.
#[inline]
pub fn matvec_acc(w: &[f32], x: &[f32], out: &mut [f32]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn check_len(context: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::dim(context, expected, actual));
    }
    Ok(())
}

/// Fully connected layer, `y = W x + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::dim("linear weight rank", 2, weight.rank()));
        }
        let out = weight.shape()[0];
        bias.expect_shape("linear bias", &[out])?;
        Ok(Self { weight, bias })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn random<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f32).sqrt();
        Self {
            weight: Tensor::uniform(&[output, input], bound, rng),
            bias: Tensor::uniform(&[output], bound, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub(crate) fn weight_mut(&mut self) -> &mut Tensor {
        &mut self.weight
    }

    pub(crate) fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, input: &[f32]) -> Result<Vec<f32>> {
        let mut out = vec![0.0; self.output_dim()];
        self.forward_into(input, &mut out)?;
        Ok(out)
    }

    pub fn forward_into(&self, input: &[f32], out: &mut [f32]) -> Result<()> {
        check_len("linear input", self.input_dim(), input.len())?;
        check_len("linear output", self.output_dim(), out.len())?;
        out.copy_from_slice(self.bias.data());
        matvec_acc(self.weight.data(), input, out);
        Ok(())
    }
}

/// Gated recurrent unit cell.
#[derive(Debug, Clone)]
pub struct GruCell {
    weight_ih: Tensor,
    weight_hh: Tensor,
    bias_ih: Tensor,
    bias_hh: Tensor,
    input: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new(weight_ih: Tensor, weight_hh: Tensor, bias_ih: Tensor, bias_hh: Tensor) -> Result<Self> {
        if weight_ih.rank() != 2 || !weight_ih.shape()[0].is_multiple_of(3) {
            return Err(Error::dim(
                "gru weight_ih",
                "[3H, I]",
                format!("{:?}", weight_ih.shape()),
            ));
        }
        let hidden = weight_ih.shape()[0] / 3;
        let input = weight_ih.shape()[1];
        weight_hh.expect_shape("gru weight_hh", &[3 * hidden, hidden])?;
        bias_ih.expect_shape("gru bias_ih", &[3 * hidden])?;
        bias_hh.expect_shape("gru bias_hh", &[3 * hidden])?;
        Ok(Self {
            weight_ih,
            weight_hh,
            bias_ih,
            bias_hh,
            input,
            hidden,
        })
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            weight_ih: Tensor::zeros(&[3 * hidden, input]),
            weight_hh: Tensor::zeros(&[3 * hidden, hidden]),
            bias_ih: Tensor::zeros(&[3 * hidden]),
            bias_hh: Tensor::zeros(&[3 * hidden]),
            input,
            hidden,
        }
    }

    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let b = 1.0 / (hidden as f32).sqrt();
        Self {
            weight_ih: Tensor::uniform(&[3 * hidden, input], b, rng),
            weight_hh: Tensor::uniform(&[3 * hidden, hidden], b, rng),
            bias_ih: Tensor::uniform(&[3 * hidden], b, rng),
            bias_hh: Tensor::uniform(&[3 * hidden], b, rng),
            input,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.weight_ih.len() + self.weight_hh.len() + self.bias_ih.len() + self.bias_hh.len()
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("weight_ih", &self.weight_ih),
            ("weight_hh", &self.weight_hh),
            ("bias_ih", &self.bias_ih),
            ("bias_hh", &self.bias_hh),
        ]
    }

    pub fn step(&self, input: &[f32], hidden: &[f32]) -> Result<Vec<f32>> {
        let mut out = vec![0.0; self.hidden];
        self.step_into(input, hidden, &mut out)?;
        Ok(out)
    }

    /// `r = σ(W_ir x + b_ir + W_hr h + b_hr)`,
    /// `z = σ(W_iz x + b_iz + W_hz h + b_hz)`,
    /// `n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))`,
    /// `h' = (1 − z) ⊙ n + z ⊙ h`.
    pub fn step_into(&self, input: &[f32], hidden: &[f32], out: &mut [f32]) -> Result<()> {
        check_len("gru input", self.input, input.len())?;
        check_len("gru hidden", self.hidden, hidden.len())?;
        check_len("gru output", self.hidden, out.len())?;
        let h = self.hidden;
        let mut gi = self.bias_ih.data().to_vec();
        let mut gh = self.bias_hh.data().to_vec();
        matvec_acc(self.weight_ih.data(), input, &mut gi);
        matvec_acc(self.weight_hh.data(), hidden, &mut gh);
        for j in 0..h {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[h + j] + gh[h + j]);
            let n = (gi[2 * h + j] + r * gh[2 * h + j]).tanh();
            out[j] = (1.0 - z) * n + z * hidden[j];
        }
        Ok(())
    }
}

/// Long short-term memory cell.
#[derive(Debug, Clone)]
pub struct LstmCell {
    weight_ih: Tensor,
    weight_hh: Tensor,
    bias: Tensor,
    input: usize,
    hidden: usize,
}

impl LstmCell {
    pub fn new(weight_ih: Tensor, weight_hh: Tensor, bias: Tensor) -> Result<Self> {
        if weight_ih.rank() != 2 || !weight_ih.shape()[0].is_multiple_of(4) {
            return Err(Error::dim(
                "lstm weight_ih",
                "[4H, I]",
                format!("{:?}", weight_ih.shape()),
            ));
        }
        let hidden = weight_ih.shape()[0] / 4;
        let input = weight_ih.shape()[1];
        weight_hh.expect_shape("lstm weight_hh", &[4 * hidden, hidden])?;
        bias.expect_shape("lstm bias", &[4 * hidden])?;
        Ok(Self {
            weight_ih,
            weight_hh,
            bias,
            input,
            hidden,
        })
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            weight_ih: Tensor::zeros(&[4 * hidden, input]),
            weight_hh: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
            input,
            hidden,
        }
    }

    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let b = 1.0 / (hidden as f32).sqrt();
        Self {
            weight_ih: Tensor::uniform(&[4 * hidden, input], b, rng),
            weight_hh: Tensor::uniform(&[4 * hidden, hidden], b, rng),
            bias: Tensor::uniform(&[4 * hidden], b, rng),
            input,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.weight_ih.len() + self.weight_hh.len() + self.bias.len()
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 3] {
        [
            ("weight_ih", &self.weight_ih),
            ("weight_hh", &self.weight_hh),
            ("bias", &self.bias),
        ]
    }

    /// Returns `(h', c')` with `c' = f ⊙ c + i ⊙ g`, `h' = o ⊙ tanh(c')`.
    pub fn step(&self, input: &[f32], hidden: &[f32], cell: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
        let mut h_out = vec![0.0; self.hidden];
        let mut c_out = vec![0.0; self.hidden];
        self.step_into(input, hidden, cell, &mut h_out, &mut c_out)?;
        Ok((h_out, c_out))
    }

    pub fn step_into(
        &self,
        input: &[f32],
        hidden: &[f32],
        cell: &[f32],
        h_out: &mut [f32],
        c_out: &mut [f32],
    ) -> Result<()> {
        check_len("lstm input", self.input, input.len())?;
        check_len("lstm hidden", self.hidden, hidden.len())?;
        check_len("lstm cell", self.hidden, cell.len())?;
        check_len("lstm hidden output", self.hidden, h_out.len())?;
        check_len("lstm cell output", self.hidden, c_out.len())?;
        let h = self.hidden;
        let mut g = self.bias.data().to_vec();
        matvec_acc(self.weight_ih.data(), input, &mut g);
        matvec_acc(self.weight_hh.data(), hidden, &mut g);
        for j in 0..h {
            let i = sigmoid(g[j]);
            let f = sigmoid(g[h + j]);
            let cand = g[2 * h + j].tanh();
            let o = sigmoid(g[3 * h + j]);
            let c = f * cell[j] + i * cand;
            c_out[j] = c;
            h_out[j] = o * c.tanh();
        }
        Ok(())
    }
}

/// Fixed-capacity ring of equal-width vectors; `lag(0)` is the newest.
#[derive(Debug, Clone)]
pub struct History {
    dim: usize,
    capacity: usize,
    data: Vec<f32>,
    // slot the next push writes to
    head: usize,
    len: usize,
}

impl History {
    pub fn new(dim: usize, capacity: usize) -> Self {
        assert!(capacity > 0, "history capacity must be positive");
        Self {
            dim,
            capacity,
            data: vec![0.0; dim * capacity],
            head: 0,
            len: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of stored vectors, at most `capacity`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, v: &[f32]) {
        assert_eq!(v.len(), self.dim, "history width");
        let start = self.head * self.dim;
        self.data[start..start + self.dim].copy_from_slice(v);
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    /// The vector pushed `k` steps before the newest, or `None` when it
    /// predates the stream or has been evicted.
    pub fn lag(&self, k: usize) -> Option<&[f32]> {
        if k >= self.len {
            return None;
        }
        let slot = (self.head + self.capacity - 1 - k) % self.capacity;
        Some(&self.data[slot * self.dim..(slot + 1) * self.dim])
    }

    /// Stored vectors from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &[f32]> + '_ {
        (0..self.len).rev().filter_map(move |k| self.lag(k))
    }

    pub fn clear(&mut self) {
        self.head = 0;
        self.len = 0;
        self.data.fill(0.0);
    }
}

/// One gated dilated causal convolution layer with kernel width 2 and a
/// per-layer projection of the condition vector.
#[derive(Debug, Clone)]
pub struct GatedConvLayer {
    channels: usize,
    skip_channels: usize,
    cond_dim: usize,
    // [C, C] blocks, split from the [C, C, 2] kernels
    filter_prev: Vec<f32>,
    filter_cur: Vec<f32>,
    gate_prev: Vec<f32>,
    gate_cur: Vec<f32>,
    filter_bias: Vec<f32>,
    gate_bias: Vec<f32>,
    cond_filter: Tensor,
    cond_gate: Tensor,
    residual: Linear,
    skip: Linear,
}

/// Raw tensors of a [`GatedConvLayer`], in file layout.
#[derive(Debug, Clone)]
pub struct GatedConvWeights {
    /// `[C, C, 2]`
    pub filter_weight: Tensor,
    /// `[C]`
    pub filter_bias: Tensor,
    /// `[C, C, 2]`
    pub gate_weight: Tensor,
    /// `[C]`
    pub gate_bias: Tensor,
    /// `[C, cond]`
    pub cond_filter: Tensor,
    /// `[C, cond]`
    pub cond_gate: Tensor,
    /// `[C, C]`, `[C]`
    pub residual: Linear,
    /// `[S, C]`, `[S]`
    pub skip: Linear,
}

fn split_taps(kernel: &Tensor, c: usize) -> (Vec<f32>, Vec<f32>) {
    let mut prev = vec![0.0; c * c];
    let mut cur = vec![0.0; c * c];
    for o in 0..c {
        for i in 0..c {
            prev[o * c + i] = kernel.data()[(o * c + i) * 2];
            cur[o * c + i] = kernel.data()[(o * c + i) * 2 + 1];
        }
    }
    (prev, cur)
}

fn join_taps(prev: &[f32], cur: &[f32], c: usize) -> Tensor {
    let mut data = vec![0.0; c * c * 2];
    for k in 0..c * c {
        data[2 * k] = prev[k];
        data[2 * k + 1] = cur[k];
    }
    Tensor::new(vec![c, c, 2], data).expect("shape")
}

impl GatedConvLayer {
    pub fn new(w: GatedConvWeights) -> Result<Self> {
        if w.filter_weight.rank() != 3 {
            return Err(Error::dim("conv filter rank", 3, w.filter_weight.rank()));
        }
        let c = w.filter_weight.shape()[0];
        w.filter_weight.expect_shape("conv filter", &[c, c, 2])?;
        w.gate_weight.expect_shape("conv gate", &[c, c, 2])?;
        w.filter_bias.expect_shape("conv filter bias", &[c])?;
        w.gate_bias.expect_shape("conv gate bias", &[c])?;
        if w.cond_filter.rank() != 2 || w.cond_filter.shape()[0] != c {
            return Err(Error::dim(
                "conv cond filter",
                format!("[{c}, cond]"),
                format!("{:?}", w.cond_filter.shape()),
            ));
        }
        let cond_dim = w.cond_filter.shape()[1];
        w.cond_gate.expect_shape("conv cond gate", &[c, cond_dim])?;
        if w.residual.input_dim() != c || w.residual.output_dim() != c {
            return Err(Error::dim(
                "conv residual",
                format!("[{c}, {c}]"),
                format!("[{}, {}]", w.residual.output_dim(), w.residual.input_dim()),
            ));
        }
        if w.skip.input_dim() != c {
            return Err(Error::dim("conv skip input", c, w.skip.input_dim()));
        }
        let (filter_prev, filter_cur) = split_taps(&w.filter_weight, c);
        let (gate_prev, gate_cur) = split_taps(&w.gate_weight, c);
        Ok(Self {
            channels: c,
            skip_channels: w.skip.output_dim(),
            cond_dim,
            filter_prev,
            filter_cur,
            gate_prev,
            gate_cur,
            filter_bias: w.filter_bias.into_data(),
            gate_bias: w.gate_bias.into_data(),
            cond_filter: w.cond_filter,
            cond_gate: w.cond_gate,
            residual: w.residual,
            skip: w.skip,
        })
    }

    pub fn zeros(channels: usize, skip_channels: usize, cond_dim: usize) -> Self {
        Self::new(GatedConvWeights {
            filter_weight: Tensor::zeros(&[channels, channels, 2]),
            filter_bias: Tensor::zeros(&[channels]),
            gate_weight: Tensor::zeros(&[channels, channels, 2]),
            gate_bias: Tensor::zeros(&[channels]),
            cond_filter: Tensor::zeros(&[channels, cond_dim]),
            cond_gate: Tensor::zeros(&[channels, cond_dim]),
            residual: Linear::zeros(channels, channels),
            skip: Linear::zeros(channels, skip_channels),
        })
        .expect("consistent shapes")
    }

    pub fn random<R: Rng + ?Sized>(channels: usize, skip_channels: usize, cond_dim: usize, rng: &mut R) -> Self {
        let bc = 1.0 / ((2 * channels) as f32).sqrt();
        let bcond = 1.0 / (cond_dim as f32).sqrt();
        Self::new(GatedConvWeights {
            filter_weight: Tensor::uniform(&[channels, channels, 2], bc, rng),
            filter_bias: Tensor::uniform(&[channels], bc, rng),
            gate_weight: Tensor::uniform(&[channels, channels, 2], bc, rng),
            gate_bias: Tensor::uniform(&[channels], bc, rng),
            cond_filter: Tensor::uniform(&[channels, cond_dim], bcond, rng),
            cond_gate: Tensor::uniform(&[channels, cond_dim], bcond, rng),
            residual: Linear::random(channels, channels, rng),
            skip: Linear::random(channels, skip_channels, rng),
        })
        .expect("consistent shapes")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn skip_channels(&self) -> usize {
        self.skip_channels
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn param_count(&self) -> usize {
        4 * self.channels * self.channels
            + 2 * self.channels
            + self.cond_filter.len()
            + self.cond_gate.len()
            + self.residual.param_count()
            + self.skip.param_count()
    }

    /// Tensors in file layout, with their name suffixes.
    pub fn named_tensors(&self) -> Vec<(&'static str, Tensor)> {
        let c = self.channels;
        vec![
            ("filter.weight", join_taps(&self.filter_prev, &self.filter_cur, c)),
            ("filter.bias", Tensor::from_vec(self.filter_bias.clone())),
            ("gate.weight", join_taps(&self.gate_prev, &self.gate_cur, c)),
            ("gate.bias", Tensor::from_vec(self.gate_bias.clone())),
            ("cond_filter.weight", self.cond_filter.clone()),
            ("cond_gate.weight", self.cond_gate.clone()),
            ("residual.weight", self.residual.weight().clone()),
            ("residual.bias", self.residual.bias().clone()),
            ("skip.weight", self.skip.weight().clone()),
            ("skip.bias", self.skip.bias().clone()),
        ]
    }

    /// Evaluates the layer at the newest position of `history`:
    ///
    /// `z = tanh(Wf ∗ x + Vf c) ⊙ σ(Wg ∗ x + Vg c)`,
    /// `residual = x[t] + R z`, `skip = S z`,
    ///
    /// where `∗` reads `x[t]` and `x[t − dilation]` (zero before the stream
    /// start).
    pub fn step(&self, history: &History, condition: &[f32], dilation: usize) -> Result<(Vec<f32>, Vec<f32>)> {
        if dilation < 1 {
            return Err(Error::Domain("dilation must be at least 1".into()));
        }
        check_len("conv condition", self.cond_dim, condition.len())?;
        check_len("conv history width", self.channels, history.dim())?;
        let current = history
            .lag(0)
            .ok_or_else(|| Error::Domain("conv history is empty".into()))?;
        let delayed = history.lag(dilation);
        let mut residual = vec![0.0; self.channels];
        let mut skip = vec![0.0; self.skip_channels];
        self.step_raw(current, delayed, condition, &mut residual, &mut skip);
        Ok((residual, skip))
    }

    /// Unchecked core of [`GatedConvLayer::step`]; `skip` is accumulated into.
    pub(crate) fn step_raw(
        &self,
        current: &[f32],
        delayed: Option<&[f32]>,
        condition: &[f32],
        residual: &mut [f32],
        skip: &mut [f32],
    ) {
        let c = self.channels;
        let mut f = self.filter_bias.clone();
        let mut g = self.gate_bias.clone();
        matvec_acc(&self.filter_cur, current, &mut f);
        matvec_acc(&self.gate_cur, current, &mut g);
        if let Some(prev) = delayed {
            matvec_acc(&self.filter_prev, prev, &mut f);
            matvec_acc(&self.gate_prev, prev, &mut g);
        }
        matvec_acc(self.cond_filter.data(), condition, &mut f);
        matvec_acc(self.cond_gate.data(), condition, &mut g);
        let z: Vec<f32> = f.iter().zip(&g).map(|(&a, &b)| a.tanh() * sigmoid(b)).collect();

        residual[..c].copy_from_slice(self.residual.bias().data());
        matvec_acc(self.residual.weight().data(), &z, residual);
        for (r, &x) in residual.iter_mut().zip(current) {
            *r += x;
        }
        let mut s = self.skip.bias().data().to_vec();
        matvec_acc(self.skip.weight().data(), &z, &mut s);
        for (acc, v) in skip.iter_mut().zip(&s) {
            *acc += v;
        }
    }
}
