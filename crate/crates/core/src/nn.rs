//! Dense 64-bit building blocks shared by the language models, the character
//! feature encoder and the tagger: a row-major [`Matrix`], a [`Linear`] layer,
//! an [`Lstm`] cell with hand-written backpropagation through time, and the
//! [`Parameters`] trait that lets one SGD routine update any of them.
//!
//! Every layer computes in `f64`. Gradients are stored in a value of the same
//! type as the layer (see [`zeros_like`]), so an optimizer step is a zip over
//! [`Parameters::tensors_mut`] and [`Parameters::tensors`].

use rand::Rng;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    /// Entries drawn uniformly from `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `out += self · x`
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(r), x);
        }
    }

    /// `out += selfᵀ · y`
    pub fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, self.row(r), out);
            }
        }
    }

    /// `self += y · xᵀ`
    pub fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, x, self.row_mut(r));
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha · x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln Σ exp(xᵢ)`. Returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Writes `softmax(logits)` into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

/// A model whose trainable state is a fixed, ordered list of matrices.
///
/// The order of [`tensors`](Parameters::tensors) and
/// [`tensors_mut`](Parameters::tensors_mut) must agree; it also defines the
/// layout of [`flatten`](Parameters::flatten).
pub trait Parameters {
    fn tensors(&self) -> Vec<&Matrix>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for t in self.tensors() {
            out.extend_from_slice(t.as_slice());
        }
        out
    }

    /// Overwrites every trainable value from a flat vector laid out as
    /// [`flatten`](Parameters::flatten) produces.
    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// A copy of `p` with every trainable entry set to zero; used as a gradient
/// accumulator.
pub fn zeros_like<P: Parameters + Clone>(p: &P) -> P {
    let mut g = p.clone();
    for t in g.tensors_mut() {
        t.fill(0.0);
    }
    g
}

pub fn global_norm<P: Parameters>(g: &P) -> f64 {
    g.tensors()
        .iter()
        .flat_map(|t| t.as_slice())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `g` so its global L2 norm is at most `max_norm`. Returns the norm
/// before clipping.
pub fn clip_global_norm<P: Parameters>(g: &mut P, max_norm: f64) -> f64 {
    let norm = global_norm(g);
    if norm > max_norm && norm > 0.0 {
        scale(g, max_norm / norm);
    }
    norm
}

pub fn scale<P: Parameters>(g: &mut P, factor: f64) {
    for t in g.tensors_mut() {
        t.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
    }
}

/// `acc += g`
pub fn accumulate<P: Parameters>(acc: &mut P, g: &P) {
    for (a, b) in acc.tensors_mut().into_iter().zip(g.tensors()) {
        axpy(1.0, b.as_slice(), a.as_mut_slice());
    }
}

/// Plain stochastic gradient descent: `p -= lr · g`.
pub fn sgd_step<P: Parameters>(p: &mut P, g: &P, lr: f64) {
    for (a, b) in p.tensors_mut().into_iter().zip(g.tensors()) {
        axpy(-lr, b.as_slice(), a.as_mut_slice());
    }
}

/// Inverted dropout mask: each entry is `0` with probability `p`, otherwise
/// `1 / (1 - p)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Affine map `y = W x + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear {
            weight: Matrix::uniform(output, input, bound, rng),
            bias: Matrix::uniform(output, 1, bound, rng),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Matrix::zeros(output, input),
            bias: Matrix::zeros(output, 1),
        }
    }

    pub fn input_size(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_size(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.as_slice().to_vec();
        self.weight.matvec_acc(x, &mut out);
        out
    }

    /// Accumulates parameter gradients into `grads` and, when `dx` is given,
    /// adds the input gradient to it.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Linear, dx: Option<&mut [f64]>) {
        grads.weight.add_outer(dy, x);
        axpy(1.0, dy, grads.bias.as_mut_slice());
        if let Some(dx) = dx {
            self.weight.matvec_t_acc(dy, dx);
        }
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Hidden and cell vectors of an LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(&self.c).all(|v| v.is_finite())
    }
}

/// Single-layer LSTM. Gate blocks in `w_ih`, `w_hh` and `bias` are ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub w_ih: Matrix,
    pub w_hh: Matrix,
    pub bias: Matrix,
}

/// Activations of one LSTM step kept for backpropagation.
#[derive(Debug, Clone)]
pub struct LstmStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    gates: Vec<f64>,
    pub c: Vec<f64>,
    tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct LstmTrace {
    pub steps: Vec<LstmStep>,
}

impl LstmTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn hidden(&self, t: usize) -> &[f64] {
        &self.steps[t].h
    }

    pub fn final_state(&self) -> Option<LstmState> {
        self.steps.last().map(|s| LstmState {
            h: s.h.clone(),
            c: s.c.clone(),
        })
    }
}

impl Lstm {
    /// Uniform initialization in `±1/sqrt(fan_in)` per matrix.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Lstm {
            w_ih: Matrix::uniform(4 * hidden, input, 1.0 / (input as f64).sqrt(), rng),
            w_hh: Matrix::uniform(4 * hidden, hidden, 1.0 / (hidden as f64).sqrt(), rng),
            bias: Matrix::uniform(4 * hidden, 1, 1.0 / (hidden as f64).sqrt(), rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Lstm {
            w_ih: Matrix::zeros(4 * hidden, input),
            w_hh: Matrix::zeros(4 * hidden, hidden),
            bias: Matrix::zeros(4 * hidden, 1),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
        let hs = self.hidden_size();
        let mut gates = self.bias.as_slice().to_vec();
        self.w_ih.matvec_acc(x, &mut gates);
        self.w_hh.matvec_acc(h_prev, &mut gates);
        for (k, z) in gates.iter_mut().enumerate() {
            *z = if (2 * hs..3 * hs).contains(&k) {
                z.tanh()
            } else {
                sigmoid(*z)
            };
        }
        let mut c = vec![0.0; hs];
        let mut tanh_c = vec![0.0; hs];
        let mut h = vec![0.0; hs];
        for j in 0..hs {
            let (i, f, g, o) = (gates[j], gates[hs + j], gates[2 * hs + j], gates[3 * hs + j]);
            c[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
        LstmStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            c,
            tanh_c,
            h,
        }
    }

    pub fn forward<'a, I>(&self, inputs: I, init: &LstmState) -> LstmTrace
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut steps: Vec<LstmStep> = Vec::new();
        for x in inputs {
            let step = match steps.last() {
                Some(prev) => self.step(x, &prev.h, &prev.c),
                None => self.step(x, &init.h, &init.c),
            };
            steps.push(step);
        }
        LstmTrace { steps }
    }

    /// Backpropagation through time.
    ///
    /// `dh[t]` is the loss gradient arriving at `h_t` from outside the cell.
    /// Parameter gradients are accumulated into `grads`; the returned vectors
    /// are the gradients with respect to each input `x_t`. The initial state is
    /// treated as a constant.
    pub fn backward(&self, trace: &LstmTrace, dh: &[Vec<f64>], grads: &mut Lstm) -> Vec<Vec<f64>> {
        let hs = self.hidden_size();
        let t_len = trace.len();
        debug_assert_eq!(dh.len(), t_len);
        let mut dx_all = vec![vec![0.0; self.input_size()]; t_len];
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        let mut dz = vec![0.0; 4 * hs];
        for t in (0..t_len).rev() {
            let s = &trace.steps[t];
            for j in 0..hs {
                let (i, f, g, o) = (
                    s.gates[j],
                    s.gates[hs + j],
                    s.gates[2 * hs + j],
                    s.gates[3 * hs + j],
                );
                let dh_j = dh[t][j] + dh_next[j];
                let d_o = dh_j * s.tanh_c[j];
                let dc = dc_next[j] + dh_j * o * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
                dz[j] = dc * g * i * (1.0 - i);
                dz[hs + j] = dc * s.c_prev[j] * f * (1.0 - f);
                dz[2 * hs + j] = dc * i * (1.0 - g * g);
                dz[3 * hs + j] = d_o * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            grads.w_ih.add_outer(&dz, &s.x);
            grads.w_hh.add_outer(&dz, &s.h_prev);
            axpy(1.0, &dz, grads.bias.as_mut_slice());
            self.w_ih.matvec_t_acc(&dz, &mut dx_all[t]);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            self.w_hh.matvec_t_acc(&dz, &mut dh_next);
        }
        dx_all
    }
}

impl Parameters for Lstm {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.w_ih, &self.w_hh, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{central_difference, max_relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_sum_exp_is_stable() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[3.0, -1.0, 0.5, 700.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut l = Linear::zeros(2, 2);
        l.weight.fill(3.0);
        l.bias.fill(4.0);
        let before = clip_global_norm(&mut l, 1.0);
        assert!((before - (4.0 * 9.0 + 2.0 * 16.0f64).sqrt()).abs() < 1e-12);
        assert!((global_norm(&l) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lstm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lstm = Lstm::new(3, 4, &mut rng);
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let weights: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let init = LstmState {
            h: vec![0.1, -0.2, 0.3, 0.0],
            c: vec![0.5, 0.1, -0.4, 0.2],
        };
        let loss = |m: &Lstm| -> f64 {
            let trace = m.forward(xs.iter().map(|x| x.as_slice()), &init);
            (0..5).map(|t| dot(trace.hidden(t), &weights[t])).sum()
        };
        let trace = lstm.forward(xs.iter().map(|x| x.as_slice()), &init);
        let mut grads = zeros_like(&lstm);
        lstm.backward(&trace, &weights, &mut grads);
        let flat = lstm.flatten();
        let numeric = central_difference(&flat, 1e-5, |p| {
            let mut m = lstm.clone();
            m.assign_flat(p);
            loss(&m)
        });
        assert!(max_relative_error(&grads.flatten(), &numeric) < 1e-4);
    }
}
