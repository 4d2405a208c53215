//! Dense-network micro-framework.
//!
//! Networks are stacks of [`DenseLayer`]s. Every hidden layer computes
//! `linear -> layer norm -> activation`; the final layer is linear only unless
//! the network is built as a feature extractor ([`MlpParams::activate_output`]),
//! which is how the actor trunk is represented. Backward passes replay an
//! explicit [`ForwardCache`] instead of recording a tape.
//!
//! All math is `f64`. Batches are row-major [`Matrix`] values, one sample per
//! row.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    /// Stacks equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn hconcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch { expected: self.rows, got: other.rows });
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix { rows: self.rows, cols, data })
    }

    /// Copy of columns `start..end`.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Matrix { rows: self.rows, cols, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    CRelu,
    Identity,
}

impl Activation {
    fn width(self, d: usize) -> usize {
        match self {
            Activation::CRelu => 2 * d,
            Activation::Identity => d,
        }
    }
}

/// `[max(x, 0), max(-x, 0)]`.
pub fn crelu(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * x.len());
    out.extend(x.iter().map(|&v| v.max(0.0)));
    out.extend(x.iter().map(|&v| (-v).max(0.0)));
    out
}

/// Layer normalization with population variance.
pub fn layer_norm(x: &[f64], gain: &[f64], shift: &[f64], eps: f64) -> Vec<f64> {
    let (mean, inv_std) = moments(x, eps);
    x.iter()
        .zip(gain.iter().zip(shift))
        .map(|(&v, (&g, &b))| g * (v - mean) * inv_std + b)
        .collect()
}

fn moments(x: &[f64], eps: f64) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

/// One dense layer with its layer-norm affine parameters.
///
/// `weight` is row-major `out_dim x in_dim`. The layer-norm vectors exist on
/// every layer; on a linear-only output layer they are inert.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub ln_gain: Vec<f64>,
    pub ln_shift: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            ln_gain: vec![0.0; out_dim],
            ln_shift: vec![0.0; out_dim],
        }
    }

    /// Uniform `±sqrt(1/fan_in)` weights and biases, unit gain, zero shift.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = (1.0 / in_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect(),
            bias: (0..out_dim).map(|_| dist.sample(rng)).collect(),
            ln_gain: vec![1.0; out_dim],
            ln_shift: vec![0.0; out_dim],
        }
    }

    fn tensors(&self) -> [&Vec<f64>; 4] {
        [&self.weight, &self.bias, &self.ln_gain, &self.ln_shift]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.weight, &mut self.bias, &mut self.ln_gain, &mut self.ln_shift]
    }
}

/// Layered dense network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
    /// Apply `layer norm -> activation` after the last layer as well.
    pub activate_output: bool,
}

/// Intermediates of one layer, kept for the backward pass.
#[derive(Debug, Clone)]
struct LayerCache {
    input: Matrix,
    /// Normalized pre-activations; empty for linear-only layers.
    xhat: Matrix,
    inv_std: Vec<f64>,
    /// Layer-norm output, the activation input.
    normed: Matrix,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input.rows)
    }
}

impl MlpParams {
    /// Network with layer widths `sizes[0] -> sizes[1] -> ... -> sizes[L]`.
    ///
    /// Layer `l` consumes the activated output of layer `l-1`, so with CReLU
    /// its fan-in is twice the preceding width.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        activation: Activation,
        activate_output: bool,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "network needs an input and an output width");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        let mut fan_in = sizes[0];
        for &out in &sizes[1..] {
            layers.push(DenseLayer::init(fan_in, out, rng));
            fan_in = activation.width(out);
        }
        Self { layers, activation, activate_output }
    }

    /// Single linear layer with zero weights and bias `value`: outputs
    /// `value` for every input.
    pub fn constant(in_dim: usize, value: f64) -> Self {
        let mut layer = DenseLayer::zeros(in_dim, 1);
        layer.bias[0] = value;
        layer.ln_gain[0] = 1.0;
        Self { layers: vec![layer], activation: Activation::CRelu, activate_output: false }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| DenseLayer::zeros(l.in_dim, l.out_dim)).collect(),
            activation: self.activation,
            activate_output: self.activate_output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        let last = self.layers.last().expect("non-empty network").out_dim;
        if self.activate_output {
            self.activation.width(last)
        } else {
            last
        }
    }

    fn is_hidden(&self, idx: usize) -> bool {
        idx + 1 < self.layers.len() || self.activate_output
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.tensors().iter().map(|t| t.len()).sum::<usize>()).sum()
    }

    /// Parameter tensors in a fixed order (per layer: weight, bias, gain, shift).
    pub fn tensors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.layers.iter().flat_map(|l| l.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut())
    }

    /// All parameters flattened in [`tensors`](Self::tensors) order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch { expected: self.num_params(), got: flat.len() });
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let len = t.len();
            t.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Elementwise `self += other`. Shapes must match.
    pub fn accumulate(&mut self, other: &MlpParams) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }

    fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
    }

    /// Batched forward pass; one sample per input row.
    pub fn forward_batch(&self, input: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if input.cols != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: input.cols });
        }
        let n = input.rows;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut z = Matrix::zeros(n, layer.out_dim);
            for i in 0..n {
                z.row_mut(i).copy_from_slice(&layer.bias);
            }
            // z += x * W^T
            gemm(
                Operand { data: &x.data, rows: n, cols: layer.in_dim, transposed: false },
                Operand { data: &layer.weight, rows: layer.in_dim, cols: layer.out_dim, transposed: true },
                1.0,
                &mut z.data,
            );
            if !self.is_hidden(idx) {
                caches.push(LayerCache {
                    input: x,
                    xhat: Matrix::zeros(0, 0),
                    inv_std: Vec::new(),
                    normed: Matrix::zeros(0, 0),
                });
                x = z;
                continue;
            }
            let d = layer.out_dim;
            let mut xhat = Matrix::zeros(n, d);
            let mut normed = Matrix::zeros(n, d);
            let mut inv_std = Vec::with_capacity(n);
            for i in 0..n {
                let (mean, is) = moments(z.row(i), LAYER_NORM_EPS);
                inv_std.push(is);
                let zi = z.row(i);
                let hi = xhat.row_mut(i);
                for j in 0..d {
                    hi[j] = (zi[j] - mean) * is;
                }
                let yi = normed.row_mut(i);
                let hi = xhat.row(i);
                for j in 0..d {
                    yi[j] = layer.ln_gain[j] * hi[j] + layer.ln_shift[j];
                }
            }
            let out = match self.activation {
                Activation::Identity => normed.clone(),
                Activation::CRelu => {
                    let mut out = Matrix::zeros(n, 2 * d);
                    for i in 0..n {
                        let yi = normed.row(i);
                        let oi = out.row_mut(i);
                        for j in 0..d {
                            oi[j] = yi[j].max(0.0);
                            oi[d + j] = (-yi[j]).max(0.0);
                        }
                    }
                    out
                }
            };
            caches.push(LayerCache { input: x, xhat, inv_std, normed });
            x = out;
        }
        Ok((x, ForwardCache { layers: caches }))
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        self.forward_batch(input).map(|(out, _)| out)
    }

    /// Reverse-mode gradients for a batch. Parameter gradients are summed over
    /// rows; the input gradient is per row.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        grad_output: &Matrix,
    ) -> Result<(MlpParams, Matrix)> {
        if cache.layers.len() != self.layers.len()
            || cache.layers.iter().zip(&self.layers).any(|(c, l)| c.input.cols != l.in_dim)
        {
            return Err(Error::StaleCache);
        }
        let n = cache.batch_size();
        if grad_output.rows != n || grad_output.cols != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: n * self.output_dim(),
                got: grad_output.rows * grad_output.cols,
            });
        }
        let mut grads = self.zeros_like();
        let mut upstream = grad_output.clone();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let lc = &cache.layers[idx];
            let g = &mut grads.layers[idx];
            let d = layer.out_dim;
            // upstream holds dL/d(layer output); turn it into dL/dz.
            let dz = if self.is_hidden(idx) {
                let mut dy = Matrix::zeros(n, d);
                match self.activation {
                    Activation::Identity => dy.data.copy_from_slice(&upstream.data),
                    Activation::CRelu => {
                        for i in 0..n {
                            let yi = lc.normed.row(i);
                            let ui = upstream.row(i);
                            let di = dy.row_mut(i);
                            for j in 0..d {
                                di[j] = if yi[j] > 0.0 {
                                    ui[j]
                                } else if yi[j] < 0.0 {
                                    -ui[d + j]
                                } else {
                                    0.0
                                };
                            }
                        }
                    }
                }
                let mut dz = Matrix::zeros(n, d);
                let nf = d as f64;
                let mut dxhat = vec![0.0; d];
                for i in 0..n {
                    let hi = lc.xhat.row(i);
                    let di = dy.row(i);
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..d {
                        g.ln_gain[j] += di[j] * hi[j];
                        g.ln_shift[j] += di[j];
                        dxhat[j] = di[j] * layer.ln_gain[j];
                        sum_dxhat += dxhat[j];
                        sum_dxhat_xhat += dxhat[j] * hi[j];
                    }
                    let scale = lc.inv_std[i] / nf;
                    let zi = dz.row_mut(i);
                    for j in 0..d {
                        zi[j] = scale * (nf * dxhat[j] - sum_dxhat - hi[j] * sum_dxhat_xhat);
                    }
                }
                dz
            } else {
                upstream
            };
            for i in 0..n {
                for (b, &dzo) in g.bias.iter_mut().zip(dz.row(i)) {
                    *b += dzo;
                }
            }
            // dW += dz^T * x, dx = dz * W
            gemm(
                Operand { data: &dz.data, rows: d, cols: n, transposed: true },
                Operand { data: &lc.input.data, rows: n, cols: layer.in_dim, transposed: false },
                1.0,
                &mut g.weight,
            );
            let mut dx = Matrix::zeros(n, layer.in_dim);
            gemm(
                Operand { data: &dz.data, rows: n, cols: d, transposed: false },
                Operand { data: &layer.weight, rows: d, cols: layer.in_dim, transposed: false },
                0.0,
                &mut dx.data,
            );
            upstream = dx;
        }
        Ok((grads, upstream))
    }
}

/// Row-major operand of a matrix product, read as its transpose when
/// `transposed` is set. `rows` and `cols` describe the operand as used.
struct Operand<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    transposed: bool,
}

impl Operand<'_> {
    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.rows as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = a * b + beta * c` for row-major `c`.
fn gemm(a: Operand, b: Operand, beta: f64, c: &mut [f64]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(b.rows, k);
    assert_eq!(a.data.len(), m * k);
    assert_eq!(b.data.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the asserts above keep every index the kernel touches inside
    // the three slices, and `c` is borrowed mutably so it cannot alias.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Single-sample forward pass.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
    let (out, cache) = params.forward_batch(&x)?;
    Ok((out.data, cache))
}

/// Single-sample backward pass against a cache from [`mlp_forward`].
pub fn mlp_backward(
    params: &MlpParams,
    cache: &ForwardCache,
    grad_output: &[f64],
) -> Result<(MlpParams, Vec<f64>)> {
    let g = Matrix::from_vec(1, grad_output.len(), grad_output.to_vec())?;
    let (grads, dx) = params.backward_batch(cache, &g)?;
    Ok((grads, dx.data))
}

/// Bias-corrected Adam state for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_params(params: &MlpParams, lr: f64) -> Self {
        Self::new(params.num_params(), lr)
    }

    /// One update of a flat parameter slice. Non-finite gradients reject the
    /// step and leave both parameters and state untouched.
    pub fn step_flat(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::DimensionMismatch { expected: self.first_moment.len(), got: grads.len() });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::non_finite("optimizer gradient"));
        }
        self.step_count += 1;
        let (bc1, bc2) = self.bias_corrections();
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            *p -= self.moment_update(i, g, bc1, bc2);
        }
        Ok(())
    }

    fn bias_corrections(&self) -> (f64, f64) {
        let t = self.step_count as i32;
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }

    #[inline]
    fn moment_update(&mut self, i: usize, g: f64, bc1: f64, bc2: f64) -> f64 {
        let m = &mut self.first_moment[i];
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        let v = &mut self.second_moment[i];
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        let m_hat = self.first_moment[i] / bc1;
        let v_hat = self.second_moment[i] / bc2;
        self.lr * m_hat / (v_hat.sqrt() + self.eps)
    }
}

/// Adam step on a network.
pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut AdamState) -> Result<()> {
    if !params.same_shape(grads) || state.first_moment.len() != params.num_params() {
        return Err(Error::DimensionMismatch { expected: params.num_params(), got: grads.num_params() });
    }
    if !grads.is_finite() {
        return Err(Error::non_finite("optimizer gradient"));
    }
    state.step_count += 1;
    let (bc1, bc2) = state.bias_corrections();
    let mut offset = 0;
    for (p, g) in params.tensors_mut().zip(grads.tensors()) {
        for (j, (pj, &gj)) in p.iter_mut().zip(g).enumerate() {
            *pj -= state.moment_update(offset + j, gj, bc1, bc2);
        }
        offset += p.len();
    }
    Ok(())
}

/// `target <- (1 - tau) * target + tau * online`, elementwise.
pub fn polyak_update(target: &mut MlpParams, online: &MlpParams, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("polyak tau {tau} outside [0, 1]")));
    }
    if !target.same_shape(online) {
        return Err(Error::DimensionMismatch { expected: target.num_params(), got: online.num_params() });
    }
    for (t, o) in target.tensors_mut().zip(online.tensors()) {
        for (ti, oi) in t.iter_mut().zip(o) {
            *ti = (1.0 - tau) * *ti + tau * oi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn single_linear(w: f64, b: f64) -> MlpParams {
        MlpParams {
            layers: vec![DenseLayer {
                in_dim: 1,
                out_dim: 1,
                weight: vec![w],
                bias: vec![b],
                ln_gain: vec![1.0],
                ln_shift: vec![0.0],
            }],
            activation: Activation::Identity,
            activate_output: false,
        }
    }

    #[test]
    fn crelu_examples() {
        assert_eq!(crelu(&[1.0, -2.0]), vec![1.0, 0.0, 0.0, 2.0]);
        assert_eq!(crelu(&[0.0, 0.0]), vec![0.0; 4]);
        assert_eq!(crelu(&[3.5]), vec![3.5, 0.0]);
    }

    #[test]
    fn layer_norm_examples() {
        let out = layer_norm(&[4.0, 4.0, 4.0], &[1.0; 3], &[0.0; 3], LAYER_NORM_EPS);
        assert!(out.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(layer_norm(&[1.0, -1.0], &[1.0; 2], &[0.0; 2], 0.0), vec![1.0, -1.0]);
        assert_eq!(layer_norm(&[1.0, -1.0], &[2.0; 2], &[1.0; 2], 0.0), vec![3.0, -1.0]);
    }

    #[test]
    fn affine_forward() {
        let (out, _) = mlp_forward(&single_linear(2.0, 1.0), &[3.0]).unwrap();
        assert_eq!(out, vec![7.0]);
    }

    #[test]
    fn zero_weights_return_bias() {
        let mut net = MlpParams::new(&[3, 4, 2], Activation::CRelu, false, &mut seeded(0));
        for l in &mut net.layers {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
        }
        let bias = net.layers[1].bias.clone();
        for input in [[0.0, 1.0, 2.0], [-5.0, 3.0, 0.5]] {
            let (out, _) = mlp_forward(&net, &input).unwrap();
            assert_eq!(out, bias);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = MlpParams::new(&[3, 4, 1], Activation::CRelu, false, &mut seeded(0));
        assert!(matches!(mlp_forward(&net, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let a = MlpParams::new(&[3, 4, 1], Activation::CRelu, false, &mut seeded(0));
        let b = MlpParams::new(&[2, 4, 1], Activation::CRelu, false, &mut seeded(0));
        let (_, cache) = mlp_forward(&a, &[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(mlp_backward(&b, &cache, &[1.0]), Err(Error::StaleCache)));
    }

    /// Straight-line two-layer forward written without any of the module's
    /// helpers: linear, layer norm, CReLU, linear.
    fn reference_two_layer(net: &MlpParams, x: &[f64]) -> Vec<f64> {
        let l0 = &net.layers[0];
        let mut z = vec![0.0; l0.out_dim];
        for o in 0..l0.out_dim {
            z[o] = l0.bias[o];
            for i in 0..l0.in_dim {
                z[o] += l0.weight[o * l0.in_dim + i] * x[i];
            }
        }
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
        let y: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(j, v)| l0.ln_gain[j] * (v - mean) / (var + LAYER_NORM_EPS).sqrt() + l0.ln_shift[j])
            .collect();
        let mut h: Vec<f64> = y.iter().map(|v| v.max(0.0)).collect();
        h.extend(y.iter().map(|v| (-v).max(0.0)));
        let l1 = &net.layers[1];
        (0..l1.out_dim)
            .map(|o| l1.bias[o] + (0..l1.in_dim).map(|i| l1.weight[o * l1.in_dim + i] * h[i]).sum::<f64>())
            .collect()
    }

    #[test]
    fn two_layer_forward_matches_reference() {
        let mut net = MlpParams::new(&[3, 4, 2], Activation::CRelu, false, &mut seeded(1));
        for l in &mut net.layers {
            l.weight.iter_mut().for_each(|w| *w = 0.1);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let x = [1.0; 3];
        let (out, _) = mlp_forward(&net, &x).unwrap();
        assert_eq!(out, reference_two_layer(&net, &x));

        let net = MlpParams::new(&[3, 5, 2], Activation::CRelu, false, &mut seeded(2));
        let x = [0.3, -1.2, 2.0];
        let (out, _) = mlp_forward(&net, &x).unwrap();
        let reference = reference_two_layer(&net, &x);
        for (a, b) in out.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_bias_gradient_is_grad_output() {
        let net = MlpParams::new(&[3, 2], Activation::CRelu, false, &mut seeded(3));
        let (_, cache) = mlp_forward(&net, &[1.0, 2.0, 3.0]).unwrap();
        let (g, _) = mlp_backward(&net, &cache, &[0.25, -4.0]).unwrap();
        assert_eq!(g.layers[0].bias, vec![0.25, -4.0]);
    }

    #[test]
    fn constant_network_has_zero_gradient() {
        let mut net = MlpParams::new(&[2, 3, 1], Activation::CRelu, false, &mut seeded(4));
        net.layers[1].weight.iter_mut().for_each(|w| *w = 0.0);
        let (_, cache) = mlp_forward(&net, &[0.5, -0.5]).unwrap();
        let (g, dx) = mlp_backward(&net, &cache, &[1.0]).unwrap();
        assert!(dx.iter().all(|v| *v == 0.0));
        for t in g.layers[0].tensors() {
            assert!(t.iter().all(|v| *v == 0.0));
        }
    }

    /// Central finite differences of `loss(net)` over every parameter.
    fn numeric_grad(net: &MlpParams, loss: impl Fn(&MlpParams) -> f64) -> Vec<f64> {
        let h = 1e-5;
        let base = net.to_flat();
        let mut probe = net.clone();
        (0..base.len())
            .map(|i| {
                let mut p = base.clone();
                p[i] = base[i] + h;
                probe.set_flat(&p).unwrap();
                let up = loss(&probe);
                p[i] = base[i] - h;
                probe.set_flat(&p).unwrap();
                let down = loss(&probe);
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
    }

    #[test]
    fn gradient_check_random_networks() {
        use rand::Rng as _;
        let mut rng = seeded(5);
        let mut worst: f64 = 0.0;
        for trial in 0..100 {
            let depth = rng.random_range(1..=3);
            let mut sizes = vec![rng.random_range(1..=4)];
            for _ in 1..depth {
                sizes.push(rng.random_range(2..=8));
            }
            sizes.push(rng.random_range(1..=3));
            let net = MlpParams::new(&sizes, Activation::CRelu, false, &mut rng);
            let n = rng.random_range(1..=4);
            let x = Matrix::from_vec(n, sizes[0], (0..n * sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect())
                .unwrap();
            let out_dim = net.output_dim();
            let weights: Vec<f64> = (0..n * out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            // scalar loss: sum_j w_j * out_j + 0.5 * out_0^2
            let loss = |p: &MlpParams| {
                let out = p.predict(&x).unwrap();
                out.data.iter().zip(&weights).map(|(o, w)| o * w).sum::<f64>() + 0.5 * out.data[0].powi(2)
            };
            let (out, cache) = net.forward_batch(&x).unwrap();
            let mut g_out = Matrix::from_vec(n, out_dim, weights.clone()).unwrap();
            g_out.data[0] += out.data[0];
            let (grads, _) = net.backward_batch(&cache, &g_out).unwrap();
            let numeric = numeric_grad(&net, loss);
            for (a, b) in grads.to_flat().iter().zip(&numeric) {
                let e = rel_err(*a, *b);
                worst = worst.max(e);
                assert!(e < 1e-4, "trial {trial}: analytic {a} vs numeric {b}");
            }
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = MlpParams::new(&[3, 6, 6, 2], Activation::CRelu, false, &mut seeded(6));
        let x = [0.4, -0.7, 1.3];
        let (_, cache) = mlp_forward(&net, &x).unwrap();
        let (_, dx) = mlp_backward(&net, &cache, &[1.0, -0.5]).unwrap();
        let f = |x: &[f64]| {
            let (o, _) = mlp_forward(&net, x).unwrap();
            o[0] - 0.5 * o[1]
        };
        for i in 0..3 {
            let mut up = x;
            up[i] += 1e-5;
            let mut down = x;
            down[i] -= 1e-5;
            let fd = (f(&up) - f(&down)) / 2e-5;
            assert!(rel_err(dx[i], fd) < 1e-6);
        }
    }

    #[test]
    fn adam_first_step() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1, 1e-3);
        s.step_flat(&mut p, &[0.1]).unwrap();
        assert!((p[0] - (-9.99999e-4)).abs() < 1e-9);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.5, -2.0];
        let mut s = AdamState::new(2, 1e-3);
        s.step_flat(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn adam_repeated_gradient_keeps_step_size() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1, 1e-3);
        s.step_flat(&mut p, &[0.1]).unwrap();
        let d1 = p[0];
        s.step_flat(&mut p, &[0.1]).unwrap();
        let d2 = p[0] - d1;
        assert!((d1.abs() - d2.abs()).abs() < 1e-6);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut net = MlpParams::new(&[2, 1], Activation::CRelu, false, &mut seeded(7));
        let before = net.clone();
        let mut grads = net.zeros_like();
        grads.layers[0].bias[0] = f64::NAN;
        let mut s = AdamState::for_params(&net, 1e-3);
        assert!(matches!(adam_step(&mut net, &grads, &mut s), Err(Error::NumericFailure(_))));
        assert_eq!(net, before);
        assert_eq!(s.step_count, 0);
    }

    #[test]
    fn adam_network_matches_flat() {
        let mut rng = seeded(8);
        let mut net = MlpParams::new(&[2, 3, 1], Activation::CRelu, false, &mut rng);
        let mut flat = net.to_flat();
        let mut grads = net.zeros_like();
        let g: Vec<f64> = (0..net.num_params()).map(|i| (i as f64 * 0.37).sin()).collect();
        grads.set_flat(&g).unwrap();
        let mut s1 = AdamState::for_params(&net, 3e-4);
        let mut s2 = s1.clone();
        adam_step(&mut net, &grads, &mut s1).unwrap();
        s2.step_flat(&mut flat, &g).unwrap();
        assert_eq!(net.to_flat(), flat);
    }

    #[test]
    fn polyak_examples() {
        let online = single_linear(2.0, 2.0);
        let mut target = single_linear(0.0, 0.0);
        polyak_update(&mut target, &online, 0.0).unwrap();
        assert_eq!(target.layers[0].weight, vec![0.0]);
        polyak_update(&mut target, &online, 0.005).unwrap();
        assert!((target.layers[0].weight[0] - 0.01).abs() < 1e-15);
        polyak_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target, online);
        assert!(polyak_update(&mut target, &online, 1.5).is_err());
    }

    #[test]
    fn polyak_converges_geometrically() {
        let mut rng = seeded(9);
        let online = MlpParams::new(&[3, 4, 1], Activation::CRelu, false, &mut rng);
        let mut target = MlpParams::new(&[3, 4, 1], Activation::CRelu, false, &mut rng);
        let dist = |a: &MlpParams| {
            a.to_flat().iter().zip(online.to_flat()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        };
        let d0 = dist(&target);
        let tau = 0.05;
        for t in 1..=50 {
            polyak_update(&mut target, &online, tau).unwrap();
            let expected = (1.0 - tau).powi(t) * d0;
            assert!((dist(&target) - expected).abs() <= 1e-12 * d0.max(1.0));
        }
    }

    proptest! {
        #[test]
        fn crelu_splits_sign(x in proptest::collection::vec(-1e3f64..1e3, 1..16)) {
            let out = crelu(&x);
            let d = x.len();
            prop_assert!(out.iter().all(|v| *v >= 0.0));
            for j in 0..d {
                prop_assert_eq!(out[j] - out[d + j], x[j]);
            }
        }

        #[test]
        fn layer_norm_standardizes(x in proptest::collection::vec(-100f64..100.0, 2..32)) {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            prop_assume!(x.iter().any(|v| (v - mean).abs() > 1e-3));
            let d = x.len();
            let y = layer_norm(&x, &vec![1.0; d], &vec![0.0; d], 0.0);
            let m = y.iter().sum::<f64>() / d as f64;
            let v = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / d as f64;
            prop_assert!(m.abs() < 1e-10);
            prop_assert!((v - 1.0).abs() < 1e-10);
        }
    }
}
