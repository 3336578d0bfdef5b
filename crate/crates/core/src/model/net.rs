//! Feedforward scheduling network `rho = eta(x_hat, u)`.
//!
//! Hidden layers share one activation, the output layer is linear. A net with
//! no layers is the null map used by LTI models (`n_p = 0`): it accepts inputs
//! of the declared dimension and produces an empty scheduling vector.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation output `a = apply(v)`.
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// Dense layer `out = W in + b` with `W` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    pub fn new(weights: &DMatrix<f64>, bias: &[f64]) -> Result<Self> {
        check_dim("layer bias", weights.nrows(), bias.len())?;
        let (rows, cols) = weights.shape();
        let mut w = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                w.push(weights[(r, c)]);
            }
        }
        Ok(Self {
            rows,
            cols,
            weights: w,
            bias: bias.to_vec(),
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    pub fn output_dim(&self) -> usize {
        self.rows
    }

    pub fn input_dim(&self) -> usize {
        self.cols
    }

    pub fn weights(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.weights)
    }

    pub fn weights_row_major(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn param_count(&self) -> usize {
        self.rows * self.cols + self.rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingNet {
    input_dim: usize,
    activation: Activation,
    layers: Vec<Layer>,
}

/// Per-evaluation buffers holding every layer output, used by backprop.
#[derive(Debug, Clone)]
pub struct NetCache {
    /// `outputs[l]` is the (post-activation) output of layer `l`.
    pub(crate) outputs: Vec<Vec<f64>>,
}

impl SchedulingNet {
    pub fn new(input_dim: usize, activation: Activation, layers: Vec<Layer>) -> Result<Self> {
        let mut prev = input_dim;
        for layer in &layers {
            check_dim("layer input", prev, layer.cols)?;
            prev = layer.rows;
        }
        Ok(Self {
            input_dim,
            activation,
            layers,
        })
    }

    /// The empty map used when there is no scheduling variable.
    pub fn null(input_dim: usize) -> Self {
        Self {
            input_dim,
            activation: Activation::Tanh,
            layers: Vec::new(),
        }
    }

    /// Zero-initialized net with the given hidden widths and output dimension.
    pub fn zeros(input_dim: usize, hidden: &[usize], output_dim: usize, activation: Activation) -> Self {
        if output_dim == 0 {
            return Self::null(input_dim);
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &h in hidden.iter().chain(std::iter::once(&output_dim)) {
            layers.push(Layer::zeros(h, prev));
            prev = h;
        }
        Self {
            input_dim,
            activation,
            layers,
        }
    }

    /// Xavier (Glorot) uniform weights, zero biases.
    pub fn xavier<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeros(input_dim, hidden, output_dim, activation);
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.rows + layer.cols) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_dim)
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        let n = self.layers.len();
        self.layers[..n.saturating_sub(1)]
            .iter()
            .map(Layer::output_dim)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Parameters layer by layer: weights row-wise, then biases.
    pub fn pack_into(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
    }

    /// Inverse of [`pack_into`](Self::pack_into); `params` must hold exactly
    /// `param_count()` values.
    pub fn unpack_from(&mut self, params: &[f64]) -> Result<()> {
        check_dim("net parameters", self.param_count(), params.len())?;
        let mut off = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn new_cache(&self) -> NetCache {
        NetCache {
            outputs: self.layers.iter().map(|l| vec![0.0; l.rows]).collect(),
        }
    }

    /// Forward pass on the concatenated input `[x_hat; u]`.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut cache = self.new_cache();
        self.forward_cached(input, &mut cache)?;
        Ok(cache.outputs.last().cloned().unwrap_or_default())
    }

    pub fn forward_cached(&self, input: &[f64], cache: &mut NetCache) -> Result<()> {
        check_dim("scheduling net input", self.input_dim, input.len())?;
        let last = self.layers.len().saturating_sub(1);
        for (l, layer) in self.layers.iter().enumerate() {
            let (prev, rest) = cache.outputs.split_at_mut(l);
            let src: &[f64] = if l == 0 { input } else { &prev[l - 1] };
            let dst = &mut rest[0];
            for (r, out) in dst.iter_mut().enumerate() {
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                let mut acc = layer.bias[r];
                for (w, x) in row.iter().zip(src) {
                    acc += w * x;
                }
                *out = if l == last {
                    acc
                } else {
                    self.activation.apply(acc)
                };
                if !out.is_finite() {
                    return Err(Error::NonFiniteActivation { layer: l });
                }
            }
        }
        Ok(())
    }

    /// Reverse pass for a cached forward evaluation.
    ///
    /// `grad_out` is the gradient of a scalar with respect to the net output.
    /// Parameter gradients are accumulated into `grad_params` (packing order),
    /// the input gradient is accumulated into `grad_input`.
    pub fn backward(
        &self,
        input: &[f64],
        cache: &NetCache,
        grad_out: &[f64],
        grad_params: &mut [f64],
        grad_input: &mut [f64],
        scratch: &mut NetScratch,
    ) {
        let n = self.layers.len();
        if n == 0 {
            return;
        }
        let offsets = &scratch.offsets;
        scratch.delta.clear();
        scratch.delta.extend_from_slice(grad_out);
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let src: &[f64] = if l == 0 { input } else { &cache.outputs[l - 1] };
            let off = offsets[l];
            let (gw, gb) = grad_params[off..off + layer.param_count()].split_at_mut(layer.rows * layer.cols);
            for r in 0..layer.rows {
                let d = scratch.delta[r];
                if d == 0.0 {
                    continue;
                }
                gb[r] += d;
                let grow = &mut gw[r * layer.cols..(r + 1) * layer.cols];
                for (g, x) in grow.iter_mut().zip(src) {
                    *g += d * x;
                }
            }
            scratch.next.clear();
            scratch.next.resize(layer.cols, 0.0);
            for r in 0..layer.rows {
                let d = scratch.delta[r];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                for (acc, w) in scratch.next.iter_mut().zip(row) {
                    *acc += d * w;
                }
            }
            if l == 0 {
                for (g, v) in grad_input.iter_mut().zip(&scratch.next) {
                    *g += v;
                }
            } else {
                let act = &cache.outputs[l - 1];
                for (v, a) in scratch.next.iter_mut().zip(act) {
                    *v *= self.activation.derivative_from_output(*a);
                }
                std::mem::swap(&mut scratch.delta, &mut scratch.next);
            }
        }
    }

    pub fn new_scratch(&self) -> NetScratch {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.param_count();
        }
        NetScratch {
            offsets,
            delta: Vec::new(),
            next: Vec::new(),
            seed: Vec::new(),
        }
    }

    /// Jacobians of the output with respect to the packed net parameters
    /// (`n_p x n_theta_eta`) and the full input (`n_p x input_dim`).
    pub fn jacobians(&self, input: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let mut cache = self.new_cache();
        self.forward_cached(input, &mut cache)?;
        let mut scratch = self.new_scratch();
        let (np, nt, ni) = (self.output_dim(), self.param_count(), self.input_dim);
        let mut dp = vec![0.0; np * nt];
        let mut di = vec![0.0; np * ni];
        self.jacobians_into(input, &cache, &mut scratch, &mut dp, &mut di);
        Ok((
            DMatrix::from_row_slice(np, nt, &dp),
            DMatrix::from_row_slice(np, ni, &di),
        ))
    }

    /// Row-major Jacobians for a cached forward pass; buffers are overwritten.
    pub fn jacobians_into(
        &self,
        input: &[f64],
        cache: &NetCache,
        scratch: &mut NetScratch,
        d_params: &mut [f64],
        d_input: &mut [f64],
    ) {
        let (np, nt, ni) = (self.output_dim(), self.param_count(), self.input_dim);
        d_params.iter_mut().for_each(|v| *v = 0.0);
        d_input.iter_mut().for_each(|v| *v = 0.0);
        let mut seed = std::mem::take(&mut scratch.seed);
        seed.clear();
        seed.resize(np, 0.0);
        for i in 0..np {
            seed[i] = 1.0;
            self.backward(
                input,
                cache,
                &seed,
                &mut d_params[i * nt..(i + 1) * nt],
                &mut d_input[i * ni..(i + 1) * ni],
                scratch,
            );
            seed[i] = 0.0;
        }
        scratch.seed = seed;
    }
}

/// Reusable buffers for [`SchedulingNet::backward`].
#[derive(Debug, Clone)]
pub struct NetScratch {
    offsets: Vec<usize>,
    delta: Vec<f64>,
    next: Vec<f64>,
    seed: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(seed: u64) -> SchedulingNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = SchedulingNet::xavier(5, &[4, 3], 2, Activation::Tanh, &mut rng);
        let n = net.param_count();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        net.unpack_from(&p).unwrap();
        net
    }

    /// Straightforward matrix-based forward pass.
    fn reference_forward(net: &SchedulingNet, input: &[f64]) -> Vec<f64> {
        let mut a = nalgebra::DVector::from_column_slice(input);
        let n = net.layers().len();
        for (l, layer) in net.layers().iter().enumerate() {
            let z = layer.weights() * &a + nalgebra::DVector::from_column_slice(layer.bias());
            a = if l + 1 == n { z } else { z.map(f64::tanh) };
        }
        a.iter().copied().collect()
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = SchedulingNet::zeros(4, &[3, 3], 2, Activation::Tanh);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let layer = Layer::new(&w, &[0.1, -0.2]).unwrap();
        let net = SchedulingNet::new(3, Activation::Tanh, vec![layer]).unwrap();
        let rho = net.forward(&[1.0, 1.0, 2.0]).unwrap();
        assert_eq!(rho, vec![1.0 + 2.0 + 6.0 + 0.1, -1.0 + 0.5 - 0.2]);
    }

    #[test]
    fn forward_matches_matrix_reference() {
        let net = random_net(11);
        let input = [0.3, -0.7, 1.2, 0.05, -2.0];
        let a = net.forward(&input).unwrap();
        let b = reference_forward(&net, &input);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn param_count_and_chain() {
        let net = SchedulingNet::zeros(8, &[3, 3], 1, Activation::Tanh);
        assert_eq!(net.param_count(), 8 * 3 + 3 + 3 * 3 + 3 + 3 + 1);
        let bad = SchedulingNet::new(8, Activation::Tanh, vec![Layer::zeros(3, 7)]);
        assert!(matches!(bad, Err(Error::Dimension { .. })));
    }

    #[test]
    fn null_net_is_empty() {
        let net = SchedulingNet::null(3);
        assert_eq!(net.output_dim(), 0);
        assert!(net.forward(&[1.0, 2.0, 3.0]).unwrap().is_empty());
    }

    #[test]
    fn non_finite_activation_reports_layer() {
        let w = DMatrix::from_element(2, 2, f64::MAX);
        let l0 = Layer::new(&w, &[0.0, 0.0]).unwrap();
        let net = SchedulingNet::new(2, Activation::Identity, vec![l0.clone(), l0]).unwrap();
        match net.forward(&[1.0, 1.0]) {
            Err(Error::NonFiniteActivation { layer }) => assert_eq!(layer, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jacobians_match_central_differences() {
        let net = random_net(3);
        let input = [0.2, -0.4, 0.9, 1.1, -0.3];
        let (dp, di) = net.jacobians(&input).unwrap();
        let mut params = Vec::new();
        net.pack_into(&mut params);
        for q in 0..params.len() {
            let h = 1e-6f64.max(1e-6 * params[q].abs());
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut pp = params.clone();
            pp[q] += h;
            plus.unpack_from(&pp).unwrap();
            pp[q] -= 2.0 * h;
            minus.unpack_from(&pp).unwrap();
            let fp = plus.forward(&input).unwrap();
            let fm = minus.forward(&input).unwrap();
            for i in 0..2 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                let err = (dp[(i, q)] - fd).abs() / fd.abs().max(1e-3);
                assert!(err < 1e-6, "param {q} out {i}: {} vs {fd}", dp[(i, q)]);
            }
        }
        for q in 0..input.len() {
            let h = 1e-6;
            let mut ip = input;
            ip[q] += h;
            let fp = net.forward(&ip).unwrap();
            ip[q] -= 2.0 * h;
            let fm = net.forward(&ip).unwrap();
            for i in 0..2 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                let err = (di[(i, q)] - fd).abs() / fd.abs().max(1e-3);
                assert!(err < 1e-6);
            }
        }
    }

    #[test]
    fn zero_weight_jacobians() {
        let net = SchedulingNet::zeros(3, &[2], 2, Activation::Tanh);
        let (dp, di) = net.jacobians(&[1.0, 2.0, 3.0]).unwrap();
        assert!(di.iter().all(|v| *v == 0.0));
        // output-layer bias block sits at the end of the packing
        let n = dp.ncols();
        assert_eq!(dp[(0, n - 2)], 1.0);
        assert_eq!(dp[(1, n - 1)], 1.0);
        assert_eq!(dp[(0, n - 1)], 0.0);
    }
}
