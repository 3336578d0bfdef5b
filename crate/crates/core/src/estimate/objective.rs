//! Negative log posterior of `(theta, x_hat_0)` and its gradient.

use nalgebra::DMatrix;

use super::prior::Prior;
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::model::{check_divergence, Dims, LpvSsModel, NetCache, SimOptions, StepBuffers};
use crate::sensitivity::{simulate_columns, Columns};

/// Cost returned for iterates whose simulation diverges.
pub const DEFAULT_PENALTY: f64 = 1e12;

/// One objective evaluation. `penalized` marks a diverged simulation, in
/// which case `cost` is the penalty and the gradient is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub cost: f64,
    pub penalized: bool,
}

impl From<f64> for Evaluation {
    fn from(cost: f64) -> Self {
        Self { cost, penalized: false }
    }
}

/// Gradient split into model parameters and initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub theta: Vec<f64>,
    pub x0: Vec<f64>,
}

/// Objective over the joint vector `[theta; x_hat_0]` for a fixed dataset and
/// prior. Holds the working memory for repeated evaluations.
pub struct Objective<'a> {
    model: LpvSsModel,
    data: &'a Dataset,
    prior: &'a Prior,
    weight: DMatrix<f64>,
    penalty: f64,
    opts: SimOptions,
    tape: Tape,
}

struct Tape {
    buf: StepBuffers,
    z: Vec<f64>,
    caches: Vec<NetCache>,
    resid: Vec<f64>,
    dense: Vec<f64>,
    net_grad: Vec<f64>,
    scratch: crate::model::NetScratch,
    a: Vec<f64>,
    grad_z: Vec<f64>,
    grad_rho: Vec<f64>,
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::Divergence { .. } | Error::NonFiniteActivation { .. })
}

impl<'a> Objective<'a> {
    pub fn new(model: &LpvSsModel, data: &'a Dataset, prior: &'a Prior) -> Result<Self> {
        let dims = model.dims();
        check_dim("dataset input channels", dims.n_u, data.n_u())?;
        check_dim("dataset output channels", dims.n_y, data.n_y())?;
        check_dim("prior length", model.n_theta(), prior.len())?;
        check_dim("sigma_e size", dims.n_y, prior.n_y())?;
        let n = data.len();
        let (rows, cols) = (dims.block_rows(), dims.block_cols());
        let net = model.net();
        Ok(Self {
            model: model.clone(),
            data,
            prior,
            weight: prior.sigma_e_inv(),
            penalty: DEFAULT_PENALTY,
            opts: SimOptions::default(),
            tape: Tape {
                buf: model.step_buffers(),
                z: vec![0.0; n * cols],
                caches: vec![net.new_cache(); n],
                resid: vec![0.0; n * dims.n_y],
                dense: vec![0.0; (dims.n_p + 1) * rows * cols],
                net_grad: vec![0.0; net.param_count()],
                scratch: net.new_scratch(),
                a: vec![0.0; rows],
                grad_z: vec![0.0; cols],
                grad_rho: vec![0.0; dims.n_p],
            },
        })
    }

    pub fn with_penalty(mut self, penalty: f64) -> Self {
        self.penalty = penalty;
        self
    }

    /// Length of the joint vector `[theta; x_hat_0]`.
    pub fn dim(&self) -> usize {
        self.model.n_theta() + self.model.dims().n_x
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn model(&self) -> &LpvSsModel {
        &self.model
    }

    fn split<'p>(&self, params: &'p [f64]) -> Result<(&'p [f64], &'p [f64])> {
        check_dim("joint parameter vector", self.dim(), params.len())?;
        Ok(params.split_at(self.model.n_theta()))
    }

    /// Residuals `y - y_hat` for the current model, row-major into the tape.
    fn forward(&mut self, x0: &[f64], keep: bool) -> Result<()> {
        let Dims { n_x, n_y, .. } = self.model.dims();
        let cols = self.model.dims().block_cols();
        let t = &mut self.tape;
        let mut x = x0.to_vec();
        for k in 0..self.data.len() {
            self.model.step_kernel(&x, self.data.u.row(k), &mut t.buf)?;
            if keep {
                t.z[k * cols..(k + 1) * cols].copy_from_slice(&t.buf.z);
                std::mem::swap(&mut t.buf.cache, &mut t.caches[k]);
            }
            let out = &t.buf.out;
            let y = self.data.y.row(k);
            for i in 0..n_y {
                t.resid[k * n_y + i] = y[i] - out[n_x + i];
            }
            x.copy_from_slice(&out[..n_x]);
            check_divergence(&x, k, self.opts.divergence_bound)?;
        }
        Ok(())
    }

    fn data_term(&self) -> f64 {
        let n_y = self.model.dims().n_y;
        let mut acc = 0.0;
        for e in self.tape.resid.chunks_exact(n_y.max(1)).take(self.data.len()) {
            for r in 0..n_y {
                for c in 0..n_y {
                    acc += e[r] * self.weight[(r, c)] * e[c];
                }
            }
        }
        0.5 * acc
    }

    /// Cost at `params`; divergence yields the penalty.
    pub fn cost(&mut self, params: &[f64]) -> Result<Evaluation> {
        let (theta, x0) = self.split(params)?;
        self.model.set_params(theta)?;
        match self.forward(x0, false) {
            Ok(()) => {}
            Err(e) if is_divergence(&e) => return Ok(self.penalized()),
            Err(e) => return Err(e),
        }
        let c = self.data_term() + self.prior.penalty(theta);
        Ok(if c.is_finite() { c.into() } else { self.penalized() })
    }

    /// Sum-of-squares likelihood term only, independent of the prior.
    pub fn likelihood_cost(&mut self, params: &[f64]) -> Result<Evaluation> {
        let (theta, x0) = self.split(params)?;
        self.model.set_params(theta)?;
        match self.forward(x0, false) {
            Ok(()) => Ok(self.data_term().into()),
            Err(e) if is_divergence(&e) => Ok(self.penalized()),
            Err(e) => Err(e),
        }
    }

    fn penalized(&self) -> Evaluation {
        Evaluation {
            cost: self.penalty,
            penalized: true,
        }
    }

    /// Cost and gradient by a reverse pass through the simulation.
    pub fn cost_and_gradient(&mut self, params: &[f64], grad: &mut [f64]) -> Result<Evaluation> {
        check_dim("gradient length", self.dim(), grad.len())?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (theta, x0) = self.split(params)?;
        self.model.set_params(theta)?;
        match self.forward(x0, true) {
            Ok(()) => {}
            Err(e) if is_divergence(&e) => return Ok(self.penalized()),
            Err(e) => return Err(e),
        }
        let cost = self.data_term() + self.prior.penalty(theta);
        if !cost.is_finite() {
            return Ok(self.penalized());
        }
        self.reverse(grad);
        let (gt, _) = grad.split_at_mut(self.model.n_theta());
        self.prior.add_gradient(theta, gt);
        Ok(cost.into())
    }

    fn reverse(&mut self, grad: &mut [f64]) {
        let model = &self.model;
        let Dims { n_x, n_y, n_p, .. } = model.dims();
        let (rows, cols) = (model.dims().block_rows(), model.dims().block_cols());
        let net = model.net();
        let t = &mut self.tape;
        t.dense.iter_mut().for_each(|v| *v = 0.0);
        t.net_grad.iter_mut().for_each(|v| *v = 0.0);
        let mut lambda = vec![0.0; n_x];
        for k in (0..self.data.len()).rev() {
            let z = &t.z[k * cols..(k + 1) * cols];
            let cache = &t.caches[k];
            let rho: &[f64] = cache.outputs.last().map_or(&[], Vec::as_slice);
            t.a[..n_x].copy_from_slice(&lambda);
            let e = &t.resid[k * n_y..(k + 1) * n_y];
            for r in 0..n_y {
                let mut g = 0.0;
                for c in 0..n_y {
                    g -= self.weight[(r, c)] * e[c];
                }
                t.a[n_x + r] = g;
            }
            t.grad_z.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..=n_p {
                let coeff = if j == 0 { 1.0 } else { rho[j - 1] };
                let blk = model.block(j);
                let dense = &mut t.dense[j * rows * cols..(j + 1) * rows * cols];
                if j > 0 {
                    let mut gr = 0.0;
                    for r in 0..rows {
                        let row = &blk[r * cols..(r + 1) * cols];
                        let mz: f64 = row.iter().zip(z).map(|(m, v)| m * v).sum();
                        gr += t.a[r] * mz;
                    }
                    t.grad_rho[j - 1] = gr;
                }
                for r in 0..rows {
                    let ca = coeff * t.a[r];
                    if ca == 0.0 {
                        continue;
                    }
                    let row = &blk[r * cols..(r + 1) * cols];
                    let drow = &mut dense[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        drow[c] += ca * z[c];
                        t.grad_z[c] += ca * row[c];
                    }
                }
            }
            if n_p > 0 {
                net.backward(z, cache, &t.grad_rho, &mut t.net_grad, &mut t.grad_z, &mut t.scratch);
            }
            lambda.copy_from_slice(&t.grad_z[..n_x]);
        }
        for (d, idx) in t.dense.iter().zip(model.layout().dense_index()) {
            if let Some(i) = idx {
                grad[*i] = *d;
            }
        }
        let off = model.layout().net_offset();
        grad[off..off + t.net_grad.len()].copy_from_slice(&t.net_grad);
        let n_theta = model.n_theta();
        grad[n_theta..].copy_from_slice(&lambda);
    }

    /// Cost and gradient assembled from forward output sensitivities,
    /// `-sum_k J_k^T W e_k` plus the prior term. Slower; kept as an
    /// independent route for cross-checking the reverse pass.
    pub fn cost_and_gradient_forward(&mut self, params: &[f64], grad: &mut [f64]) -> Result<Evaluation> {
        check_dim("gradient length", self.dim(), grad.len())?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (theta, x0) = self.split(params)?;
        self.model.set_params(theta)?;
        let trace = match simulate_columns(&self.model, &self.data.u, x0, Columns::all(&self.model, true), self.opts) {
            Ok(t) => t,
            Err(e) if is_divergence(&e) => return Ok(self.penalized()),
            Err(e) => return Err(e),
        };
        let n_y = self.model.dims().n_y;
        let mut cost = self.prior.penalty(theta);
        for (k, j) in trace.jacobians.iter().enumerate() {
            let e: Vec<f64> = (0..n_y).map(|i| self.data.y.row(k)[i] - trace.y.row(k)[i]).collect();
            for r in 0..n_y {
                let we: f64 = (0..n_y).map(|c| self.weight[(r, c)] * e[c]).sum();
                cost += 0.5 * e[r] * we;
                for (q, g) in grad.iter_mut().enumerate() {
                    *g -= j[(r, q)] * we;
                }
            }
        }
        if !cost.is_finite() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return Ok(self.penalized());
        }
        let (gt, _) = grad.split_at_mut(self.model.n_theta());
        self.prior.add_gradient(theta, gt);
        Ok(cost.into())
    }
}

/// `0.5 sum_k ||y_k - y_hat_k||^2_{W} + 0.5 ||theta - mu_o||^2_{Sigma_o^{-1}}`
/// for `model` and `x_hat_0`, with divergence mapped to [`DEFAULT_PENALTY`].
pub fn neg_log_posterior(model: &LpvSsModel, x_hat_0: &[f64], data: &Dataset, prior: &Prior) -> Result<f64> {
    let mut obj = Objective::new(model, data, prior)?;
    let p = joint(model, x_hat_0)?;
    Ok(obj.cost(&p)?.cost)
}

/// Gradient of [`neg_log_posterior`]; zero when the simulation diverges.
pub fn cost_gradient(model: &LpvSsModel, x_hat_0: &[f64], data: &Dataset, prior: &Prior) -> Result<Gradient> {
    let mut obj = Objective::new(model, data, prior)?;
    let p = joint(model, x_hat_0)?;
    let mut g = vec![0.0; p.len()];
    obj.cost_and_gradient(&p, &mut g)?;
    let x0 = g.split_off(model.n_theta());
    Ok(Gradient { theta: g, x0 })
}

/// `[theta; x_hat_0]` for a model.
pub fn joint(model: &LpvSsModel, x_hat_0: &[f64]) -> Result<Vec<f64>> {
    check_dim("initial state", model.dims().n_x, x_hat_0.len())?;
    let mut p = model.pack();
    p.extend_from_slice(x_hat_0);
    Ok(p)
}
