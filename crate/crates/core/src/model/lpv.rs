//! Affine LPV state-space surrogate.
//!
//! ```text
//! x_{k+1} = A(rho_k) x_k + B(rho_k) u_k
//! y_k     = C(rho_k) x_k + D(rho_k) u_k
//! rho_k   = eta(x_k, u_k)
//! M(rho)  = M_0 + sum_i rho^i M_i,   M = [A B; C D]
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::net::{NetCache, SchedulingNet};
use super::params::ParamLayout;
use crate::error::{check_dim, Error, Result};
use crate::series::Series;

/// Default bound on the state infinity norm before a simulation is declared
/// divergent.
pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub n_p: usize,
}

impl Dims {
    pub fn new(n_x: usize, n_u: usize, n_y: usize, n_p: usize) -> Self {
        Self { n_x, n_u, n_y, n_p }
    }

    pub fn block_rows(&self) -> usize {
        self.n_x + self.n_y
    }

    pub fn block_cols(&self) -> usize {
        self.n_x + self.n_u
    }

    pub fn block_len(&self) -> usize {
        self.block_rows() * self.block_cols()
    }
}

/// Partitioned system matrices at one scheduling point.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpvSsModel {
    dims: Dims,
    d_zero: bool,
    /// `n_p + 1` blocks, each row-major `(n_x + n_y) x (n_x + n_u)`.
    blocks: Vec<f64>,
    net: SchedulingNet,
    layout: ParamLayout,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub divergence_bound: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
        }
    }
}

/// Output of [`LpvSsModel::simulate`]. `x` holds one more row than `y`: the
/// state propagated past the last input.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub y: Series,
    pub x: Series,
    pub rho: Series,
}

/// Reusable buffers for one model step.
#[derive(Debug, Clone)]
pub(crate) struct StepBuffers {
    pub z: Vec<f64>,
    pub out: Vec<f64>,
    pub cache: NetCache,
}

impl LpvSsModel {
    pub fn new(dims: Dims, d_zero: bool, matrices: &[DMatrix<f64>], net: SchedulingNet) -> Result<Self> {
        check_dim("number of matrix blocks", dims.n_p + 1, matrices.len())?;
        let (rows, cols) = (dims.block_rows(), dims.block_cols());
        let mut blocks = Vec::with_capacity(matrices.len() * rows * cols);
        for m in matrices {
            check_dim("matrix block rows", rows, m.nrows())?;
            check_dim("matrix block cols", cols, m.ncols())?;
            for r in 0..rows {
                for c in 0..cols {
                    let structural_zero = d_zero && r >= dims.n_x && c >= dims.n_x;
                    blocks.push(if structural_zero { 0.0 } else { m[(r, c)] });
                }
            }
        }
        Self::from_parts(dims, d_zero, blocks, net)
    }

    fn from_parts(dims: Dims, d_zero: bool, blocks: Vec<f64>, net: SchedulingNet) -> Result<Self> {
        check_dim("net input", dims.n_x + dims.n_u, net.input_dim())?;
        check_dim("net output", dims.n_p, net.output_dim())?;
        let layout = ParamLayout::new(dims, d_zero, net.param_count());
        Ok(Self {
            dims,
            d_zero,
            blocks,
            net,
            layout,
        })
    }

    /// All-zero matrices with the given net.
    pub fn zeros(dims: Dims, d_zero: bool, net: SchedulingNet) -> Result<Self> {
        let blocks = vec![0.0; (dims.n_p + 1) * dims.block_len()];
        Self::from_parts(dims, d_zero, blocks, net)
    }

    /// LTI model (`n_p = 0`) from its state-space matrices.
    pub fn lti(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, d: Option<&DMatrix<f64>>) -> Result<Self> {
        let (n_x, n_u, n_y) = (a.nrows(), b.ncols(), c.nrows());
        let dims = Dims::new(n_x, n_u, n_y, 0);
        let mut m = DMatrix::zeros(n_x + n_y, n_x + n_u);
        m.view_mut((0, 0), (n_x, n_x)).copy_from(a);
        m.view_mut((0, n_x), (n_x, n_u)).copy_from(b);
        m.view_mut((n_x, 0), (n_y, n_x)).copy_from(c);
        if let Some(d) = d {
            m.view_mut((n_x, n_x), (n_y, n_u)).copy_from(d);
        }
        Self::new(dims, d.is_none(), &[m], SchedulingNet::null(n_x + n_u))
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn d_zero(&self) -> bool {
        self.d_zero
    }

    pub fn net(&self) -> &SchedulingNet {
        &self.net
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_theta(&self) -> usize {
        self.layout.len()
    }

    pub fn matrix(&self, i: usize) -> DMatrix<f64> {
        let (rows, cols) = (self.dims.block_rows(), self.dims.block_cols());
        DMatrix::from_row_slice(rows, cols, self.block(i))
    }

    pub fn matrices(&self) -> Vec<DMatrix<f64>> {
        (0..=self.dims.n_p).map(|i| self.matrix(i)).collect()
    }

    #[inline]
    pub(crate) fn block(&self, i: usize) -> &[f64] {
        let len = self.dims.block_len();
        &self.blocks[i * len..(i + 1) * len]
    }

    /// Packed parameter vector `theta`.
    pub fn pack(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.layout.matrix_len()];
        for (pos, idx) in self.layout.dense_index().iter().enumerate() {
            if let Some(i) = idx {
                out[*i] = self.blocks[pos];
            }
        }
        self.net.pack_into(&mut out);
        out
    }

    /// Copy of `self` with parameters replaced by `theta`.
    pub fn with_params(&self, theta: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        m.set_params(theta)?;
        Ok(m)
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        check_dim("parameter vector", self.layout.len(), theta.len())?;
        for (pos, idx) in self.layout.dense_index().iter().enumerate() {
            self.blocks[pos] = idx.map_or(0.0, |i| theta[i]);
        }
        self.net.unpack_from(&theta[self.layout.net_offset()..])
    }

    /// `M(rho) = M_0 + sum_i rho^i M_i`, partitioned into `(A, B, C, D)`.
    pub fn assemble_matrices(&self, rho: &[f64]) -> Result<SystemMatrices> {
        check_dim("scheduling vector", self.dims.n_p, rho.len())?;
        if rho.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite scheduling value".into()));
        }
        let mut m = self.matrix(0);
        for (i, r) in rho.iter().enumerate() {
            m += self.matrix(i + 1) * *r;
        }
        Ok(self.partition(&m))
    }

    fn partition(&self, m: &DMatrix<f64>) -> SystemMatrices {
        let Dims { n_x, n_u, n_y, .. } = self.dims;
        let d = if self.d_zero {
            DMatrix::zeros(n_y, n_u)
        } else {
            m.view((n_x, n_x), (n_y, n_u)).into_owned()
        };
        SystemMatrices {
            a: m.view((0, 0), (n_x, n_x)).into_owned(),
            b: m.view((0, n_x), (n_x, n_u)).into_owned(),
            c: m.view((n_x, 0), (n_y, n_x)).into_owned(),
            d,
        }
    }

    pub fn eval_scheduling(&self, x_hat: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_dim("state", self.dims.n_x, x_hat.len())?;
        check_dim("input", self.dims.n_u, u.len())?;
        let z: Vec<f64> = x_hat.iter().chain(u).copied().collect();
        self.net.forward(&z)
    }

    /// One step; returns `(x_next, y_hat, rho)`.
    pub fn step(&self, x_hat: &[f64], u: &[f64]) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        check_dim("state", self.dims.n_x, x_hat.len())?;
        check_dim("input", self.dims.n_u, u.len())?;
        let mut buf = self.step_buffers();
        self.step_kernel(x_hat, u, &mut buf)?;
        let n_x = self.dims.n_x;
        Ok((
            DVector::from_column_slice(&buf.out[..n_x]),
            DVector::from_column_slice(&buf.out[n_x..]),
            DVector::from_column_slice(self.rho_of(&buf)),
        ))
    }

    pub(crate) fn step_buffers(&self) -> StepBuffers {
        StepBuffers {
            z: vec![0.0; self.dims.block_cols()],
            out: vec![0.0; self.dims.block_rows()],
            cache: self.net.new_cache(),
        }
    }

    #[inline]
    pub(crate) fn rho_of<'a>(&self, buf: &'a StepBuffers) -> &'a [f64] {
        buf.cache.outputs.last().map_or(&[], Vec::as_slice)
    }

    /// Evaluates `[x_next; y_hat] = M(rho) [x; u]` into `buf.out`; the net
    /// activations for this step are left in `buf.cache`.
    #[inline]
    pub(crate) fn step_kernel(&self, x: &[f64], u: &[f64], buf: &mut StepBuffers) -> Result<()> {
        let n_x = self.dims.n_x;
        let cols = self.dims.block_cols();
        buf.z[..n_x].copy_from_slice(x);
        buf.z[n_x..].copy_from_slice(u);
        let z = &buf.z;
        self.net.forward_cached(z, &mut buf.cache)?;
        let rho = buf.cache.outputs.last().map_or(&[][..], Vec::as_slice);
        let m0 = self.block(0);
        for (r, out) in buf.out.iter_mut().enumerate() {
            let row = &m0[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for (m, v) in row.iter().zip(z) {
                acc += m * v;
            }
            for (i, rho_i) in rho.iter().enumerate() {
                let row = &self.block(i + 1)[r * cols..(r + 1) * cols];
                let mut s = 0.0;
                for (m, v) in row.iter().zip(z) {
                    s += m * v;
                }
                acc += rho_i * s;
            }
            *out = acc;
        }
        Ok(())
    }

    pub fn simulate(&self, u_seq: &Series, x_hat_0: &[f64]) -> Result<Trajectory> {
        self.simulate_with(u_seq, x_hat_0, SimOptions::default())
    }

    pub fn simulate_with(&self, u_seq: &Series, x_hat_0: &[f64], opts: SimOptions) -> Result<Trajectory> {
        let Dims { n_x, n_u, n_y, n_p } = self.dims;
        check_dim("input sequence channels", n_u, u_seq.dim())?;
        check_dim("initial state", n_x, x_hat_0.len())?;
        if u_seq.is_empty() {
            return Err(Error::InvalidArgument("empty input sequence".into()));
        }
        let n = u_seq.len();
        let mut ys = Vec::with_capacity(n * n_y);
        let mut xs = Vec::with_capacity((n + 1) * n_x);
        let mut rhos = Vec::with_capacity(n * n_p);
        xs.extend_from_slice(x_hat_0);
        let mut buf = self.step_buffers();
        let mut x = x_hat_0.to_vec();
        for k in 0..n {
            self.step_kernel(&x, u_seq.row(k), &mut buf)?;
            x.copy_from_slice(&buf.out[..n_x]);
            check_divergence(&x, k, opts.divergence_bound)?;
            ys.extend_from_slice(&buf.out[n_x..]);
            xs.extend_from_slice(&x);
            rhos.extend_from_slice(self.rho_of(&buf));
        }
        Ok(Trajectory {
            y: Series::new(n_y, ys)?,
            x: Series::new(n_x, xs)?,
            rho: Series::new(n_p, rhos)?,
        })
    }
}

#[inline]
pub(crate) fn check_divergence(x: &[f64], step: usize, bound: f64) -> Result<()> {
    let mut norm = 0.0f64;
    for v in x {
        if !v.is_finite() {
            return Err(Error::Divergence {
                step,
                norm: f64::INFINITY,
            });
        }
        norm = norm.max(v.abs());
    }
    if norm > bound {
        Err(Error::Divergence { step, norm })
    } else {
        Ok(())
    }
}
