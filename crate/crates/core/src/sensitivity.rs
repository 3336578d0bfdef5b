//! Forward sensitivity recursion for output Jacobians.
//!
//! With `z = [x; u]`, `M(rho) = sum_j rho_j M_j` (`rho_0 = 1`) and
//! `v_i = M_i z`, one model step is `[x_next; y] = M(rho) z`. Differentiating
//! with respect to a parameter vector `p` and writing `S = dx/dp`:
//!
//! ```text
//! d[x_next; y]/dp = F S + sum_i v_i (d rho_i / d theta_eta) + E
//! F = M(rho)[:, :n_x] + sum_i v_i (d rho_i / d x)
//! E[r, idx(j, r, c)] = rho_j z_c           (direct affine-matrix term)
//! ```
//!
//! The top `n_x` rows are the next state sensitivity (`df/dp`), the bottom
//! `n_y` rows the output Jacobian (`dh/dp`). The same expressions hold for the
//! `(A_i, B_i)` and `(C_i, D_i)` row blocks. The chain term uses
//! `(C_i x + D_i u)` for the output rows as a plain outer product with
//! `d rho_i / d theta_eta`; no Kronecker reshaping is applied to it.
//!
//! Columns for the initial state start as the identity and propagate through
//! `F` only.

use nalgebra::DMatrix;

use crate::error::{check_dim, Result};
use crate::model::{check_divergence, Dims, LpvSsModel, NetScratch, SchedulingNet, SimOptions, StepBuffers};
use crate::series::Series;

/// Which derivative columns to carry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Columns {
    /// Packed parameter indices, in column order.
    pub theta: Vec<usize>,
    /// Append `n_x` columns for the initial state.
    pub x0: bool,
}

impl Columns {
    /// Every parameter, optionally followed by the initial state.
    pub fn all(model: &LpvSsModel, include_x0: bool) -> Self {
        Self {
            theta: (0..model.n_theta()).collect(),
            x0: include_x0,
        }
    }

    pub fn count(&self, n_x: usize) -> usize {
        self.theta.len() + if self.x0 { n_x } else { 0 }
    }
}

/// State sensitivity `dx_hat_k / d(selected parameters)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityState {
    n_x: usize,
    n_cols: usize,
    s: Vec<f64>,
}

impl SensitivityState {
    /// Value at `k = 0`: zeros for parameter columns, identity for `x_hat_0`.
    pub fn initial(n_x: usize, columns: &Columns) -> Self {
        let n_cols = columns.count(n_x);
        let mut s = vec![0.0; n_x * n_cols];
        if columns.x0 {
            let off = columns.theta.len();
            for i in 0..n_x {
                s[i * n_cols + off + i] = 1.0;
            }
        }
        Self { n_x, n_cols, s }
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_x, self.n_cols, &self.s)
    }
}

/// Jacobians of the scheduling map at `(x_hat, u)`:
/// `(d rho / d theta_eta, d rho / d x_hat)`.
pub fn scheduling_jacobians(net: &SchedulingNet, x_hat: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dim("scheduling net input", net.input_dim(), x_hat.len() + u.len())?;
    let z: Vec<f64> = x_hat.iter().chain(u).copied().collect();
    let (dp, dz) = net.jacobians(&z)?;
    let dx = dz.columns(0, x_hat.len()).into_owned();
    Ok((dp, dx))
}

/// Result of one sensitivity step.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityStep {
    /// `d y_hat_k / d p`, `n_y x n_cols`.
    pub jacobian: DMatrix<f64>,
    pub s_next: SensitivityState,
    pub y_hat: Vec<f64>,
    pub x_next: Vec<f64>,
}

/// Output trajectory with the per-step output Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTrace {
    pub y: Series,
    pub jacobians: Vec<DMatrix<f64>>,
    pub columns: Columns,
}

/// Reusable working memory for the recursion.
pub(crate) struct Kernel<'m> {
    model: &'m LpvSsModel,
    n_cols: usize,
    /// Column position of each packed parameter, if carried.
    col_of: Vec<Option<usize>>,
    /// Carried net-parameter columns as `(net-local index, column)`.
    net_cols: Vec<(usize, usize)>,
    buf: StepBuffers,
    scratch: NetScratch,
    d_rho_d_eta: Vec<f64>,
    d_rho_d_z: Vec<f64>,
    v: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl<'m> Kernel<'m> {
    pub(crate) fn new(model: &'m LpvSsModel, columns: &Columns) -> Self {
        let dims = model.dims();
        let n_cols = columns.count(dims.n_x);
        let mut col_of = vec![None; model.n_theta()];
        for (col, &idx) in columns.theta.iter().enumerate() {
            col_of[idx] = Some(col);
        }
        let off = model.layout().net_offset();
        let net_cols = (0..model.layout().net_len())
            .filter_map(|q| col_of[off + q].map(|c| (q, c)))
            .collect();
        let net = model.net();
        Self {
            model,
            n_cols,
            col_of,
            net_cols,
            buf: model.step_buffers(),
            scratch: net.new_scratch(),
            d_rho_d_eta: vec![0.0; dims.n_p * net.param_count()],
            d_rho_d_z: vec![0.0; dims.n_p * dims.block_cols()],
            v: vec![0.0; dims.n_p * dims.block_rows()],
            f: vec![0.0; dims.block_rows() * dims.n_x],
            g: vec![0.0; dims.block_rows() * n_cols],
        }
    }

    /// Advances one step. Afterwards `self.g` holds `d[x_next; y]/dp` and
    /// `self.buf.out` holds `[x_next; y]`.
    pub(crate) fn advance(&mut self, x: &[f64], u: &[f64], s: &[f64]) -> Result<()> {
        let model = self.model;
        let Dims { n_x, n_p, .. } = model.dims();
        let (rows, cols) = (model.dims().block_rows(), model.dims().block_cols());
        let n_cols = self.n_cols;
        model.step_kernel(x, u, &mut self.buf)?;
        let net = model.net();
        let n_eta = net.param_count();
        let rho: Vec<f64> = model.rho_of(&self.buf).to_vec();
        let z = &self.buf.z;
        if n_p > 0 {
            net.jacobians_into(z, &self.buf.cache, &mut self.scratch, &mut self.d_rho_d_eta, &mut self.d_rho_d_z);
        }
        // v_i = M_i z
        for i in 0..n_p {
            let blk = model.block(i + 1);
            for r in 0..rows {
                let row = &blk[r * cols..(r + 1) * cols];
                self.v[i * rows + r] = row.iter().zip(z).map(|(m, zc)| m * zc).sum();
            }
        }
        // F = M(rho)[:, :n_x] + sum_i v_i (d rho_i / d x)
        for r in 0..rows {
            for c in 0..n_x {
                let mut acc = model.block(0)[r * cols + c];
                for i in 0..n_p {
                    acc += rho[i] * model.block(i + 1)[r * cols + c];
                    acc += self.v[i * rows + r] * self.d_rho_d_z[i * cols + c];
                }
                self.f[r * n_x + c] = acc;
            }
        }
        // G = F S
        for r in 0..rows {
            let grow = &mut self.g[r * n_cols..(r + 1) * n_cols];
            grow.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..n_x {
                let fv = self.f[r * n_x + c];
                if fv == 0.0 {
                    continue;
                }
                let srow = &s[c * n_cols..(c + 1) * n_cols];
                for (gv, sv) in grow.iter_mut().zip(srow) {
                    *gv += fv * sv;
                }
            }
        }
        // chain term through the scheduling net parameters
        for &(q, col) in &self.net_cols {
            for r in 0..rows {
                let mut acc = 0.0;
                for i in 0..n_p {
                    acc += self.v[i * rows + r] * self.d_rho_d_eta[i * n_eta + q];
                }
                self.g[r * n_cols + col] += acc;
            }
        }
        // direct affine-matrix term
        let layout = model.layout();
        for j in 0..=n_p {
            let coeff = if j == 0 { 1.0 } else { rho[j - 1] };
            for r in 0..rows {
                for (c, zc) in z.iter().enumerate() {
                    if let Some(col) = layout.matrix_index(j, r, c).and_then(|idx| self.col_of[idx]) {
                        self.g[r * n_cols + col] += coeff * zc;
                    }
                }
            }
        }
        Ok(())
    }

    pub(crate) fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub(crate) fn g(&self) -> &[f64] {
        &self.g
    }

    pub(crate) fn out(&self) -> &[f64] {
        &self.buf.out
    }
}

/// One step of the recursion from sensitivity `s` at `(x_hat, u)`; carries
/// every parameter column, plus `x_hat_0` columns when `s` has them.
pub fn sensitivity_step(model: &LpvSsModel, x_hat: &[f64], u: &[f64], s: &SensitivityState) -> Result<SensitivityStep> {
    let dims = model.dims();
    check_dim("state", dims.n_x, x_hat.len())?;
    check_dim("input", dims.n_u, u.len())?;
    let include_x0 = match s.n_cols.checked_sub(model.n_theta()) {
        Some(0) => false,
        Some(extra) if extra == dims.n_x => true,
        _ => {
            return Err(crate::Error::Dimension {
                what: "sensitivity columns",
                expected: model.n_theta(),
                got: s.n_cols,
            })
        }
    };
    let columns = Columns::all(model, include_x0);
    step_with_columns(model, x_hat, u, s, columns)
}

/// Like [`sensitivity_step`] for an explicit column selection.
pub fn step_with_columns(
    model: &LpvSsModel,
    x_hat: &[f64],
    u: &[f64],
    s: &SensitivityState,
    columns: Columns,
) -> Result<SensitivityStep> {
    let n_x = model.dims().n_x;
    check_dim("sensitivity columns", columns.count(n_x), s.n_cols)?;
    let mut k = Kernel::new(model, &columns);
    k.advance(x_hat, u, &s.s)?;
    let n_cols = k.n_cols();
    let (top, bottom) = k.g().split_at(n_x * n_cols);
    Ok(SensitivityStep {
        jacobian: DMatrix::from_row_slice(model.dims().n_y, n_cols, bottom),
        s_next: SensitivityState {
            n_x,
            n_cols,
            s: top.to_vec(),
        },
        y_hat: k.out()[n_x..].to_vec(),
        x_next: k.out()[..n_x].to_vec(),
    })
}

/// Simulation with output Jacobians `J_k = d y_hat(k|k-1) / d(theta[, x_hat_0])`.
pub fn simulate_with_sensitivities(model: &LpvSsModel, u_seq: &Series, x_hat_0: &[f64], include_x0: bool) -> Result<SensitivityTrace> {
    simulate_columns(model, u_seq, x_hat_0, Columns::all(model, include_x0), SimOptions::default())
}

/// Sensitivity simulation for an explicit column selection.
pub fn simulate_columns(
    model: &LpvSsModel,
    u_seq: &Series,
    x_hat_0: &[f64],
    columns: Columns,
    opts: SimOptions,
) -> Result<SensitivityTrace> {
    let Dims { n_x, n_u, n_y, .. } = model.dims();
    check_dim("input sequence channels", n_u, u_seq.dim())?;
    check_dim("initial state", n_x, x_hat_0.len())?;
    let mut state = SensitivityState::initial(n_x, &columns);
    let mut kernel = Kernel::new(model, &columns);
    let n_cols = kernel.n_cols();
    let mut x = x_hat_0.to_vec();
    let mut ys = Vec::with_capacity(u_seq.len() * n_y);
    let mut jac = Vec::with_capacity(u_seq.len());
    for k in 0..u_seq.len() {
        kernel.advance(&x, u_seq.row(k), &state.s)?;
        let (top, bottom) = kernel.g().split_at(n_x * n_cols);
        jac.push(DMatrix::from_row_slice(n_y, n_cols, bottom));
        state.s.copy_from_slice(top);
        let out = kernel.out();
        ys.extend_from_slice(&out[n_x..]);
        x.copy_from_slice(&out[..n_x]);
        check_divergence(&x, k, opts.divergence_bound)?;
    }
    Ok(SensitivityTrace {
        y: Series::new(n_y, ys)?,
        jacobians: jac,
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{random_model, random_series};
    use crate::model::{Activation, Layer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Central differences of the simulated output with respect to `theta`
    /// and `x_hat_0`; `out[k]` is `n_y x (n_theta + n_x)`.
    fn fd_jacobians(model: &LpvSsModel, u: &Series, x0: &[f64]) -> Vec<DMatrix<f64>> {
        let theta = model.pack();
        let n_t = theta.len();
        let n_x = x0.len();
        let n_y = model.dims().n_y;
        let mut out = vec![DMatrix::zeros(n_y, n_t + n_x); u.len()];
        let sim = |th: &[f64], x: &[f64]| model.with_params(th).unwrap().simulate(u, x).unwrap().y;
        for q in 0..n_t + n_x {
            let (mut tp, mut tm) = (theta.clone(), theta.clone());
            let (mut xp, mut xm) = (x0.to_vec(), x0.to_vec());
            let base = if q < n_t { theta[q] } else { x0[q - n_t] };
            let h = 1e-6f64.max(1e-6 * base.abs());
            if q < n_t {
                tp[q] += h;
                tm[q] -= h;
            } else {
                xp[q - n_t] += h;
                xm[q - n_t] -= h;
            }
            let (yp, ym) = (sim(&tp, &xp), sim(&tm, &xm));
            for k in 0..u.len() {
                for i in 0..n_y {
                    out[k][(i, q)] = (yp.row(k)[i] - ym.row(k)[i]) / (2.0 * h);
                }
            }
        }
        out
    }

    fn max_rel_err(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
        let scale = b.iter().map(|m| m.amax()).fold(0.0, f64::max);
        let floor = 1e-4 * scale;
        let mut worst = 0.0f64;
        for (ma, mb) in a.iter().zip(b) {
            for (x, y) in ma.iter().zip(mb.iter()) {
                worst = worst.max((x - y).abs() / y.abs().max(floor));
            }
        }
        worst
    }

    #[test]
    fn scheduling_jacobians_zero_net() {
        let net = SchedulingNet::zeros(5, &[3], 2, Activation::Tanh);
        let (dp, dx) = scheduling_jacobians(&net, &[1.0, 2.0, 3.0], &[0.5, -0.5]).unwrap();
        assert!(dx.iter().all(|v| *v == 0.0));
        let n = dp.ncols();
        let bias_block = dp.columns(n - 2, 2).into_owned();
        assert_eq!(bias_block, DMatrix::identity(2, 2));
    }

    #[test]
    fn scheduling_jacobians_affine_map() {
        let w = DMatrix::from_row_slice(1, 4, &[0.3, -1.2, 2.0, 0.7]);
        let net = SchedulingNet::new(4, Activation::Tanh, vec![Layer::new(&w, &[0.1]).unwrap()]).unwrap();
        let (_, dx) = scheduling_jacobians(&net, &[1.0, 2.0], &[0.0, 1.0]).unwrap();
        assert_eq!(dx, w.columns(0, 2).into_owned());
    }

    #[test]
    fn scheduling_jacobians_match_finite_differences() {
        let m = random_model(Dims::new(3, 2, 2, 2), &[4, 3], true, &mut rng(21));
        let net = m.net();
        let (x, u) = ([0.4, -0.8, 1.1], [0.3, -0.2]);
        let (dp, dx) = scheduling_jacobians(net, &x, &u).unwrap();
        let mut p = Vec::new();
        net.pack_into(&mut p);
        for q in 0..p.len() {
            let h = 1e-6f64.max(1e-6 * p[q].abs());
            let (mut a, mut b) = (net.clone(), net.clone());
            let (mut pa, mut pb) = (p.clone(), p.clone());
            pa[q] += h;
            pb[q] -= h;
            a.unpack_from(&pa).unwrap();
            b.unpack_from(&pb).unwrap();
            let z: Vec<f64> = x.iter().chain(&u).copied().collect();
            let (fa, fb) = (a.forward(&z).unwrap(), b.forward(&z).unwrap());
            for i in 0..2 {
                let fd = (fa[i] - fb[i]) / (2.0 * h);
                assert!((dp[(i, q)] - fd).abs() / fd.abs().max(1e-3) < 1e-6);
            }
        }
        for c in 0..3 {
            let (mut xa, mut xb) = (x, x);
            xa[c] += 1e-6;
            xb[c] -= 1e-6;
            let (ra, rb) = (m.eval_scheduling(&xa, &u).unwrap(), m.eval_scheduling(&xb, &u).unwrap());
            for i in 0..2 {
                let fd = (ra[i] - rb[i]) / 2e-6;
                assert!((dx[(i, c)] - fd).abs() / fd.abs().max(1e-3) < 1e-6);
            }
        }
    }

    #[test]
    fn initial_step_is_direct_derivative() {
        let m = random_model(Dims::new(3, 2, 2, 1), &[3], true, &mut rng(22));
        let s0 = SensitivityState::initial(3, &Columns::all(&m, false));
        let (x, u) = ([0.2, 0.1, -0.3], [1.0, 0.5]);
        let step = sensitivity_step(&m, &x, &u, &s0).unwrap();
        // with S = 0 only the explicit parameter dependence remains: check the
        // M_0 output entries, whose derivative is z_c
        let z = [0.2, 0.1, -0.3, 1.0, 0.5];
        for r in 0..2 {
            for c in 0..3 {
                let idx = m.layout().matrix_index(0, 3 + r, c).unwrap();
                assert_eq!(step.jacobian[(r, idx)], z[c]);
            }
        }
        let (_, y, _) = m.step(&x, &u).unwrap();
        assert_eq!(step.y_hat, y.as_slice());
    }

    #[test]
    fn lti_b_columns_match_finite_differences() {
        let m = random_model(Dims::new(3, 2, 2, 0), &[], true, &mut rng(23));
        let b_cols: Vec<usize> = (0..3)
            .flat_map(|r| (3..5).map(move |c| (r, c)))
            .map(|(r, c)| m.layout().matrix_index(0, r, c).unwrap())
            .collect();
        let u = random_series(2, 40, &mut rng(24));
        let x0 = [0.0; 3];
        let cols = Columns { theta: b_cols.clone(), x0: false };
        let tr = simulate_columns(&m, &u, &x0, cols, SimOptions::default()).unwrap();
        let fd = fd_jacobians(&m, &u, &x0);
        let fd_b: Vec<DMatrix<f64>> = fd.iter().map(|j| DMatrix::from_fn(2, b_cols.len(), |i, q| j[(i, b_cols[q])])).collect();
        assert!(max_rel_err(&tr.jacobians, &fd_b) < 1e-6);
    }

    #[test]
    fn random_lpv_step_matches_finite_differences() {
        let m = random_model(Dims::new(3, 2, 2, 2), &[3, 3], true, &mut rng(25));
        let u = random_series(2, 3, &mut rng(26));
        let x0 = [0.3, -0.4, 0.2];
        let tr = simulate_with_sensitivities(&m, &u, &x0, true).unwrap();
        let fd = fd_jacobians(&m, &u, &x0);
        assert!(max_rel_err(&tr.jacobians, &fd) < 1e-5);
    }

    #[test]
    fn trajectory_matches_finite_differences_all_classes() {
        for (seed, dims) in [(31, Dims::new(2, 1, 1, 1)), (32, Dims::new(3, 2, 2, 2)), (33, Dims::new(4, 2, 2, 0))] {
            let m = random_model(dims, &[3, 2], true, &mut rng(seed));
            let u = random_series(dims.n_u, 100, &mut rng(seed + 100));
            let x0: Vec<f64> = (0..dims.n_x).map(|i| 0.1 * i as f64 - 0.2).collect();
            let tr = simulate_with_sensitivities(&m, &u, &x0, true).unwrap();
            let fd = fd_jacobians(&m, &u, &x0);
            let err = max_rel_err(&tr.jacobians, &fd);
            assert!(err < 1e-5, "{dims:?}: {err}");
        }
    }

    #[test]
    fn empty_horizon() {
        let m = random_model(Dims::new(2, 1, 1, 1), &[2], true, &mut rng(34));
        let tr = simulate_with_sensitivities(&m, &Series::zeros(1, 0), &[0.0; 2], true).unwrap();
        assert!(tr.y.is_empty());
        assert!(tr.jacobians.is_empty());
    }

    #[test]
    fn outputs_identical_to_simulate() {
        let m = random_model(Dims::new(3, 2, 2, 1), &[3, 3], true, &mut rng(35));
        let u = random_series(2, 80, &mut rng(36));
        let x0 = [0.1, 0.0, -0.1];
        let tr = simulate_with_sensitivities(&m, &u, &x0, true).unwrap();
        assert_eq!(tr.y, m.simulate(&u, &x0).unwrap().y);
    }

    #[test]
    fn no_scheduling_dependence_zeroes_net_columns() {
        let mut m = random_model(Dims::new(3, 2, 2, 2), &[3], true, &mut rng(37));
        let mut theta = m.pack();
        for j in 1..=2 {
            for idx in m.layout().block_indices(j) {
                theta[idx] = 0.0;
            }
        }
        m.set_params(&theta).unwrap();
        let u = random_series(2, 30, &mut rng(38));
        let tr = simulate_with_sensitivities(&m, &u, &[0.2, 0.1, 0.0], false).unwrap();
        let off = m.layout().net_offset();
        for j in &tr.jacobians {
            for q in off..m.n_theta() {
                assert_eq!(j[(0, q)], 0.0);
                assert_eq!(j[(1, q)], 0.0);
            }
        }
    }

    #[test]
    fn column_blocks_are_separable() {
        let m = random_model(Dims::new(3, 2, 2, 1), &[3], true, &mut rng(39));
        let u = random_series(2, 25, &mut rng(40));
        let x0 = [0.1, 0.2, 0.3];
        let n = m.n_theta();
        let first: Vec<usize> = (0..n / 2).collect();
        let second: Vec<usize> = (n / 2..n).collect();
        let run = |theta: Vec<usize>, x0_cols: bool| {
            simulate_columns(&m, &u, &x0, Columns { theta, x0: x0_cols }, SimOptions::default()).unwrap()
        };
        let a = run(first, false);
        let b = run(second, true);
        let ab = simulate_with_sensitivities(&m, &u, &x0, true).unwrap();
        for k in 0..u.len() {
            let joined = DMatrix::from_fn(2, ab.jacobians[k].ncols(), |i, q| {
                if q < n / 2 {
                    a.jacobians[k][(i, q)]
                } else {
                    b.jacobians[k][(i, q - n / 2)]
                }
            });
            assert!((&joined - &ab.jacobians[k]).amax() <= 1e-14 * ab.jacobians[k].amax().max(1.0));
        }
    }

    #[test]
    fn cost_grows_linearly_with_horizon() {
        let m = random_model(Dims::new(6, 2, 2, 1), &[3, 3], true, &mut rng(41));
        let u = random_series(2, 4000, &mut rng(42));
        let x0 = [0.0; 6];
        let time = |n: usize| {
            let seg = u.slice(0, n);
            (0..7)
                .map(|_| {
                    let t = std::time::Instant::now();
                    let tr = simulate_with_sensitivities(&m, &seg, &x0, false).unwrap();
                    std::hint::black_box(tr);
                    t.elapsed().as_secs_f64()
                })
                .fold(f64::INFINITY, f64::min)
        };
        let (t1, t2, t4) = (time(1000), time(2000), time(4000));
        let per = [t1 / 1000.0, t2 / 2000.0, t4 / 4000.0];
        let ratio = per.iter().cloned().fold(0.0, f64::max) / per.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(ratio < 1.3, "per-step cost ratio {ratio} ({per:?})");
    }
}
