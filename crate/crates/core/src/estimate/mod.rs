//! MAP estimation of the model parameters and initial state.

mod adam;
mod lbfgs;
mod objective;
mod prior;

pub use adam::{adam_minimize, AdamConfig};
pub use lbfgs::{lbfgs_minimize, LbfgsConfig};
pub use objective::{cost_gradient, joint, neg_log_posterior, Evaluation, Gradient, Objective, DEFAULT_PENALTY};
pub use prior::Prior;
pub(crate) use prior::invert_spd;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{bfr, Dataset};
use crate::error::{check_dim, Error, Result};
use crate::model::{Activation, Dims, LpvSsModel, SchedulingNet};

/// Why an optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailed,
    /// The starting point already diverged.
    PenalizedStart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub penalized_evaluations: usize,
    pub termination: Termination,
    /// Best cost so far, one entry per iteration plus the start.
    pub trace: Vec<f64>,
}

/// Model structure to be estimated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Structure {
    pub dims: Dims,
    pub hidden: Vec<usize>,
    pub d_zero: bool,
}

impl Structure {
    pub fn lti(n_x: usize, n_u: usize, n_y: usize) -> Self {
        Self {
            dims: Dims::new(n_x, n_u, n_y, 0),
            hidden: Vec::new(),
            d_zero: true,
        }
    }

    /// Zero model with this structure.
    pub fn zero_model(&self) -> Result<LpvSsModel> {
        let net = self.zero_net();
        LpvSsModel::zeros(self.dims, self.d_zero, net)
    }

    fn zero_net(&self) -> SchedulingNet {
        let input = self.dims.n_x + self.dims.n_u;
        if self.dims.n_p == 0 {
            SchedulingNet::null(input)
        } else {
            SchedulingNet::zeros(input, &self.hidden, self.dims.n_p, Activation::Tanh)
        }
    }

    pub fn n_theta(&self) -> Result<usize> {
        Ok(self.zero_model()?.n_theta())
    }
}

/// How `M_0` is initialised for each restart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum M0Init {
    /// The prior mean on the `M_0` coordinates.
    PriorMean,
    /// `A = a_diag I + noise`, all other entries noise, noise `N(0, std^2)`.
    Random { a_diag: f64, std: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetInit {
    /// Glorot-uniform weights, zero biases.
    Xavier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSpec {
    pub m0: M0Init,
    /// Standard deviation of the `M_i`, `i >= 1`, entries.
    pub m_i_std: f64,
    pub net: NetInit,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            m0: M0Init::PriorMean,
            m_i_std: 0.01,
            net: NetInit::Xavier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub adam: AdamConfig,
    pub lbfgs: LbfgsConfig,
    pub restarts: usize,
    pub seed: u64,
    /// Cost assigned to diverging simulations.
    pub penalty: f64,
    pub init: InitSpec,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            lbfgs: LbfgsConfig::default(),
            restarts: 16,
            seed: 0,
            penalty: DEFAULT_PENALTY,
            init: InitSpec::default(),
        }
    }
}

impl FitConfig {
    /// Defaults for the LTI prior fit: random `M_0`, fewer restarts.
    pub fn lti_default() -> Self {
        Self {
            restarts: 4,
            init: InitSpec {
                m0: M0Init::Random { a_diag: 0.8, std: 0.05 },
                ..InitSpec::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.lbfgs.validate()?;
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if !(self.penalty > 0.0) || !self.penalty.is_finite() {
            return Err(Error::Config(format!("penalty must be positive and finite, got {}", self.penalty)));
        }
        if !(self.init.m_i_std >= 0.0) || !self.init.m_i_std.is_finite() {
            return Err(Error::Config("m_i_std must be finite and non-negative".into()));
        }
        if let M0Init::Random { a_diag, std } = self.init.m0 {
            if !a_diag.is_finite() || !(std >= 0.0) || !std.is_finite() {
                return Err(Error::Config("invalid random M0 initialisation".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartReport {
    pub index: usize,
    pub initial_cost: f64,
    pub adam_cost: f64,
    pub final_cost: f64,
    pub adam_penalized_evaluations: usize,
    pub lbfgs_iterations: usize,
    pub lbfgs_evaluations: usize,
    pub lbfgs_penalized_evaluations: usize,
    pub termination: Termination,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: LpvSsModel,
    pub x_hat_0: Vec<f64>,
    pub cost: f64,
    pub best_restart: usize,
    pub restarts: Vec<RestartReport>,
}

impl FitResult {
    pub fn theta_map(&self) -> Vec<f64> {
        self.model.pack()
    }
}

/// Initial model for one restart.
pub fn initial_model<R: Rng + ?Sized>(structure: &Structure, prior: &Prior, init: &InitSpec, rng: &mut R) -> Result<LpvSsModel> {
    let mut model = structure.zero_model()?;
    check_dim("prior length", model.n_theta(), prior.len())?;
    let dims = structure.dims;
    let layout = model.layout().clone();
    let mut theta = vec![0.0; model.n_theta()];
    match init.m0 {
        M0Init::PriorMean => {
            for idx in layout.block_indices(0) {
                theta[idx] = prior.mu_o()[idx];
            }
        }
        M0Init::Random { a_diag, std } => {
            let noise = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
            for r in 0..dims.block_rows() {
                for c in 0..dims.block_cols() {
                    if let Some(idx) = layout.matrix_index(0, r, c) {
                        let base = if r == c && r < dims.n_x { a_diag } else { 0.0 };
                        theta[idx] = base + noise.sample(rng);
                    }
                }
            }
        }
    }
    let noise = Normal::new(0.0, init.m_i_std).map_err(|e| Error::Config(e.to_string()))?;
    for j in 1..=dims.n_p {
        for idx in layout.block_indices(j) {
            theta[idx] = noise.sample(rng);
        }
    }
    if dims.n_p > 0 {
        let net = match init.net {
            NetInit::Xavier => SchedulingNet::xavier(dims.n_x + dims.n_u, &structure.hidden, dims.n_p, Activation::Tanh, rng),
        };
        let mut p = Vec::with_capacity(net.param_count());
        net.pack_into(&mut p);
        theta[layout.net_offset()..].copy_from_slice(&p);
    }
    model.set_params(&theta)?;
    Ok(model)
}

fn run_restart(data: &Dataset, structure: &Structure, prior: &Prior, cfg: &FitConfig, index: usize) -> Result<(RestartReport, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let model = initial_model(structure, prior, &cfg.init, &mut rng)?;
    let mut obj = Objective::new(&model, data, prior)?.with_penalty(cfg.penalty);
    let p0 = joint(&model, &vec![0.0; structure.dims.n_x])?;
    let adam = adam_minimize(|x, g| obj.cost_and_gradient(x, g), &p0, &cfg.adam)?;
    let lb = lbfgs_minimize(|x, g| obj.cost_and_gradient(x, g), &adam.x, &cfg.lbfgs)?;
    let diverged = obj.cost(&lb.x)?.penalized;
    Ok((
        RestartReport {
            index,
            initial_cost: adam.trace[0],
            adam_cost: adam.cost,
            final_cost: lb.cost,
            adam_penalized_evaluations: adam.penalized_evaluations,
            lbfgs_iterations: lb.iterations,
            lbfgs_evaluations: lb.evaluations,
            lbfgs_penalized_evaluations: lb.penalized_evaluations,
            termination: lb.termination,
            diverged,
        },
        lb.x,
    ))
}

/// Multi-start MAP estimation of `(theta, x_hat_0)`.
///
/// Restarts run on a pool of `jobs` threads (all available cores when
/// `None`); the result does not depend on the pool size.
pub fn multi_start_fit(data: &Dataset, structure: &Structure, prior: &Prior, cfg: &FitConfig, jobs: Option<usize>) -> Result<FitResult> {
    cfg.validate()?;
    let n_theta = structure.n_theta()?;
    check_dim("prior length", n_theta, prior.len())?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs: Vec<Result<(RestartReport, Vec<f64>)>> =
        pool.install(|| (0..cfg.restarts).into_par_iter().map(|i| run_restart(data, structure, prior, cfg, i)).collect());
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let best = runs
        .iter()
        .filter(|(r, _)| !r.diverged)
        .min_by(|a, b| a.0.final_cost.total_cmp(&b.0.final_cost).then(a.0.index.cmp(&b.0.index)));
    let Some((report, x)) = best else {
        return Err(Error::AllRestartsDiverged {
            restarts: cfg.restarts,
            penalties: runs.iter().map(|(r, _)| r.final_cost).collect(),
        });
    };
    let mut model = structure.zero_model()?;
    model.set_params(&x[..n_theta])?;
    Ok(FitResult {
        model,
        x_hat_0: x[n_theta..].to_vec(),
        cost: report.final_cost,
        best_restart: report.index,
        restarts: runs.iter().map(|(r, _)| r.clone()).collect(),
    })
}

/// LTI model fitted by maximum likelihood, used as the prior mean of `M_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiFit {
    pub fit: FitResult,
    /// Simulation BFR on the fitting data, percent.
    pub train_bfr: f64,
}

impl LtiFit {
    /// The fitted `[A B; C D]` block.
    pub fn m0(&self) -> DMatrix<f64> {
        self.fit.model.matrix(0)
    }
}

/// Maximum-likelihood LTI fit (`n_p = 0`, flat prior).
pub fn fit_lti_prior(data: &Dataset, n_x: usize, sigma_e: DMatrix<f64>, cfg: &FitConfig, jobs: Option<usize>) -> Result<LtiFit> {
    let structure = Structure::lti(n_x, data.n_u(), data.n_y());
    let prior = Prior::flat(structure.n_theta()?, sigma_e)?;
    let fit = multi_start_fit(data, &structure, &prior, cfg, jobs)?;
    let sim = fit.model.simulate(&data.u, &fit.x_hat_0)?;
    let train_bfr = bfr(&data.y, &sim.y)?;
    Ok(LtiFit { fit, train_bfr })
}

/// Prior whose `M_0` coordinates are centred on `m0` with variance `m0_var`
/// and whose remaining coordinates are zero-mean with variance `rest_var`.
pub fn prior_from_lti(structure: &Structure, m0: &DMatrix<f64>, m0_var: f64, rest_var: f64, sigma_e: DMatrix<f64>) -> Result<Prior> {
    let model = structure.zero_model()?;
    let dims = structure.dims;
    check_dim("prior block rows", dims.block_rows(), m0.nrows())?;
    check_dim("prior block columns", dims.block_cols(), m0.ncols())?;
    let layout = model.layout();
    let mut mu = vec![0.0; model.n_theta()];
    let mut var = vec![rest_var; model.n_theta()];
    for r in 0..dims.block_rows() {
        for c in 0..dims.block_cols() {
            if let Some(idx) = layout.matrix_index(0, r, c) {
                mu[idx] = m0[(r, c)];
                var[idx] = m0_var;
            }
        }
    }
    Prior::new(mu, var, sigma_e)
}

#[cfg(test)]
mod tests;
