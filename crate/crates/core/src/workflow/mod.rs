//! File-based pipeline: generate, fit-lti, fit, laplace, predict, eval.
//!
//! Models operate on standardized signals. Each model file carries the
//! normalization record of its training data; datasets and prediction
//! files on disk are always in physical units. Every command writes a
//! [`RunManifest`] next to its main output.

mod config;
mod manifest;

pub use config::{LpvConfig, LtiConfig, ModelConfig, PipelineConfig, PredictConfig};
pub use manifest::{write_atomic, RunManifest};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::benchmark::generate_benchmark_datasets;
use crate::data::{bfr, dataset_to_csv, read_dataset, sidecar_path, Dataset, DatasetMeta, NormalizationRecord};
use crate::error::{check_dim, Error, Result};
use crate::estimate::{multi_start_fit, prior_from_lti, FitResult, Prior, RestartReport, Structure};
use crate::model::{LpvSsModel, ModelFile};
use crate::series::Series;
use crate::uq::{laplace_fit, predictive_trajectory, PosteriorApprox, PredictiveTrajectory};

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

/// `model.json` gives `model.report.json`.
pub fn report_path(output: &Path) -> PathBuf {
    output.with_extension("report.json")
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Ok(read_dataset(path)?.0)
}

fn normalize_with(d: &Dataset, record: Option<&NormalizationRecord>) -> Result<(Dataset, NormalizationRecord)> {
    match record {
        Some(r) => Ok((d.apply_normalization(r)?, r.clone())),
        None => d.normalize(),
    }
}

/// Simulation BFR in physical units; `x0 = None` starts from rest.
fn physical_bfr(file: &ModelFile, raw: &Dataset, x0: Option<&[f64]>) -> Result<f64> {
    let record = file
        .normalization
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("model file has no normalization record".into()))?;
    let d = raw.apply_normalization(record)?;
    let zero = vec![0.0; file.model.dims().n_x];
    let sim = file.model.simulate(&d.u, x0.unwrap_or(&zero))?;
    bfr(&raw.y, &record.y.invert(&sim.y)?)
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOutput {
    pub train: PathBuf,
    pub test: PathBuf,
    pub manifest: PathBuf,
}

/// Writes `train.csv` and `test.csv` (with sidecars) into `out_dir`.
pub fn cmd_generate(cfg: &PipelineConfig, out_dir: &Path) -> Result<GenerateOutput> {
    cfg.validate()?;
    let b = &cfg.benchmark;
    let mut manifest = RunManifest::new("generate", cfg.digest()?, b.seed);
    let data = manifest.time("simulate", || generate_benchmark_datasets(b))?;
    std::fs::create_dir_all(out_dir)?;
    let snr = b.snr_db.is_finite().then_some(b.snr_db);
    let mut paths = Vec::new();
    for (name, d, var) in [("train", &data.train, &data.train_noise_var), ("test", &data.test, &data.test_noise_var)] {
        let path = out_dir.join(format!("{name}.csv"));
        let meta = DatasetMeta {
            ts: d.ts,
            samples: d.len(),
            seed: Some(b.seed),
            snr_db: snr,
            sigma_e_realized: Some(var.clone()),
            stats: None,
        };
        write_atomic(&path, dataset_to_csv(d).as_bytes())?;
        save_json(&sidecar_path(&path), &meta)?;
        manifest.outputs.push(path.clone());
        manifest.outputs.push(sidecar_path(&path));
        paths.push(path);
    }
    let manifest_path = out_dir.join("generate.manifest.json");
    manifest.save(&manifest_path)?;
    Ok(GenerateOutput {
        test: paths.pop().expect("two datasets"),
        train: paths.pop().expect("two datasets"),
        manifest: manifest_path,
    })
}

// ----------------------------------------------------------------- fit-lti

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub structure: Structure,
    pub n_theta: usize,
    /// Also counting the estimated initial state.
    pub n_theta_with_x0: usize,
    pub cost: f64,
    pub best_restart: usize,
    pub train_bfr: f64,
    /// Simulation from rest; present when a test set was given.
    pub test_bfr: Option<f64>,
    pub restarts: Vec<RestartReport>,
}

/// Maximum-likelihood LTI fit on standardized training data. The model
/// file is the prior for [`cmd_fit`].
pub fn cmd_fit_lti(cfg: &PipelineConfig, train: &Path, test: Option<&Path>, out: &Path, jobs: Option<usize>) -> Result<FitReport> {
    cfg.validate()?;
    let mut manifest = RunManifest::new("fit-lti", cfg.digest()?, cfg.lti.fit.seed);
    let raw = load_dataset(train)?;
    let test_raw = test.map(load_dataset).transpose()?;
    manifest.inputs.push(train.to_path_buf());
    manifest.inputs.extend(test.map(Path::to_path_buf));
    let (data, record) = raw.normalize()?;
    let structure = cfg.lti_structure(data.n_u(), data.n_y());
    let sigma_e = DMatrix::identity(data.n_y(), data.n_y()) * cfg.lti.sigma_e_scale;
    let prior = Prior::flat(structure.n_theta()?, sigma_e)?;
    let fit = manifest.time("fit", || multi_start_fit(&data, &structure, &prior, &cfg.lti.fit, jobs))?;
    let file = ModelFile {
        model: fit.model.clone(),
        ts: Some(raw.ts),
        x_hat_0: Some(fit.x_hat_0.clone()),
        normalization: Some(record),
    };
    let report = fit_report(&structure, &fit, &file, &raw, test_raw.as_ref())?;
    finish_fit(&file, &report, out, manifest)?;
    Ok(report)
}

fn fit_report(
    structure: &Structure,
    fit: &FitResult,
    file: &ModelFile,
    raw: &Dataset,
    test: Option<&Dataset>,
) -> Result<FitReport> {
    let n_theta = fit.model.n_theta();
    Ok(FitReport {
        structure: structure.clone(),
        n_theta,
        n_theta_with_x0: n_theta + fit.x_hat_0.len(),
        cost: fit.cost,
        best_restart: fit.best_restart,
        train_bfr: physical_bfr(file, raw, Some(&fit.x_hat_0))?,
        test_bfr: test.map(|t| physical_bfr(file, t, None)).transpose()?,
        restarts: fit.restarts.clone(),
    })
}

fn finish_fit(file: &ModelFile, report: &FitReport, out: &Path, mut manifest: RunManifest) -> Result<()> {
    write_atomic(out, file.to_json()?.as_bytes())?;
    let rp = report_path(out);
    save_json(&rp, report)?;
    manifest.outputs.push(out.to_path_buf());
    manifest.outputs.push(rp);
    manifest.save(&RunManifest::path_for(out))
}

// --------------------------------------------------------------------- fit

/// Prior of the LPV fit: `M_0` centred on the LTI model, everything else
/// zero-mean, both with isotropic variances from the config.
pub fn lpv_prior(cfg: &PipelineConfig, structure: &Structure, lti: &LpvSsModel) -> Result<Prior> {
    let n_y = structure.dims.n_y;
    let sigma_e = DMatrix::identity(n_y, n_y) * cfg.lpv.sigma_e_scale;
    prior_from_lti(structure, &lti.matrix(0), cfg.lpv.m0_prior_var, cfg.lpv.prior_var, sigma_e)
}

/// MAP fit of the LPV model, using the LTI model file as prior and its
/// normalization for the data.
pub fn cmd_fit(
    cfg: &PipelineConfig,
    train: &Path,
    prior_model: &Path,
    test: Option<&Path>,
    out: &Path,
    jobs: Option<usize>,
) -> Result<FitReport> {
    cfg.validate()?;
    let mut manifest = RunManifest::new("fit", cfg.digest()?, cfg.lpv.fit.seed);
    let raw = load_dataset(train)?;
    let test_raw = test.map(load_dataset).transpose()?;
    let lti = ModelFile::load(prior_model)?;
    manifest.inputs.extend([train.to_path_buf(), prior_model.to_path_buf()]);
    manifest.inputs.extend(test.map(Path::to_path_buf));
    let (data, record) = normalize_with(&raw, lti.normalization.as_ref())?;
    let structure = cfg.lpv_structure(data.n_u(), data.n_y());
    let prior = lpv_prior(cfg, &structure, &lti.model)?;
    let fit = manifest.time("fit", || multi_start_fit(&data, &structure, &prior, &cfg.lpv.fit, jobs))?;
    let file = ModelFile {
        model: fit.model.clone(),
        ts: Some(raw.ts),
        x_hat_0: Some(fit.x_hat_0.clone()),
        normalization: Some(record),
    };
    let report = fit_report(&structure, &fit, &file, &raw, test_raw.as_ref())?;
    finish_fit(&file, &report, out, manifest)?;
    Ok(report)
}

// ----------------------------------------------------------------- laplace

/// Laplace posterior of a fitted LPV model on its training data.
pub fn cmd_laplace(cfg: &PipelineConfig, model: &Path, train: &Path, out: &Path) -> Result<PosteriorApprox> {
    cfg.validate()?;
    let mut manifest = RunManifest::new("laplace", cfg.digest()?, cfg.lpv.fit.seed);
    let file = ModelFile::load(model)?;
    let raw = load_dataset(train)?;
    manifest.inputs.extend([model.to_path_buf(), train.to_path_buf()]);
    let (data, _) = normalize_with(&raw, file.normalization.as_ref())?;
    let structure = cfg.lpv_structure(data.n_u(), data.n_y());
    check_dim("model parameters vs configured structure", structure.n_theta()?, file.model.n_theta())?;
    // the prior mean does not enter the covariance
    let prior = lpv_prior(cfg, &structure, &file.model)?;
    let x0 = file.x_hat_0.clone().unwrap_or_else(|| vec![0.0; structure.dims.n_x]);
    let post = manifest.time("laplace", || laplace_fit(&file.model, &x0, &data, &prior))?;
    write_atomic(out, post.to_json()?.as_bytes())?;
    manifest.outputs.push(out.to_path_buf());
    manifest.save(&RunManifest::path_for(out))?;
    Ok(post)
}

// ----------------------------------------------------------------- predict

/// Initial state of a predicted trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialState {
    /// Start from rest (unseen data).
    #[default]
    Zero,
    /// The state estimated with the model (its training record).
    Model,
}

impl std::str::FromStr for InitialState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "model" => Ok(Self::Model),
            _ => Err(Error::InvalidArgument(format!("initial state must be `zero` or `model`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOptions {
    /// Overrides the config's bound multiplier.
    pub n_sigma: Option<f64>,
    pub x0: InitialState,
    /// Also write a gnuplot script next to the CSV.
    pub gnuplot: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            n_sigma: None,
            x0: InitialState::Zero,
            gnuplot: false,
        }
    }
}

/// Predictive trajectory in physical units for the inputs of `input`.
pub fn predict(file: &ModelFile, posterior: &PosteriorApprox, input: &Dataset, n_sigma: f64, x0: InitialState) -> Result<PredictiveTrajectory> {
    let n_x = file.model.dims().n_x;
    let x0 = match x0 {
        InitialState::Zero => vec![0.0; n_x],
        InitialState::Model => file
            .x_hat_0
            .clone()
            .ok_or_else(|| Error::InvalidArgument("model file has no estimated initial state".into()))?,
    };
    let u = match &file.normalization {
        Some(r) => r.u.apply(&input.u)?,
        None => input.u.clone(),
    };
    let traj = predictive_trajectory(&file.model, posterior, &u, &x0, &posterior.sigma_e, n_sigma)?;
    match &file.normalization {
        Some(r) => traj.denormalize(&r.y),
        None => Ok(traj),
    }
}

pub fn cmd_predict(
    cfg: &PipelineConfig,
    model: &Path,
    posterior: &Path,
    input: &Path,
    out: &Path,
    opts: &PredictOptions,
) -> Result<PredictiveTrajectory> {
    cfg.validate()?;
    let n_sigma = opts.n_sigma.unwrap_or(cfg.predict.n_sigma);
    let mut manifest = RunManifest::new("predict", cfg.digest()?, cfg.lpv.fit.seed);
    let file = ModelFile::load(model)?;
    let post = PosteriorApprox::load(posterior)?;
    let data = load_dataset(input)?;
    manifest.inputs.extend([model.to_path_buf(), posterior.to_path_buf(), input.to_path_buf()]);
    let traj = manifest.time("predict", || predict(&file, &post, &data, n_sigma, opts.x0))?;
    write_atomic(out, traj.to_csv(data.ts).as_bytes())?;
    manifest.outputs.push(out.to_path_buf());
    if opts.gnuplot {
        let gp = out.with_extension("gp");
        write_atomic(&gp, gnuplot_script(out, traj.mean.dim()).as_bytes())?;
        manifest.outputs.push(gp);
    }
    manifest.save(&RunManifest::path_for(out))?;
    Ok(traj)
}

fn gnuplot_script(csv: &Path, n_y: usize) -> String {
    let name = csv.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    // columns: t, y_hat_1..n, sd_1..n, lo_1..n, hi_1..n, ...
    let mut s = String::new();
    writeln!(s, "set datafile separator ','").unwrap();
    writeln!(s, "set key autotitle columnhead").unwrap();
    writeln!(s, "set multiplot layout {n_y},1").unwrap();
    for c in 1..=n_y {
        let (mean, lo, hi) = (1 + c, 1 + 2 * n_y + c, 1 + 3 * n_y + c);
        writeln!(s, "set ylabel 'y{c}'").unwrap();
        writeln!(
            s,
            "plot '{name}' using 1:{lo}:{hi} with filledcurves fs transparent solid 0.3 title 'bounds', \\\n     '' using 1:{mean} with lines lw 2 title 'mean'"
        )
        .unwrap();
    }
    writeln!(s, "unset multiplot").unwrap();
    s
}

// -------------------------------------------------------------------- eval

/// Prediction file columns needed for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub mean: Series,
    pub lower: Series,
    pub upper: Series,
}

pub fn parse_trajectory_csv(text: &str) -> Result<TrajectoryTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty file".into() })?;
    let header: Vec<&str> = header.trim_end_matches('\r').split(',').map(str::trim).collect();
    let n_y = header.iter().filter(|h| h.starts_with("y_hat_")).count();
    if n_y == 0 {
        return Err(Error::MissingColumn("y_hat_1".into()));
    }
    let find = |name: String| header.iter().position(|h| *h == name).ok_or(Error::MissingColumn(name));
    let mut cols = Vec::with_capacity(3 * n_y);
    for prefix in ["y_hat", "lo", "hi"] {
        for c in 1..=n_y {
            cols.push(find(format!("{prefix}_{c}"))?);
        }
    }
    let mut data = [Vec::new(), Vec::new(), Vec::new()];
    for (i, line) in lines {
        let cells: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected {} cells, got {}", header.len(), cells.len()),
            });
        }
        for (j, &col) in cols.iter().enumerate() {
            let v: f64 = cells[col].trim().parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("not a number: `{}`", cells[col]),
            })?;
            data[j / n_y].push(v);
        }
    }
    let [mean, lower, upper] = data;
    Ok(TrajectoryTable {
        mean: Series::new(n_y, mean)?,
        lower: Series::new(n_y, lower)?,
        upper: Series::new(n_y, upper)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    /// BFR of the predicted mean against the measured output.
    pub bfr_y: f64,
    /// BFR against the noise-free output, when the dataset has it.
    pub bfr_w: Option<f64>,
    /// Fraction of reference samples inside the bounds, per channel; the
    /// reference is the noise-free output when known, else the measurement.
    pub coverage: Vec<f64>,
    pub coverage_total: f64,
    pub coverage_reference: String,
}

pub fn evaluate(truth: &Dataset, traj: &TrajectoryTable) -> Result<EvalReport> {
    check_dim("trajectory length", truth.len(), traj.mean.len())?;
    check_dim("trajectory channels", truth.n_y(), traj.mean.dim())?;
    let (reference, name) = match &truth.w {
        Some(w) => (w, "w"),
        None => (&truth.y, "y"),
    };
    let n_y = truth.n_y();
    let mut inside = vec![0usize; n_y];
    for k in 0..truth.len() {
        for c in 0..n_y {
            let v = reference.row(k)[c];
            if traj.lower.row(k)[c] <= v && v <= traj.upper.row(k)[c] {
                inside[c] += 1;
            }
        }
    }
    let n = truth.len().max(1) as f64;
    Ok(EvalReport {
        samples: truth.len(),
        bfr_y: bfr(&truth.y, &traj.mean)?,
        bfr_w: truth.w.as_ref().map(|w| bfr(w, &traj.mean)).transpose()?,
        coverage: inside.iter().map(|i| *i as f64 / n).collect(),
        coverage_total: inside.iter().sum::<usize>() as f64 / (n * n_y as f64),
        coverage_reference: name.into(),
    })
}

pub fn cmd_eval(truth: &Path, trajectory: &Path, out: &Path) -> Result<EvalReport> {
    let mut manifest = RunManifest::new("eval", String::new(), 0);
    let data = load_dataset(truth)?;
    let traj = parse_trajectory_csv(&std::fs::read_to_string(trajectory)?)?;
    manifest.inputs.extend([truth.to_path_buf(), trajectory.to_path_buf()]);
    let report = manifest.time("eval", || evaluate(&data, &traj))?;
    save_json(out, &report)?;
    manifest.outputs.push(out.to_path_buf());
    manifest.save(&RunManifest::path_for(out))?;
    Ok(report)
}
