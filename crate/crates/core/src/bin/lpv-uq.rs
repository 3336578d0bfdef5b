//! Command-line front end of the identification pipeline.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 numerical
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lpv_uq::workflow::{self, InitialState, PipelineConfig, PredictOptions};
use lpv_uq::Error;

#[derive(Parser)]
#[command(name = "lpv-uq", version, about = "LPV state-space identification with Laplace uncertainty quantification")]
struct Cli {
    /// Pipeline configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for multi-start fitting (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the mass-spring-damper benchmark into train/test CSV files.
    Generate {
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Fit the LTI model used as prior mean.
    FitLti {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value = "lti.json")]
        out: PathBuf,
    },
    /// MAP fit of the LPV model.
    Fit {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value = "lpv.json")]
        out: PathBuf,
    },
    /// Laplace posterior of a fitted model.
    Laplace {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value = "posterior.json")]
        out: PathBuf,
    },
    /// Predictive mean and confidence bounds for an input record.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "prediction.csv")]
        out: PathBuf,
        /// Bound multiplier (overrides the config).
        #[arg(long)]
        nsigma: Option<f64>,
        /// Initial state: `zero` or `model`.
        #[arg(long, default_value = "zero")]
        x0: InitialState,
        /// Also write a gnuplot script.
        #[arg(long)]
        gnuplot: bool,
    },
    /// BFR and band coverage of a prediction against a dataset.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, default_value = "eval.json")]
        out: PathBuf,
    },
    /// Print the default configuration.
    DefaultConfig,
}

fn load_config(path: Option<&Path>) -> lpv_uq::Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn run(cli: Cli) -> lpv_uq::Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    let jobs = cli.jobs;
    match cli.command {
        Command::Generate { out } => {
            let o = workflow::cmd_generate(&cfg, &out)?;
            println!("wrote {} and {}", o.train.display(), o.test.display());
        }
        Command::FitLti { train, test, out } => {
            let r = workflow::cmd_fit_lti(&cfg, &train, test.as_deref(), &out, jobs)?;
            print_fit("LTI", &r, &out);
        }
        Command::Fit { train, prior, test, out } => {
            let r = workflow::cmd_fit(&cfg, &train, &prior, test.as_deref(), &out, jobs)?;
            print_fit("LPV", &r, &out);
        }
        Command::Laplace { model, train, out } => {
            let p = workflow::cmd_laplace(&cfg, &model, &train, &out)?;
            println!("posterior over {} parameters from {} records -> {}", p.dim(), p.n_data, out.display());
        }
        Command::Predict {
            model,
            posterior,
            input,
            out,
            nsigma,
            x0,
            gnuplot,
        } => {
            let opts = PredictOptions { n_sigma: nsigma, x0, gnuplot };
            let t = workflow::cmd_predict(&cfg, &model, &posterior, &input, &out, &opts)?;
            println!("{} samples -> {}", t.len(), out.display());
        }
        Command::Eval { truth, trajectory, out } => {
            let r = workflow::cmd_eval(&truth, &trajectory, &out)?;
            match r.bfr_w {
                Some(w) => println!("BFR {:.2} % (noise-free {:.2} %), coverage {:.3}", r.bfr_y, w, r.coverage_total),
                None => println!("BFR {:.2} %, coverage {:.3}", r.bfr_y, r.coverage_total),
            }
        }
        Command::DefaultConfig => print!("{}", PipelineConfig::default().to_toml()?),
    }
    Ok(())
}

fn print_fit(kind: &str, r: &workflow::FitReport, out: &Path) {
    print!(
        "{kind} model: n_theta = {} ({} with x0), train BFR {:.2} %",
        r.n_theta, r.n_theta_with_x0, r.train_bfr
    );
    if let Some(t) = r.test_bfr {
        print!(", test BFR {t:.2} %");
    }
    println!(" -> {}", out.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::AllRestartsDiverged { penalties, .. } = &e {
                for (i, p) in penalties.iter().enumerate() {
                    eprintln!("  restart {i}: cost {p:e}");
                }
            }
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
