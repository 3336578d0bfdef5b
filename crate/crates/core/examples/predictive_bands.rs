// The full file-based pipeline: benchmark data, LTI prior, LPV fit,
// Laplace posterior, two-sigma bands on the test record and their
// evaluation. Writes a gnuplot script next to the prediction CSV.
//
// cargo run --release --example predictive_bands [out_dir] [restarts]

use std::path::Path;

use lpv_uq::workflow::{self, InitialState, PipelineConfig, PredictOptions};

pub fn run_example(out: &Path, cfg: &PipelineConfig) -> lpv_uq::Result<workflow::EvalReport> {
    let data = workflow::cmd_generate(cfg, &out.join("data"))?;
    let lti = out.join("lti.json");
    let lpv = out.join("lpv.json");
    let post = out.join("posterior.json");
    let pred = out.join("prediction.csv");
    let r = workflow::cmd_fit_lti(cfg, &data.train, Some(&data.test), &lti, None)?;
    println!("LTI: train {:.2} %, test {:.2} %", r.train_bfr, r.test_bfr.unwrap_or(f64::NAN));
    let r = workflow::cmd_fit(cfg, &data.train, &lti, Some(&data.test), &lpv, None)?;
    println!("LPV: train {:.2} %, test {:.2} %", r.train_bfr, r.test_bfr.unwrap_or(f64::NAN));
    workflow::cmd_laplace(cfg, &lpv, &data.train, &post)?;
    let opts = PredictOptions {
        n_sigma: Some(2.0),
        x0: InitialState::Zero,
        gnuplot: true,
    };
    let traj = workflow::cmd_predict(cfg, &lpv, &post, &data.test, &pred, &opts)?;
    let epi = traj.epistemic_sd();
    let peak = (0..traj.len()).max_by(|a, b| epi.row(*a)[0].total_cmp(&epi.row(*b)[0])).unwrap_or(0);
    println!("largest epistemic sd on y1 at t = {:.2} s", peak as f64 * 0.05);
    let eval = workflow::cmd_eval(&data.test, &pred, &out.join("eval.json"))?;
    println!("test BFR {:.2} %, two-sigma coverage of the noise-free output {:.3}", eval.bfr_y, eval.coverage_total);
    println!("plot with: cd {} && gnuplot -p prediction.gp", out.display());
    Ok(eval)
}

#[allow(dead_code)]
fn main() -> lpv_uq::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "run".into());
    let mut cfg = PipelineConfig::default();
    if let Some(r) = args.next().and_then(|s| s.parse().ok()) {
        cfg.lpv.fit.restarts = r;
    }
    run_example(Path::new(&out), &cfg).map(|_| ())
}
