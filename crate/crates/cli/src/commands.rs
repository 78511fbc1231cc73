use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rkhs_embed::analysis::{self, convergence_study, discrete_sobolev_error, error_field, sup_error, ErrorNorm, ErrorTarget};
use rkhs_embed::dynamics::{first_integral, seed_on_level, simulate, EstimatorTrajectory, SystemConfig};
use rkhs_embed::manifold::{trace_level_set, ManifoldPolyline};
use rkhs_embed::rkhs::factorize;
use rkhs_embed::{par, Error, GramFactorization, MaternOrder, RkhsFunction, ScalarField};
use serde_json::{json, Map, Value};

use crate::config::RunConfig;

pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Input(_) => EXIT_CONFIG,
            Error::Io(_) => EXIT_IO,
            _ => EXIT_NUMERICAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| io_failure(&path, e))
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    }
}

fn write_json(dir: &Path, name: &str, value: &Value) -> Outcome {
    let mut out = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Failure {
        code: EXIT_IO,
        message: e.to_string(),
    })?;
    std::io::Write::write_all(&mut out, b"\n").map_err(|e| io_failure(&dir.join(name), e))
}

fn trace(cfg: &RunConfig) -> Result<ManifoldPolyline, Failure> {
    let seed = seed_on_level(cfg.level).map_err(|e| Failure::config(format!("level: {e}")))?;
    Ok(trace_level_set(cfg.level, seed, cfg.manifold.resolution)?)
}

struct Run {
    fact: GramFactorization,
    traj: EstimatorTrajectory,
    estimate: RkhsFunction,
}

fn run_estimator(sys: &SystemConfig, cfg: &RunConfig, m: &ManifoldPolyline, order: MaternOrder, n: usize) -> Result<Run, Failure> {
    let spec = cfg.kernel(order).map_err(Failure::config)?;
    let samples = cfg.sampling().sample(m, n)?;
    let fact = factorize(spec, Arc::clone(&samples.centers))?;
    let traj = simulate(sys, &fact)?;
    let estimate = traj.final_estimate(&fact)?;
    Ok(Run { fact, traj, estimate })
}

pub fn simulate_cmd(cfg: &RunConfig, out: &Path) -> Outcome {
    let sys = cfg.system().map_err(Failure::config)?;
    par::sequential(|| {
        let m = trace(cfg)?;
        let run = run_estimator(&sys, cfg, &m, cfg.kernel.nu, cfg.kernel.n)?;
        run.traj.write_csv(create(out, "trajectory.csv")?)?;

        let f = sys.unknown.as_ref();
        let phi0 = first_integral(sys.x0.as_slice());
        let phi_drift = run
            .traj
            .x
            .iter()
            .chain(std::iter::once(&run.traj.final_x))
            .map(|x| (first_integral(x) - phi0).abs())
            .fold(0.0, f64::max);
        let state_error = run
            .traj
            .final_x
            .iter()
            .zip(&run.traj.final_xhat)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let a0: Vec<f64> = run.traj.a[0].iter().copied().collect();
        let a_final: Vec<f64> = run.traj.final_a.iter().copied().collect();
        let summary = json!({
            "N": cfg.kernel.n,
            "nu": cfg.kernel.nu.nu(),
            "gamma": sys.gain,
            "T": sys.horizon,
            "final_time": run.traj.final_time,
            "jitter": run.fact.jitter(),
            "sup_err": sup_error(&m, f, &run.estimate),
            "l2_err": discrete_sobolev_error(&m, f, &run.estimate, 0)?,
            "h1_err": discrete_sobolev_error(&m, f, &run.estimate, 1)?,
            "state_error": state_error,
            "phi_drift": phi_drift,
            "initial_coefficients": a0,
            "final_coefficients": a_final,
        });
        write_json(out, "simulate_summary.json", &summary)?;
        println!(
            "simulated N={} nu={} gamma={} to t={}: sup error on orbit {:.6e}, state error {:.3e}, phi drift {:.3e}",
            cfg.kernel.n,
            cfg.kernel.nu,
            sys.gain,
            run.traj.final_time,
            summary["sup_err"].as_f64().unwrap_or(f64::NAN),
            state_error,
            phi_drift
        );
        Ok(())
    })
}

pub fn trace_cmd(cfg: &RunConfig, out: &Path) -> Outcome {
    par::sequential(|| {
        let m = trace(cfg)?;
        m.write_csv(create(out, "manifold.csv")?)?;
        println!("L = {:.10}", m.total_length());
        println!("closure_gap = {:.3e}", m.closure_gap());
        println!("points = {}", m.len());
        Ok(())
    })
}

fn slopes_json(report: &analysis::ConvergenceReport) -> Value {
    let mut by_nu = Map::new();
    for fit in &report.slopes {
        let nu = by_nu.entry(fit.nu.to_string()).or_insert_with(|| json!({}));
        let target = match fit.target {
            ErrorTarget::Truth => "truth",
            ErrorTarget::Reference => "reference",
        };
        let norm = match fit.norm {
            ErrorNorm::Sup => "sup",
            ErrorNorm::L2 => "l2",
            ErrorNorm::H1 => "h1",
        };
        let entry = nu
            .as_object_mut()
            .unwrap()
            .entry(target)
            .or_insert_with(|| json!({}));
        entry[norm] = match (&fit.slope, &fit.error) {
            (Some(s), _) => json!(s),
            (None, e) => json!({ "error": e }),
        };
    }
    Value::Object(by_nu)
}

pub fn rates_cmd(cfg: &RunConfig, out: &Path) -> Outcome {
    let sys = cfg.system().map_err(Failure::config)?;
    let opts = cfg.study_options().map_err(Failure::config)?;
    let m = par::sequential(|| trace(cfg))?;
    let report = convergence_study(&sys, &m, &opts)?;

    report.write_rates_csv(create(out, "rates.csv")?)?;
    let bounds: Map<String, Value> = report
        .bounds
        .iter()
        .map(|b| (b.nu.to_string(), json!(-b.bound_exponent)))
        .collect();
    let json = json!({
        "config": cfg,
        "curve_length": report.curve_length,
        "fit_window": report.fit_window,
        "sampling": report.sampling,
        "records": report.records,
        "failures": report.failures,
        "references": report.references,
        "slopes": slopes_json(&report),
        "bounds": bounds,
    });
    write_json(out, "report.json", &json)?;

    for f in &report.failures {
        eprintln!("record N={} nu={} failed: {}", f.n, f.nu, f.reason);
    }
    let mut fit_errors = Vec::new();
    for b in &report.bounds {
        for target in [ErrorTarget::Truth, ErrorTarget::Reference] {
            if target == ErrorTarget::Reference && opts.n_ref.is_none() {
                continue;
            }
            match report.slope(b.nu, ErrorNorm::Sup, target) {
                Ok(s) => println!(
                    "nu={} sup error vs {:?}: slope {:+.3} (bound {:+.0})",
                    b.nu,
                    target,
                    s,
                    -b.bound_exponent
                ),
                Err(e) => fit_errors.push(format!("nu={} {:?}: {e}", b.nu, target)),
            }
        }
    }
    if fit_errors.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NUMERICAL,
            message: fit_errors.join("\n"),
        })
    }
}

pub fn contour_cmd(cfg: &RunConfig, out: &Path) -> Outcome {
    let c = &cfg.contour;
    let sys = cfg.system_with_gain(c.gain).map_err(Failure::config)?;
    par::sequential(|| {
        let m = trace(cfg)?;
        let f = sys.unknown.as_ref();
        let run;
        let f_hat: &dyn ScalarField = if c.force_exact {
            f
        } else {
            run = run_estimator(&sys, cfg, &m, c.nu, c.n)?;
            &run.estimate
        };
        let grid = error_field(f, f_hat, cfg.contour_box(), c.grid_n)?;
        grid.write_csv(create(out, "contour.csv")?)?;
        let on_orbit = sup_error(&m, f, f_hat);
        println!(
            "grid max {:.6e}, max on orbit {:.6e}, ratio {:.4}",
            grid.max(),
            on_orbit,
            if grid.max() > 0.0 { on_orbit / grid.max() } else { 0.0 }
        );
        Ok(())
    })
}

pub fn out_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| cfg.out_dir.clone())
}
