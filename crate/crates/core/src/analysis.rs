//! Error norms along the manifold, the dense-basis reference estimate,
//! convergence studies over the number of centers, log-log slope fits and the
//! phase-plane error field.
//!
//! Two error targets are tracked for every record:
//!
//! * `truth`: `f - fhat_n(T)`, the total estimation error;
//! * `reference`: `fhat_ref(T) - fhat_n(T)`, where `fhat_ref` is the estimator
//!   run on a much denser center set. This stands in for the gap between the
//!   infinite-dimensional estimate and its `n`-dimensional approximation, which
//!   is the quantity whose decay in the fill distance is predicted.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate, SystemConfig};
use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, MaternOrder};
use crate::manifold::{fill_distance, trajectory_samples, uniform_samples, ManifoldPolyline, ManifoldSamples};
use crate::par;
use crate::rkhs::{factorize, RkhsFunction, ScalarField};

/// Default window of center counts used for slope fits.
pub const DEFAULT_FIT_WINDOW: (usize, usize) = (40, 200);
/// Default size of the reference center set.
pub const DEFAULT_N_REF: usize = 800;

/// `sup_{p ∈ Ω} |f(p) - fhat(p)|` over the polyline points.
pub fn sup_error(m: &ManifoldPolyline, f_true: &dyn ScalarField, f_hat: &dyn ScalarField) -> f64 {
    let pts = m.points();
    par::max_range(pts.len(), |i| (f_true.value(&pts[i]) - f_hat.value(&pts[i])).abs())
}

fn pointwise_error(m: &ManifoldPolyline, f_true: &dyn ScalarField, f_hat: &dyn ScalarField) -> Vec<f64> {
    let pts = m.points();
    par::map_range(pts.len(), |i| f_true.value(&pts[i]) - f_hat.value(&pts[i]))
}

/// Periodic trapezoid rule for `sqrt(∫ e² ds)` (`mu = 0`) or
/// `sqrt(∫ e² + (de/ds)² ds)` (`mu = 1`) with central differences in arc length.
fn sobolev_norm(m: &ManifoldPolyline, e: &[f64], mu: u8) -> Result<f64> {
    if mu > 1 {
        return Err(Error::Input(format!("Sobolev order {mu} not supported; use 0 or 1")));
    }
    let n = e.len();
    let s = m.arclengths();
    let l = m.total_length();
    let seg = |i: usize| if i + 1 == n { l - s[i] } else { s[i + 1] - s[i] };
    let mut total = 0.0;
    for i in 0..n {
        let prev = (i + n - 1) % n;
        let next = (i + 1) % n;
        let width = seg(prev) + seg(i);
        let mut integrand = e[i] * e[i];
        if mu == 1 {
            let de = (e[next] - e[prev]) / width;
            integrand += de * de;
        }
        total += 0.5 * width * integrand;
    }
    Ok(total.sqrt())
}

/// Discrete `W^{mu,2}(Ω)` norm of `f_true - f_hat` for `mu ∈ {0, 1}`.
pub fn discrete_sobolev_error(
    m: &ManifoldPolyline,
    f_true: &dyn ScalarField,
    f_hat: &dyn ScalarField,
    mu: u8,
) -> Result<f64> {
    if mu > 1 {
        return Err(Error::Input(format!("Sobolev order {mu} not supported; use 0 or 1")));
    }
    sobolev_norm(m, &pointwise_error(m, f_true, f_hat), mu)
}

/// Least-squares slope of `ln(err)` against `ln(n)`.
pub fn fit_slope(ns: &[f64], errs: &[f64]) -> Result<f64> {
    if ns.len() != errs.len() {
        return Err(Error::Fit(format!("{} abscissae for {} errors", ns.len(), errs.len())));
    }
    if ns.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {}", ns.len())));
    }
    if let Some(bad) = errs.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::Fit(format!("errors must be positive and finite, got {bad}")));
    }
    if ns.iter().any(|n| !(*n > 0.0)) {
        return Err(Error::Fit("abscissae must be positive".into()));
    }
    let xs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all abscissae are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// How centers are placed on the manifold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SamplingMode {
    /// Equispaced in arc length.
    Uniform,
    /// Plant states at equispaced times `j * interval`.
    Trajectory { interval: f64 },
}

impl SamplingMode {
    pub fn sample(&self, m: &ManifoldPolyline, n: usize) -> Result<ManifoldSamples> {
        match *self {
            SamplingMode::Uniform => uniform_samples(m, n),
            SamplingMode::Trajectory { interval } => trajectory_samples(m, n, interval),
        }
    }
}

/// Runs the estimator on `n_ref` uniform centers and returns `fhat_{n_ref}(T)`.
pub fn reference_estimate(
    cfg: &SystemConfig,
    m: &ManifoldPolyline,
    spec: KernelSpec,
    n_ref: usize,
) -> Result<RkhsFunction> {
    let samples = uniform_samples(m, n_ref)?;
    let fact = factorize(spec, samples.centers)?;
    let traj = simulate(cfg, &fact)?;
    traj.final_estimate(&fact)
}

/// Error measures for one `(n, ν)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    #[serde(rename = "N")]
    pub n: usize,
    pub nu: f64,
    pub h: f64,
    pub sup_err: f64,
    pub l2_err: f64,
    pub h1_err: f64,
    pub ref_sup_err: Option<f64>,
    pub ref_l2_err: Option<f64>,
    pub ref_h1_err: Option<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub gamma: f64,
    pub jitter: f64,
}

impl ErrorRecord {
    pub fn error(&self, norm: ErrorNorm, target: ErrorTarget) -> Option<f64> {
        match (target, norm) {
            (ErrorTarget::Truth, ErrorNorm::Sup) => Some(self.sup_err),
            (ErrorTarget::Truth, ErrorNorm::L2) => Some(self.l2_err),
            (ErrorTarget::Truth, ErrorNorm::H1) => Some(self.h1_err),
            (ErrorTarget::Reference, ErrorNorm::Sup) => self.ref_sup_err,
            (ErrorTarget::Reference, ErrorNorm::L2) => self.ref_l2_err,
            (ErrorTarget::Reference, ErrorNorm::H1) => self.ref_h1_err,
        }
    }
}

/// A `(n, ν)` run that failed; the study continues without it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRecord {
    #[serde(rename = "N")]
    pub n: usize,
    pub nu: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorNorm {
    Sup,
    L2,
    H1,
}

impl ErrorNorm {
    pub const ALL: [ErrorNorm; 3] = [ErrorNorm::Sup, ErrorNorm::L2, ErrorNorm::H1];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorTarget {
    Truth,
    Reference,
}

/// Fitted slope for one `(ν, norm, target)` triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub nu: f64,
    pub norm: ErrorNorm,
    pub target: ErrorTarget,
    pub points: usize,
    pub slope: Option<f64>,
    pub error: Option<String>,
}

/// Bound on the slope magnitude for one kernel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeBound {
    pub nu: f64,
    pub bound_exponent: f64,
}

/// Summary of the reference run for one kernel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub nu: f64,
    pub n_ref: usize,
    pub sup_err: f64,
    pub l2_err: f64,
    pub h1_err: f64,
}

/// Inputs of [`convergence_study`].
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub n_list: Vec<usize>,
    pub orders: Vec<MaternOrder>,
    pub length_scale: f64,
    pub fit_window: (usize, usize),
    /// Size of the reference center set; `None` skips the reference columns.
    pub n_ref: Option<usize>,
    pub sampling: SamplingMode,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            n_list: vec![40, 60, 80, 100, 140, 200],
            orders: MaternOrder::ALL.to_vec(),
            length_scale: 0.5,
            fit_window: DEFAULT_FIT_WINDOW,
            n_ref: Some(DEFAULT_N_REF),
            sampling: SamplingMode::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub records: Vec<ErrorRecord>,
    pub failures: Vec<FailedRecord>,
    pub slopes: Vec<SlopeFit>,
    pub bounds: Vec<SlopeBound>,
    pub references: Vec<ReferenceSummary>,
    pub fit_window: [usize; 2],
    pub sampling: SamplingMode,
    pub curve_length: f64,
}

impl ConvergenceReport {
    pub fn records_for(&self, nu: f64) -> impl Iterator<Item = &ErrorRecord> {
        self.records.iter().filter(move |r| r.nu == nu)
    }

    /// Slope fitted inside the window, or the reason it could not be fitted.
    pub fn slope(&self, nu: f64, norm: ErrorNorm, target: ErrorTarget) -> Result<f64> {
        let fit = self
            .slopes
            .iter()
            .find(|s| s.nu == nu && s.norm == norm && s.target == target)
            .ok_or_else(|| Error::Fit(format!("no fit for nu = {nu}")))?;
        match (fit.slope, &fit.error) {
            (Some(s), _) => Ok(s),
            (None, Some(e)) => Err(Error::Fit(e.clone())),
            (None, None) => Err(Error::Fit("slope unavailable".into())),
        }
    }

    pub fn bound(&self, nu: f64) -> Option<f64> {
        self.bounds.iter().find(|b| b.nu == nu).map(|b| b.bound_exponent)
    }

    /// CSV with columns `N, nu, h, sup_err, l2_err, h1_err, ref_sup_err, ref_l2_err, ref_h1_err`.
    pub fn write_rates_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "N", "nu", "h", "sup_err", "l2_err", "h1_err", "ref_sup_err", "ref_l2_err", "ref_h1_err",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            out.write_record(&[
                r.n.to_string(),
                r.nu.to_string(),
                r.h.to_string(),
                r.sup_err.to_string(),
                r.l2_err.to_string(),
                r.h1_err.to_string(),
                opt(r.ref_sup_err),
                opt(r.ref_l2_err),
                opt(r.ref_h1_err),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

struct Errors {
    sup: f64,
    l2: f64,
    h1: f64,
}

fn all_errors(m: &ManifoldPolyline, f_true: &dyn ScalarField, f_hat: &dyn ScalarField) -> Result<Errors> {
    let e = pointwise_error(m, f_true, f_hat);
    Ok(Errors {
        sup: e.iter().fold(0.0, |acc, v| acc.max(v.abs())),
        l2: sobolev_norm(m, &e, 0)?,
        h1: sobolev_norm(m, &e, 1)?,
    })
}

fn run_record(
    cfg: &SystemConfig,
    m: &ManifoldPolyline,
    spec: KernelSpec,
    n: usize,
    sampling: SamplingMode,
    reference: Option<&RkhsFunction>,
) -> Result<ErrorRecord> {
    let samples = sampling.sample(m, n)?;
    let h = fill_distance(m, &samples)?;
    let fact = factorize(spec, Arc::clone(&samples.centers))?;
    let traj = simulate(cfg, &fact)?;
    let f_hat = traj.final_estimate(&fact)?;
    let truth = all_errors(m, cfg.unknown.as_ref(), &f_hat)?;
    let against_ref = reference.map(|r| all_errors(m, r, &f_hat)).transpose()?;
    Ok(ErrorRecord {
        n,
        nu: spec.order().nu(),
        h,
        sup_err: truth.sup,
        l2_err: truth.l2,
        h1_err: truth.h1,
        ref_sup_err: against_ref.as_ref().map(|e| e.sup),
        ref_l2_err: against_ref.as_ref().map(|e| e.l2),
        ref_h1_err: against_ref.as_ref().map(|e| e.h1),
        horizon: traj.final_time,
        gamma: cfg.gain,
        jitter: fact.jitter(),
    })
}

/// Runs the estimator for every `(ν, n)` pair, measures errors on `Ω`, and fits
/// log-log slopes over the fit window. Pairs run in parallel; records come
/// back ordered by `ν`, then by `n`.
pub fn convergence_study(cfg: &SystemConfig, m: &ManifoldPolyline, opts: &StudyOptions) -> Result<ConvergenceReport> {
    cfg.validate()?;
    if opts.n_list.is_empty() || opts.orders.is_empty() {
        return Err(Error::Input("study needs at least one N and one kernel order".into()));
    }
    if opts.n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input("N list must be strictly increasing".into()));
    }
    let specs = opts
        .orders
        .iter()
        .map(|&o| KernelSpec::new(o, opts.length_scale, 2))
        .collect::<Result<Vec<_>>>()?;

    let references: Vec<Option<RkhsFunction>> = match opts.n_ref {
        None => vec![None; specs.len()],
        Some(n_ref) => {
            let largest = *opts.n_list.last().unwrap();
            if n_ref < 4 * largest {
                return Err(Error::Input(format!(
                    "reference size {n_ref} must be at least 4x the largest N ({largest})"
                )));
            }
            par::map(&specs, |&spec| reference_estimate(cfg, m, spec, n_ref))
                .into_iter()
                .map(|r| r.map(Some))
                .collect::<Result<Vec<_>>>()?
        }
    };

    let tasks: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|k| opts.n_list.iter().map(move |&n| (k, n)))
        .collect();
    let outcomes = par::map(&tasks, |&(k, n)| {
        run_record(cfg, m, specs[k], n, opts.sampling, references[k].as_ref())
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (&(k, n), outcome) in tasks.iter().zip(outcomes) {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => failures.push(FailedRecord {
                n,
                nu: specs[k].order().nu(),
                reason: e.to_string(),
            }),
        }
    }

    let (lo, hi) = opts.fit_window;
    let mut slopes = Vec::new();
    for spec in &specs {
        let nu = spec.order().nu();
        for target in [ErrorTarget::Truth, ErrorTarget::Reference] {
            if target == ErrorTarget::Reference && opts.n_ref.is_none() {
                continue;
            }
            for norm in ErrorNorm::ALL {
                let (ns, errs): (Vec<f64>, Vec<f64>) = records
                    .iter()
                    .filter(|r| r.nu == nu && (lo..=hi).contains(&r.n))
                    .filter_map(|r| r.error(norm, target).map(|e| (r.n as f64, e)))
                    .unzip();
                let fit = fit_slope(&ns, &errs);
                slopes.push(SlopeFit {
                    nu,
                    norm,
                    target,
                    points: ns.len(),
                    slope: fit.as_ref().ok().copied(),
                    error: fit.err().map(|e| e.to_string()),
                });
            }
        }
    }

    let mut reference_summaries = Vec::new();
    for (spec, r) in specs.iter().zip(&references) {
        if let (Some(r), Some(n_ref)) = (r, opts.n_ref) {
            let e = all_errors(m, cfg.unknown.as_ref(), r)?;
            reference_summaries.push(ReferenceSummary {
                nu: spec.order().nu(),
                n_ref,
                sup_err: e.sup,
                l2_err: e.l2,
                h1_err: e.h1,
            });
        }
    }

    Ok(ConvergenceReport {
        records,
        failures,
        slopes,
        bounds: specs
            .iter()
            .map(|s| SlopeBound {
                nu: s.order().nu(),
                bound_exponent: s.order().slope_bound(),
            })
            .collect(),
        references: reference_summaries,
        fit_window: [lo, hi],
        sampling: opts.sampling,
        curve_length: m.total_length(),
    })
}

/// Axis-aligned rectangle `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn square(half_width: f64) -> Self {
        Self {
            x_min: -half_width,
            x_max: half_width,
            y_min: -half_width,
            y_max: half_width,
        }
    }
}

/// `|f - fhat|` on a regular grid; `values[j * xs.len() + i]` is at `(xs[i], ys[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
}

impl ErrorGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.xs.len() + i]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(0.0, |a, &b| a.max(b))
    }

    /// CSV with columns `x1, x2, err`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x1", "x2", "err"])?;
        for (j, y) in self.ys.iter().enumerate() {
            for (i, x) in self.xs.iter().enumerate() {
                out.write_record(&[x.to_string(), y.to_string(), self.at(i, j).to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let m = (n - 1) as f64;
    (0..n).map(|i| mid + half * (2.0 * i as f64 - m) / m).collect()
}

/// Samples `|f_true - f_hat|` on a `grid_n x grid_n` grid over `bbox`.
pub fn error_field(
    f_true: &dyn ScalarField,
    f_hat: &dyn ScalarField,
    bbox: BoundingBox,
    grid_n: usize,
) -> Result<ErrorGrid> {
    if grid_n < 2 {
        return Err(Error::Input(format!("grid needs at least 2 points per axis, got {grid_n}")));
    }
    if !(bbox.x_max > bbox.x_min && bbox.y_max > bbox.y_min) {
        return Err(Error::Input("bounding box is empty".into()));
    }
    let xs = axis(bbox.x_min, bbox.x_max, grid_n);
    let ys = axis(bbox.y_min, bbox.y_max, grid_n);
    let values = par::map_range(grid_n * grid_n, |k| {
        let p = [xs[k % grid_n], ys[k / grid_n]];
        (f_true.value(&p) - f_hat.value(&p)).abs()
    });
    Ok(ErrorGrid { xs, ys, values })
}
