//! Plant, Lyapunov solve and the finite-dimensional RKHS-embedded estimator.
//!
//! The plant is `x' = A0 x + B f(x)` with `f` unknown. Writing `A0 = A + (A0 - A)`
//! with a Hurwitz design matrix `A`, the estimator is
//!
//! ```text
//! xhat' = A xhat + (A0 - A) x + B fhat(x)
//! fhat' = γ P_n (B E_x)^* P (x - xhat)
//! ```
//!
//! where `P` solves `A^T P + P A = -Q` and `P_n` is the projection onto the span
//! of kernel sections at the centers. In coefficient coordinates
//! `fhat = sum_i a_i K(ξ_i, ·)` the adjoint is `(B E_x)^* v = (B^T v) K_x` and
//! `P_n K_x` has coefficients `G^{-1} k(x)` with `k(x) = [K(ξ_i, x)]_i`, so
//!
//! ```text
//! a' = γ (B^T P (x - xhat)) G^{-1} k(x).
//! ```

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ode::Rk4;
use crate::rkhs::{CenterSet, GramFactorization, RkhsFunction, SharedField};

/// Level of the orbit used in the planar example.
pub const DEFAULT_LEVEL: f64 = -0.1;

/// `Φ(x) = (x2 + x1² - 0.5) exp(2 x2)`, a first integral of the planar example.
pub fn first_integral(x: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), 2);
    (x[1] + x[0] * x[0] - 0.5) * (2.0 * x[1]).exp()
}

/// Point `(0, x2)` with `x2 ∈ [0, 0.5]` on the level set `Φ = c`, found by
/// bisection. Requires `-0.5 <= c < 0`; `c = -0.5` is the equilibrium.
pub fn seed_on_level(c: f64) -> Result<[f64; 2]> {
    if !(-0.5..0.0).contains(&c) {
        return Err(Error::Input(format!(
            "level {c} has no closed orbit through the upper x2-axis; need -0.5 <= c < 0"
        )));
    }
    let g = |x2: f64| first_integral(&[0.0, x2]) - c;
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    if g(lo) >= 0.0 {
        return Ok([0.0, 0.0]);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.max(1.0) {
            break;
        }
    }
    Ok([0.0, 0.5 * (lo + hi)])
}

/// Solution of `A^T P + P A = -Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSolution {
    pub p: DMatrix<f64>,
}

impl LyapunovSolution {
    /// `|A^T P + P A + Q|_F / |Q|_F`.
    pub fn relative_residual(&self, a: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
        (a.transpose() * &self.p + &self.p * a + q).norm() / q.norm()
    }
}

/// Largest real part among the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn check_square(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Input(format!(
            "{name} must be square and nonempty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_spd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    check_square(name, m)?;
    let asym = (m - m.transpose()).norm();
    if asym > 1e-12 * m.norm() {
        return Err(Error::Input(format!("{name} is not symmetric")));
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::Input(format!("{name} is not positive definite")));
    }
    Ok(())
}

/// Solves the Lyapunov equation through its Kronecker (vectorized) form
/// `(I ⊗ A^T + A^T ⊗ I) vec(P) = -vec(Q)`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<LyapunovSolution> {
    check_square("A", a)?;
    check_spd("Q", q)?;
    if a.nrows() != q.nrows() {
        return Err(Error::Input("A and Q have different sizes".into()));
    }
    let max_real_part = spectral_abscissa(a);
    if max_real_part >= 0.0 {
        return Err(Error::NotHurwitz { max_real_part });
    }
    let d = a.nrows();
    let eye = DMatrix::<f64>::identity(d, d);
    let at = a.transpose();
    let system = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let vec_p = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Kronecker system".into()))?;
    let p = DMatrix::from_column_slice(d, d, vec_p.as_slice());
    let p = (&p + p.transpose()) * 0.5;
    if p.clone().cholesky().is_none() {
        return Err(Error::Numerical("Lyapunov solution is not positive definite".into()));
    }
    Ok(LyapunovSolution { p })
}

/// Plant, design and learning parameters.
#[derive(Clone)]
pub struct SystemConfig {
    /// `A0`, the known linear part of the plant.
    pub plant_matrix: DMatrix<f64>,
    /// `A`, the Hurwitz matrix used by the estimator.
    pub design_matrix: DMatrix<f64>,
    /// `B` (d x 1).
    pub input: DVector<f64>,
    /// `Q` in `A^T P + P A = -Q`.
    pub lyapunov_weight: DMatrix<f64>,
    /// Learning gain γ.
    pub gain: f64,
    /// The nonlinearity `f`, known here only to drive the plant and score errors.
    pub unknown: SharedField,
    pub x0: DVector<f64>,
    pub xhat0: DVector<f64>,
    /// Initial coefficients; zeros when `None`.
    pub initial_coefficients: Option<DVector<f64>>,
    pub dt: f64,
    pub horizon: f64,
    pub snapshot_stride: usize,
}

impl fmt::Debug for SystemConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemConfig")
            .field("plant_matrix", &self.plant_matrix)
            .field("design_matrix", &self.design_matrix)
            .field("input", &self.input)
            .field("lyapunov_weight", &self.lyapunov_weight)
            .field("gain", &self.gain)
            .field("x0", &self.x0)
            .field("xhat0", &self.xhat0)
            .field("dt", &self.dt)
            .field("horizon", &self.horizon)
            .field("snapshot_stride", &self.snapshot_stride)
            .finish_non_exhaustive()
    }
}

impl SystemConfig {
    /// The planar example `x1' = x2 + x1²`, `x2' = -x1` started on the level
    /// set `Φ = level`, with `A = A0 - I`, `Q = I`, `γ = 1`, `dt = 1e-3`, `T = 50`.
    pub fn planar(level: f64) -> Result<Self> {
        let a0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let design = &a0 - DMatrix::identity(2, 2);
        let seed = seed_on_level(level)?;
        let x0 = DVector::from_row_slice(&seed);
        Ok(Self {
            plant_matrix: a0,
            design_matrix: design,
            input: DVector::from_row_slice(&[1.0, 0.0]),
            lyapunov_weight: DMatrix::identity(2, 2),
            gain: 1.0,
            unknown: Arc::new(|x: &[f64]| x[0] * x[0]),
            xhat0: x0.clone(),
            x0,
            initial_coefficients: None,
            dt: 1e-3,
            horizon: 50.0,
            snapshot_stride: 100,
        })
    }

    pub fn dim(&self) -> usize {
        self.plant_matrix.nrows()
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        check_square("A0", &self.plant_matrix)?;
        check_square("A", &self.design_matrix)?;
        check_spd("Q", &self.lyapunov_weight)?;
        if self.design_matrix.nrows() != d
            || self.lyapunov_weight.nrows() != d
            || self.input.len() != d
            || self.x0.len() != d
            || self.xhat0.len() != d
        {
            return Err(Error::Input(format!("all system dimensions must equal {d}")));
        }
        let max_real_part = spectral_abscissa(&self.design_matrix);
        if max_real_part >= 0.0 {
            return Err(Error::NotHurwitz { max_real_part });
        }
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return Err(Error::Input(format!("gain must be nonnegative, got {}", self.gain)));
        }
        if !(self.dt > 0.0 && self.horizon > 0.0) {
            return Err(Error::Input("dt and horizon must be positive".into()));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::Input("snapshot_stride must be at least 1".into()));
        }
        Ok(())
    }

    fn initial_coefficients_for(&self, n: usize) -> Result<DVector<f64>> {
        match &self.initial_coefficients {
            None => Ok(DVector::zeros(n)),
            Some(a) if a.len() == n => Ok(a.clone()),
            Some(a) => Err(Error::Input(format!(
                "{} initial coefficients for {n} centers",
                a.len()
            ))),
        }
    }
}

/// `A0 x + B f(x)`.
pub fn plant_rhs(cfg: &SystemConfig, x: &DVector<f64>) -> DVector<f64> {
    &cfg.plant_matrix * x + &cfg.input * cfg.unknown.value(x.as_slice())
}

/// Right-hand side of the estimator in coefficient coordinates.
pub fn estimator_rhs(
    cfg: &SystemConfig,
    p: &DMatrix<f64>,
    fact: &GramFactorization,
    x: &DVector<f64>,
    xhat: &DVector<f64>,
    a: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if a.len() != fact.len() {
        return Err(Error::Input(format!(
            "{} coefficients for {} centers",
            a.len(),
            fact.len()
        )));
    }
    let k = fact.spec().kernel_vector(fact.centers(), x.as_slice())?;
    let fhat = k.dot(a);
    let xhat_dot = &cfg.design_matrix * xhat
        + (&cfg.plant_matrix - &cfg.design_matrix) * x
        + &cfg.input * fhat;
    let w = cfg.input.dot(&(p * (x - xhat)));
    let a_dot = fact.solve(&k)? * (cfg.gain * w);
    Ok((xhat_dot, a_dot))
}

/// Time-sampled record of a simulation.
#[derive(Debug, Clone)]
pub struct EstimatorTrajectory {
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub xhat: Vec<Vec<f64>>,
    pub a: Vec<DVector<f64>>,
    pub centers: Arc<CenterSet>,
    pub snapshot_stride: usize,
    pub final_time: f64,
    pub final_x: Vec<f64>,
    pub final_xhat: Vec<f64>,
    pub final_a: DVector<f64>,
}

impl EstimatorTrajectory {
    /// `fhat_n(T)` as a function.
    pub fn final_estimate(&self, fact: &GramFactorization) -> Result<RkhsFunction> {
        RkhsFunction::new(*fact.spec(), Arc::clone(&self.centers), self.final_a.clone())
    }

    /// CSV with columns `t, x1.., xhat1.., a_1..a_n`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.final_x.len();
        let n = self.final_a.len();
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        header.extend((1..=d).map(|i| format!("xhat{i}")));
        header.extend((1..=n).map(|i| format!("a_{i}")));
        out.write_record(&header)?;
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for k in 0..self.times.len() {
            row.clear();
            row.push(self.times[k].to_string());
            row.extend(self.x[k].iter().map(f64::to_string));
            row.extend(self.xhat[k].iter().map(f64::to_string));
            row.extend(self.a[k].iter().map(f64::to_string));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Integrates plant and estimator jointly with fixed-step RK4 from `t = 0`
/// to the horizon. The Gram matrix is factored once by the caller; every stage
/// reuses that factor through triangular solves.
pub fn simulate(cfg: &SystemConfig, fact: &GramFactorization) -> Result<EstimatorTrajectory> {
    cfg.validate()?;
    let d = cfg.dim();
    if fact.spec().dim() != d {
        return Err(Error::Input(format!(
            "kernel dimension {} does not match state dimension {d}",
            fact.spec().dim()
        )));
    }
    let n = fact.len();
    let p = solve_lyapunov(&cfg.design_matrix, &cfg.lyapunov_weight)?.p;
    let a_init = cfg.initial_coefficients_for(n)?;

    let spec = *fact.spec();
    let centers = Arc::clone(fact.centers());
    let a0 = &cfg.plant_matrix;
    let design = &cfg.design_matrix;
    let coupling = a0 - design;
    let b = &cfg.input;
    let pb = &p * b;
    let gain = cfg.gain;

    let mut kvec = DVector::<f64>::zeros(n);
    let mut update = DVector::<f64>::zeros(n);
    let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let (x, rest) = y.split_at(d);
        let (xhat, a) = rest.split_at(d);
        spec.kernel_vector_into(&centers, x, kvec.as_mut_slice());
        let fhat: f64 = kvec.iter().zip(a).map(|(k, a)| k * a).sum();
        let fx = cfg.unknown.value(x);
        let mut w = 0.0;
        for i in 0..d {
            let mut plant = b[i] * fx;
            let mut est = b[i] * fhat;
            for j in 0..d {
                plant += a0[(i, j)] * x[j];
                est += design[(i, j)] * xhat[j] + coupling[(i, j)] * x[j];
            }
            dy[i] = plant;
            dy[d + i] = est;
            w += pb[i] * (x[i] - xhat[i]);
        }
        let scale = gain * w;
        let da = &mut dy[2 * d..];
        if scale == 0.0 {
            da.fill(0.0);
        } else {
            update.copy_from(&kvec);
            fact.solve_in_place(&mut update);
            for (out, u) in da.iter_mut().zip(update.iter()) {
                *out = scale * u;
            }
        }
    };

    let mut y = Vec::with_capacity(2 * d + n);
    y.extend_from_slice(cfg.x0.as_slice());
    y.extend_from_slice(cfg.xhat0.as_slice());
    y.extend_from_slice(a_init.as_slice());

    let steps = cfg.steps();
    let stride = cfg.snapshot_stride;
    let capacity = steps / stride + 1;
    let mut traj = EstimatorTrajectory {
        times: Vec::with_capacity(capacity),
        x: Vec::with_capacity(capacity),
        xhat: Vec::with_capacity(capacity),
        a: Vec::with_capacity(capacity),
        centers: Arc::clone(fact.centers()),
        snapshot_stride: stride,
        final_time: 0.0,
        final_x: Vec::new(),
        final_xhat: Vec::new(),
        final_a: DVector::zeros(0),
    };
    let record = |traj: &mut EstimatorTrajectory, t: f64, y: &[f64]| {
        traj.times.push(t);
        traj.x.push(y[..d].to_vec());
        traj.xhat.push(y[d..2 * d].to_vec());
        traj.a.push(DVector::from_column_slice(&y[2 * d..]));
    };
    record(&mut traj, 0.0, &y);

    let mut rk = Rk4::new(y.len());
    for step in 1..=steps {
        let t_prev = (step - 1) as f64 * cfg.dt;
        rk.step(&mut rhs, t_prev, &mut y, cfg.dt);
        let t = step as f64 * cfg.dt;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: t });
        }
        if step % stride == 0 {
            record(&mut traj, t, &y);
        }
    }
    traj.final_time = steps as f64 * cfg.dt;
    traj.final_x = y[..d].to_vec();
    traj.final_xhat = y[d..2 * d].to_vec();
    traj.final_a = DVector::from_column_slice(&y[2 * d..]);
    Ok(traj)
}

/// Integrates the plant alone with RK4 and returns the states at every step.
pub fn integrate_plant(cfg: &SystemConfig, x0: &[f64], dt: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    let d = cfg.dim();
    if x0.len() != d {
        return Err(Error::Input(format!("initial state has dimension {}, expected {d}", x0.len())));
    }
    let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let fx = cfg.unknown.value(y);
        for i in 0..d {
            dy[i] = cfg.input[i] * fx + (0..d).map(|j| cfg.plant_matrix[(i, j)] * y[j]).sum::<f64>();
        }
    };
    let mut rk = Rk4::new(d);
    let mut y = x0.to_vec();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(y.clone());
    for step in 0..steps {
        rk.step(&mut rhs, step as f64 * dt, &mut y, dt);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: (step + 1) as f64 * dt });
        }
        out.push(y.clone());
    }
    Ok(out)
}
