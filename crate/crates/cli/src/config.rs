use std::path::{Path, PathBuf};
use std::sync::Arc;

use rkhs_embed::analysis::{BoundingBox, SamplingMode, StudyOptions};
use rkhs_embed::dynamics::{seed_on_level, SystemConfig};
use rkhs_embed::nalgebra::{DMatrix, DVector};
use rkhs_embed::{KernelSpec, MaternOrder};
use serde::{Deserialize, Serialize};

/// The canonical configuration, printed by `--print-defaults`.
pub const DEFAULT_TOML: &str = r#"# rkhs-embed run configuration. Every key is optional; omitted keys take the
# values shown here. Unknown keys are rejected.

# Level c of the first integral (x2 + x1^2 - 0.5) exp(2 x2) = c that defines
# the closed orbit. Must lie in [-0.5, 0).
level = -0.1
# Directory that receives CSV and JSON outputs (overridden by --out).
out_dir = "out"
# Seed reserved for randomized checks; every command here is deterministic.
seed = 0

[system]
# Known linear part of the plant x' = A0 x + B x1^2.
a0 = [[0.0, 1.0], [-1.0, 0.0]]
# Hurwitz design matrix of the estimator (default A0 - I).
a = [[-1.0, 1.0], [-1.0, -1.0]]
b = [1.0, 0.0]
# Weight Q of the Lyapunov equation A^T P + P A = -Q.
q = [[1.0, 0.0], [0.0, 1.0]]
# Learning gain (>= 0).
gain = 1.0
# Plant and estimator initial states. When omitted both start at the point
# (0, x2) of the orbit with x2 > 0.
# x0 = [0.0, 0.460160919744261]
# xhat0 = [0.0, 0.460160919744261]
# Initial coefficients, one per center. Zero when omitted.
# initial_coefficients = []
dt = 0.001
horizon = 50.0
# Trajectory CSV keeps every snapshot_stride-th step.
snapshot_stride = 100

[kernel]
# Matern order, "3/2" or "5/2", used by `simulate`.
nu = "5/2"
length_scale = 0.5
# Number of centers used by `simulate`.
n = 100

[manifold]
# Maximum chord between consecutive polyline points.
resolution = 0.001
# Center placement: "uniform" in arc length or "trajectory" (plant states at
# multiples of trajectory_interval).
sampling = "uniform"
trajectory_interval = 0.05

[rates]
n_list = [40, 60, 80, 100, 140, 200]
orders = ["3/2", "5/2"]
# Inclusive range of N used for slope fits.
fit_window = [40, 200]
# Centers of the dense reference estimate; 0 disables the reference columns.
n_ref = 800

[contour]
n = 100
nu = "5/2"
# Gain of the contour run. Larger than system.gain so the estimate has
# converged on the orbit by the horizon.
gain = 10.0
# Grid covers [-half_width, half_width]^2 with grid_n points per axis.
half_width = 1.5
grid_n = 201
# Test hook: score the true function against itself.
force_exact = false
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub level: f64,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub system: SystemSection,
    pub kernel: KernelSection,
    pub manifold: ManifoldSection,
    pub rates: RatesSection,
    pub contour: ContourSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub a0: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub gain: f64,
    pub x0: Option<Vec<f64>>,
    pub xhat0: Option<Vec<f64>>,
    pub initial_coefficients: Option<Vec<f64>>,
    pub dt: f64,
    pub horizon: f64,
    pub snapshot_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub nu: MaternOrder,
    pub length_scale: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Uniform,
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManifoldSection {
    pub resolution: f64,
    pub sampling: Sampling,
    pub trajectory_interval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesSection {
    pub n_list: Vec<usize>,
    pub orders: Vec<MaternOrder>,
    pub fit_window: [usize; 2],
    pub n_ref: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContourSection {
    pub n: usize,
    pub nu: MaternOrder,
    pub gain: f64,
    pub half_width: f64,
    pub grid_n: usize,
    pub force_exact: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            level: -0.1,
            out_dir: PathBuf::from("out"),
            seed: 0,
            system: SystemSection::default(),
            kernel: KernelSection::default(),
            manifold: ManifoldSection::default(),
            rates: RatesSection::default(),
            contour: ContourSection::default(),
        }
    }
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            a0: vec![vec![0.0, 1.0], vec![-1.0, 0.0]],
            a: vec![vec![-1.0, 1.0], vec![-1.0, -1.0]],
            b: vec![1.0, 0.0],
            q: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            gain: 1.0,
            x0: None,
            xhat0: None,
            initial_coefficients: None,
            dt: 1e-3,
            horizon: 50.0,
            snapshot_stride: 100,
        }
    }
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            nu: MaternOrder::FiveHalves,
            length_scale: 0.5,
            n: 100,
        }
    }
}

impl Default for ManifoldSection {
    fn default() -> Self {
        Self {
            resolution: 1e-3,
            sampling: Sampling::Uniform,
            trajectory_interval: 0.05,
        }
    }
}

impl Default for RatesSection {
    fn default() -> Self {
        Self {
            n_list: vec![40, 60, 80, 100, 140, 200],
            orders: MaternOrder::ALL.to_vec(),
            fit_window: [40, 200],
            n_ref: 800,
        }
    }
}

impl Default for ContourSection {
    fn default() -> Self {
        Self {
            n: 100,
            nu: MaternOrder::FiveHalves,
            gain: 10.0,
            half_width: 1.5,
            grid_n: 201,
            force_exact: false,
        }
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(format!("system.{name} must be a non-empty square matrix"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// System configuration with gain `gain`.
    pub fn system_with_gain(&self, gain: f64) -> Result<SystemConfig, String> {
        let s = &self.system;
        let mut cfg = SystemConfig::planar(self.level).map_err(|e| format!("level: {e}"))?;
        cfg.plant_matrix = matrix("a0", &s.a0)?;
        cfg.design_matrix = matrix("a", &s.a)?;
        cfg.lyapunov_weight = matrix("q", &s.q)?;
        cfg.input = DVector::from_column_slice(&s.b);
        if cfg.plant_matrix.nrows() != 2 {
            return Err("system.a0 must be 2x2: the unknown x1^2 drives a planar plant".into());
        }
        cfg.gain = gain;
        let seed = seed_on_level(self.level).map_err(|e| format!("level: {e}"))?;
        cfg.x0 = DVector::from_column_slice(s.x0.as_deref().unwrap_or(&seed));
        cfg.xhat0 = DVector::from_column_slice(s.xhat0.as_deref().unwrap_or(cfg.x0.as_slice()));
        cfg.initial_coefficients = s.initial_coefficients.as_deref().map(DVector::from_column_slice);
        cfg.dt = s.dt;
        cfg.horizon = s.horizon;
        cfg.snapshot_stride = s.snapshot_stride;
        cfg.unknown = Arc::new(|x: &[f64]| x[0] * x[0]);
        cfg.validate().map_err(|e| format!("system: {e}"))?;
        Ok(cfg)
    }

    pub fn system(&self) -> Result<SystemConfig, String> {
        self.system_with_gain(self.system.gain)
    }

    pub fn kernel(&self, order: MaternOrder) -> Result<KernelSpec, String> {
        KernelSpec::new(order, self.kernel.length_scale, 2).map_err(|e| format!("kernel: {e}"))
    }

    pub fn sampling(&self) -> SamplingMode {
        match self.manifold.sampling {
            Sampling::Uniform => SamplingMode::Uniform,
            Sampling::Trajectory => SamplingMode::Trajectory {
                interval: self.manifold.trajectory_interval,
            },
        }
    }

    pub fn study_options(&self) -> Result<StudyOptions, String> {
        let r = &self.rates;
        if r.fit_window[0] > r.fit_window[1] {
            return Err("rates.fit_window must be [low, high] with low <= high".into());
        }
        Ok(StudyOptions {
            n_list: r.n_list.clone(),
            orders: r.orders.clone(),
            length_scale: self.kernel.length_scale,
            fit_window: (r.fit_window[0], r.fit_window[1]),
            n_ref: (r.n_ref > 0).then_some(r.n_ref),
            sampling: self.sampling(),
        })
    }

    pub fn contour_box(&self) -> BoundingBox {
        BoundingBox::square(self.contour.half_width)
    }
}
