//! Closed-form Matérn kernels and the smoothness bookkeeping that ties a
//! kernel order to Sobolev exponents on a submanifold.
//!
//! Both kernels are normalized, `K(x, x) = 1`, and radial in `r = |x - y|`:
//!
//! ```text
//! K_{3/2}(r) = (1 + √3 r / l) exp(-√3 r / l)
//! K_{5/2}(r) = (1 + √5 r / l + 5 r² / (3 l²)) exp(-√5 r / l)
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rkhs::CenterSet;

/// Margin subtracted from the supremum Sobolev exponent `2ν - d/2`.
pub const TAU_MARGIN: f64 = 1e-6;

/// Half-integer Matérn orders with closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MaternOrder {
    #[serde(rename = "3/2")]
    ThreeHalves,
    #[serde(rename = "5/2")]
    FiveHalves,
}

impl MaternOrder {
    pub const ALL: [MaternOrder; 2] = [MaternOrder::ThreeHalves, MaternOrder::FiveHalves];

    pub fn nu(self) -> f64 {
        match self {
            MaternOrder::ThreeHalves => 1.5,
            MaternOrder::FiveHalves => 2.5,
        }
    }

    pub fn from_nu(nu: f64) -> Result<Self> {
        if nu == 1.5 {
            Ok(MaternOrder::ThreeHalves)
        } else if nu == 2.5 {
            Ok(MaternOrder::FiveHalves)
        } else {
            Err(Error::Input(format!(
                "unsupported Matern order {nu}; expected 1.5 or 2.5"
            )))
        }
    }

    /// Worst-case log-log slope magnitude of the sup-norm error against `N`
    /// for a closed curve in the plane: 1 for ν = 3/2, 2 for ν = 5/2.
    pub fn slope_bound(self) -> f64 {
        match self {
            MaternOrder::ThreeHalves => 1.0,
            MaternOrder::FiveHalves => 2.0,
        }
    }
}

impl std::fmt::Display for MaternOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaternOrder::ThreeHalves => f.write_str("3/2"),
            MaternOrder::FiveHalves => f.write_str("5/2"),
        }
    }
}

/// A normalized Matérn kernel on `R^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    order: MaternOrder,
    length_scale: f64,
    dim: usize,
}

impl KernelSpec {
    pub fn new(order: MaternOrder, length_scale: f64, dim: usize) -> Result<Self> {
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(Error::Input(format!(
                "length scale must be positive, got {length_scale}"
            )));
        }
        if dim == 0 {
            return Err(Error::Input("ambient dimension must be at least 1".into()));
        }
        Ok(Self {
            order,
            length_scale,
            dim,
        })
    }

    pub fn order(&self) -> MaternOrder {
        self.order
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Kernel value as a function of the distance `r >= 0`.
    #[inline]
    pub fn radial(&self, r: f64) -> f64 {
        match self.order {
            MaternOrder::ThreeHalves => {
                let z = 3f64.sqrt() * r / self.length_scale;
                (1.0 + z) * (-z).exp()
            }
            MaternOrder::FiveHalves => {
                let z = 5f64.sqrt() * r / self.length_scale;
                (1.0 + z + z * z / 3.0) * (-z).exp()
            }
        }
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.radial(distance(x, y))
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        Ok(self.eval_unchecked(x, y))
    }

    /// `[K(ξ_i, x)]_i` over the centers.
    pub fn kernel_vector(&self, centers: &CenterSet, x: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        self.check_centers(centers)?;
        let mut out = DVector::zeros(centers.len());
        self.kernel_vector_into(centers, x, out.as_mut_slice());
        Ok(out)
    }

    /// Allocation-free variant used on hot paths; dimensions are not checked.
    #[inline]
    pub(crate) fn kernel_vector_into(&self, centers: &CenterSet, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), centers.len());
        for (o, c) in out.iter_mut().zip(centers.iter()) {
            *o = self.eval_unchecked(c, x);
        }
    }

    /// Symmetric Gram matrix `G[i][j] = K(ξ_i, ξ_j)` with unit diagonal.
    pub fn gram_matrix(&self, centers: &CenterSet) -> Result<DMatrix<f64>> {
        self.check_centers(centers)?;
        let n = centers.len();
        let mut g = DMatrix::identity(n, n);
        for i in 0..n {
            for j in 0..i {
                let v = self.eval_unchecked(centers.point(i), centers.point(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Ok(g)
    }

    /// `sup_x sqrt(K(x, x))`, which is 1 for every normalized Matérn kernel.
    pub fn sup_kernel_bound(&self) -> f64 {
        self.radial(0.0).sqrt()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Input(format!(
                "point has dimension {}, kernel expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn check_centers(&self, centers: &CenterSet) -> Result<()> {
        if centers.dim() != self.dim {
            return Err(Error::Input(format!(
                "centers have dimension {}, kernel expects {}",
                centers.dim(),
                self.dim
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Sobolev exponents attached to a kernel restricted to a `k`-dimensional
/// submanifold of `R^d`.
///
/// `tau` is the ambient Sobolev order of the native space, `s = tau - (d - k)/2`
/// the order after restriction, and `mu` the order of the norm in which the
/// error is measured. The predicted decay exponent in the fill distance is
/// `s - mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParameters {
    pub nu: f64,
    pub tau: f64,
    pub ambient_dim: usize,
    pub manifold_dim: usize,
    pub s: f64,
    pub mu: f64,
    pub bound_exponent: f64,
}

impl RateParameters {
    pub fn new(nu: f64, tau: f64, ambient_dim: usize, manifold_dim: usize, mu: f64) -> Result<Self> {
        if ambient_dim == 0 || manifold_dim == 0 || manifold_dim > ambient_dim {
            return Err(Error::Input(format!(
                "need 1 <= k <= d, got k = {manifold_dim}, d = {ambient_dim}"
            )));
        }
        let d = ambient_dim as f64;
        let k = manifold_dim as f64;
        if tau <= d / 2.0 {
            return Err(Error::Input(format!("tau = {tau} must exceed d/2 = {}", d / 2.0)));
        }
        let s = tau - (d - k) / 2.0;
        if mu < 0.0 || mu > s {
            return Err(Error::Input(format!("mu = {mu} must lie in [0, s = {s}]")));
        }
        Ok(Self {
            nu,
            tau,
            ambient_dim,
            manifold_dim,
            s,
            mu,
            bound_exponent: s - mu,
        })
    }

    /// Defaults for a Matérn kernel: `tau = 2ν - d/2 - TAU_MARGIN` and the
    /// smallest admissible measurement order `mu = k/2`.
    pub fn for_kernel(spec: &KernelSpec, manifold_dim: usize) -> Result<Self> {
        let nu = spec.order().nu();
        let d = spec.dim() as f64;
        let tau = 2.0 * nu - d / 2.0 - TAU_MARGIN;
        Self::new(nu, tau, spec.dim(), manifold_dim, manifold_dim as f64 / 2.0)
    }
}
