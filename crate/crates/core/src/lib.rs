//! RKHS-embedded adaptive estimation of an unknown scalar nonlinearity in an
//! ODE, its coefficient-coordinate realization over a finite center set, and
//! a harness measuring how the approximation error decays with the fill
//! distance of the centers on an invariant curve.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod kernels;
pub mod manifold;
pub mod ode;
pub mod par;
pub mod rkhs;

pub use nalgebra;

pub use error::{Error, Result};
pub use kernels::{KernelSpec, MaternOrder, RateParameters};
pub use rkhs::{CenterSet, GramFactorization, RkhsFunction, ScalarField, SharedField};
