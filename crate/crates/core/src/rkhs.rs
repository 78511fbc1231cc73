//! Finite-dimensional subspaces `H_n = span{K(ξ_i, ·)}` of a Matérn native space.
//!
//! For a finite center set, orthogonal projection onto `H_n` coincides with
//! interpolation at the centers, so `project` is implemented as restriction to
//! the centers followed by a Gram solve.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kernels::{distance, KernelSpec};

/// Default upper bound on the diagonal regularization of the Gram matrix.
pub const DEFAULT_JITTER_MAX: f64 = 1e-8;

/// Default relative tolerance for reproducing data at the centers.
pub const DEFAULT_TOL_INTERP: f64 = 1e-6;

/// Anything that can be evaluated pointwise.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
}

impl<F> ScalarField for F
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Shared, type-erased scalar field.
pub type SharedField = Arc<dyn ScalarField>;

/// Ordered set of pairwise-distinct centers, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterSet {
    dim: usize,
    coords: Vec<f64>,
    separation: f64,
}

impl CenterSet {
    pub fn new(dim: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::Input(format!(
                "center has dimension {}, expected {dim}",
                p.len()
            )));
        }
        Self::from_flat(dim, points.into_iter().flatten().collect())
    }

    /// Builds a center set from row-major coordinates (`dim` values per point).
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("center dimension must be at least 1".into()));
        }
        if coords.is_empty() {
            return Err(Error::Input("center set is empty".into()));
        }
        if coords.len() % dim != 0 {
            return Err(Error::Input(format!(
                "{} coordinates do not form points of dimension {dim}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Input("center coordinates must be finite".into()));
        }
        let n = coords.len() / dim;
        let mut separation = f64::INFINITY;
        for i in 0..n {
            let p = &coords[i * dim..(i + 1) * dim];
            for j in 0..i {
                separation = separation.min(distance(p, &coords[j * dim..(j + 1) * dim]));
            }
        }
        if separation == 0.0 {
            return Err(Error::Degenerate("center set contains duplicate points".into()));
        }
        Ok(Self {
            dim,
            coords,
            separation,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Minimum pairwise distance; `+inf` for a single center.
    pub fn separation(&self) -> f64 {
        self.separation
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }
}

/// Cholesky factorization of `G + jitter * I` for a fixed center set.
#[derive(Debug, Clone)]
pub struct GramFactorization {
    spec: KernelSpec,
    centers: Arc<CenterSet>,
    gram: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl GramFactorization {
    /// Factors the Gram matrix, escalating the jitter from 0 through
    /// `1e-12 * n`, `1e-11 * n`, ... up to [`DEFAULT_JITTER_MAX`].
    pub fn new(spec: KernelSpec, centers: Arc<CenterSet>) -> Result<Self> {
        Self::with_jitter_max(spec, centers, DEFAULT_JITTER_MAX)
    }

    pub fn with_jitter_max(spec: KernelSpec, centers: Arc<CenterSet>, jitter_max: f64) -> Result<Self> {
        let gram = spec.gram_matrix(&centers)?;
        let n = centers.len();
        let conditioning = || Error::Conditioning {
            n,
            min_separation: centers.separation(),
            jitter_max,
        };
        // Two centers whose kernel sections agree to rounding make G singular
        // in floating point no matter what jitter is added.
        if n > 1 && 1.0 - spec.radial(centers.separation()) <= 64.0 * f64::EPSILON {
            return Err(conditioning());
        }
        let pivot_floor = n as f64 * f64::EPSILON;
        let mut jitter = 0.0;
        loop {
            let mut shifted = gram.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    shifted[(i, i)] += jitter;
                }
            }
            if let Some(chol) = Cholesky::new(shifted) {
                let min_pivot = chol.l_dirty().diagonal().min();
                if min_pivot * min_pivot > pivot_floor {
                    return Ok(Self {
                        spec,
                        centers,
                        gram,
                        chol,
                        jitter,
                    });
                }
            }
            jitter = if jitter == 0.0 { 1e-12 * n as f64 } else { jitter * 10.0 };
            if jitter > jitter_max {
                return Err(conditioning());
            }
        }
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn centers(&self) -> &Arc<CenterSet> {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Diagonal shift actually applied.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// The unregularized Gram matrix.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `(G + jitter I)` as factored.
    pub fn regularized_gram(&self) -> DMatrix<f64> {
        let mut g = self.gram.clone();
        for i in 0..g.nrows() {
            g[(i, i)] += self.jitter;
        }
        g
    }

    /// `|L L^T - (G + jitter I)|_F / |G + jitter I|_F`.
    pub fn relative_residual(&self) -> f64 {
        let l = self.chol.l();
        let g = self.regularized_gram();
        (&l * l.transpose() - &g).norm() / g.norm()
    }

    /// Solves `(G + jitter I) a = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if rhs.len() != self.len() {
            return Err(Error::Input(format!(
                "right-hand side has length {}, expected {}",
                rhs.len(),
                self.len()
            )));
        }
        Ok(self.chol.solve(rhs))
    }

    pub(crate) fn solve_in_place(&self, rhs: &mut DVector<f64>) {
        self.chol.solve_mut(rhs);
    }

    /// Explicit `(G + jitter I)^{-1}`, symmetrized.
    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        (&inv + inv.transpose()) * 0.5
    }

    /// Interpolant of `values` at the centers.
    pub fn interpolate(&self, values: &DVector<f64>) -> Result<RkhsFunction> {
        let coefficients = self.solve(values)?;
        Ok(RkhsFunction {
            spec: self.spec,
            centers: Arc::clone(&self.centers),
            coefficients,
        })
    }

    /// Native-space norm `sqrt(a^T (G + jitter I) a)` of a function on these centers.
    pub fn native_norm(&self, f: &RkhsFunction) -> Result<f64> {
        if !same_centers(&self.centers, &f.centers) {
            return Err(Error::Input("function and factorization use different centers".into()));
        }
        let a = &f.coefficients;
        let q = a.dot(&(self.regularized_gram() * a));
        Ok(q.max(0.0).sqrt())
    }

    /// Orthogonal projection of `g` onto the span of the kernel sections,
    /// computed by interpolating `g` at the centers.
    pub fn project(&self, g: &dyn ScalarField) -> Result<RkhsFunction> {
        let values = DVector::from_iterator(self.len(), self.centers.iter().map(|c| g.value(c)));
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("projected function is not finite at every center".into()));
        }
        self.interpolate(&values)
    }
}

fn same_centers(a: &Arc<CenterSet>, b: &Arc<CenterSet>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// Factors the Gram matrix of `centers` with the default jitter schedule.
pub fn factorize(spec: KernelSpec, centers: Arc<CenterSet>) -> Result<GramFactorization> {
    GramFactorization::new(spec, centers)
}

/// `P g` for the span of kernel sections at `centers`.
pub fn project(spec: KernelSpec, centers: Arc<CenterSet>, g: &dyn ScalarField) -> Result<RkhsFunction> {
    factorize(spec, centers)?.project(g)
}

/// `x -> sum_i a_i K(ξ_i, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RkhsFunction {
    spec: KernelSpec,
    centers: Arc<CenterSet>,
    coefficients: DVector<f64>,
}

impl RkhsFunction {
    pub fn new(spec: KernelSpec, centers: Arc<CenterSet>, coefficients: DVector<f64>) -> Result<Self> {
        if coefficients.len() != centers.len() {
            return Err(Error::Input(format!(
                "{} coefficients for {} centers",
                coefficients.len(),
                centers.len()
            )));
        }
        if centers.dim() != spec.dim() {
            return Err(Error::Input(format!(
                "centers have dimension {}, kernel expects {}",
                centers.dim(),
                spec.dim()
            )));
        }
        Ok(Self {
            spec,
            centers,
            coefficients,
        })
    }

    pub fn zero(spec: KernelSpec, centers: Arc<CenterSet>) -> Result<Self> {
        let n = centers.len();
        Self::new(spec, centers, DVector::zeros(n))
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn centers(&self) -> &Arc<CenterSet> {
        &self.centers
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.spec.dim() {
            return Err(Error::Input(format!(
                "point has dimension {}, function expects {}",
                x.len(),
                self.spec.dim()
            )));
        }
        Ok(self.value_unchecked(x))
    }

    #[inline]
    fn value_unchecked(&self, x: &[f64]) -> f64 {
        self.centers
            .iter()
            .zip(self.coefficients.iter())
            .map(|(c, a)| a * self.spec.eval_unchecked(c, x))
            .sum()
    }

    /// Largest `|f(ξ_i) - values_i|` over the centers.
    pub fn max_center_residual(&self, values: &DVector<f64>) -> f64 {
        self.centers
            .iter()
            .zip(values.iter())
            .map(|(c, v)| (self.value_unchecked(c) - v).abs())
            .fold(0.0, f64::max)
    }
}

impl ScalarField for RkhsFunction {
    fn value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.spec.dim());
        self.value_unchecked(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::MaternOrder;
    use proptest::prelude::*;

    fn k32() -> KernelSpec {
        KernelSpec::new(MaternOrder::ThreeHalves, 1.0, 2).unwrap()
    }

    fn two_centers() -> Arc<CenterSet> {
        Arc::new(CenterSet::new(2, vec![vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap())
    }

    fn off_diagonal() -> f64 {
        (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp()
    }

    #[test]
    fn center_set_validation() {
        assert!(matches!(CenterSet::new(2, vec![]), Err(Error::Input(_))));
        assert!(matches!(
            CenterSet::new(2, vec![vec![1.0, 2.0], vec![1.0, 2.0]]),
            Err(Error::Degenerate(_))
        ));
        assert!(CenterSet::new(2, vec![vec![1.0]]).is_err());
        let c = CenterSet::new(2, vec![vec![0.0, 0.0], vec![3.0, 4.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(c.separation(), 1.0);
        assert_eq!(c.point(1), &[3.0, 4.0]);
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn single_center() {
        let c = Arc::new(CenterSet::new(2, vec![vec![0.2, 0.7]]).unwrap());
        let fact = factorize(k32(), c).unwrap();
        assert_eq!(fact.jitter(), 0.0);
        let f = fact.interpolate(&DVector::from_vec(vec![-3.5])).unwrap();
        assert_eq!(f.coefficients()[0], -3.5);
        assert_eq!(f.evaluate(&[0.2, 0.7]).unwrap(), -3.5);
        assert_eq!(fact.native_norm(&f).unwrap(), 3.5);

        let unit = RkhsFunction::new(k32(), Arc::clone(fact.centers()), DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(unit.evaluate(&[0.2, 0.7]).unwrap(), 1.0);
    }

    #[test]
    fn well_separated_needs_no_jitter() {
        let spec = KernelSpec::new(MaternOrder::FiveHalves, 0.5, 2).unwrap();
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![0.5 * i as f64, 0.1 * (i % 3) as f64]).collect();
        let c = Arc::new(CenterSet::new(2, pts).unwrap());
        assert!(c.separation() >= 0.5);
        let fact = factorize(spec, Arc::clone(&c)).unwrap();
        assert_eq!(fact.jitter(), 0.0);
        // brute-force check that the explicit Gram matrix is comfortably definite
        assert!(spec.gram_matrix(&c).unwrap().symmetric_eigenvalues().min() > 1e-6);
        assert!(fact.relative_residual() <= 1e-12);
    }

    #[test]
    fn near_duplicates_fail_with_conditioning_error() {
        let c = Arc::new(CenterSet::new(2, vec![vec![0.0, 0.0], vec![1e-9, 0.0]]).unwrap());
        match factorize(k32(), c) {
            Err(Error::Conditioning { n, min_separation, .. }) => {
                assert_eq!(n, 2);
                assert!((min_separation - 1e-9).abs() < 1e-20);
            }
            other => panic!("expected conditioning error, got {other:?}"),
        }
    }

    #[test]
    fn two_center_interpolant() {
        let fact = factorize(k32(), two_centers()).unwrap();
        let g = off_diagonal();
        let f = fact.interpolate(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        for a in f.coefficients().iter() {
            assert!((a - 1.0 / (1.0 + g)).abs() < 1e-14);
            assert!((a - 0.674_146_218_014_951_7).abs() < 1e-12);
        }
        assert!((f.evaluate(&[0.0, 0.0]).unwrap() - 1.0).abs() < 1e-14);
        let norm = fact.native_norm(&f).unwrap();
        let expected = (2.0 / (1.0 + g)).sqrt();
        assert!((norm - expected).abs() < 1e-14);
        assert!((norm - 1.161_159_952_818_690_2).abs() < 1e-12);
    }

    #[test]
    fn zero_data_gives_zero_function() {
        let fact = factorize(k32(), two_centers()).unwrap();
        let f = fact.interpolate(&DVector::zeros(2)).unwrap();
        assert!(f.coefficients().iter().all(|&a| a == 0.0));
        assert_eq!(f.evaluate(&[0.3, -9.0]).unwrap(), 0.0);
        assert_eq!(fact.native_norm(&f).unwrap(), 0.0);
        let p = project(k32(), two_centers(), &|_: &[f64]| 0.0).unwrap();
        assert!(p.coefficients().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn project_square_of_first_coordinate() {
        let p = project(k32(), two_centers(), &|x: &[f64]| x[0] * x[0]).unwrap();
        let g = off_diagonal();
        let a = p.coefficients();
        assert!((a[0] + g / (1.0 - g * g)).abs() < 1e-13);
        assert!((a[1] - 1.0 / (1.0 - g * g)).abs() < 1e-13);
        assert!((a[0] + 0.630_714_514_662_122_5).abs() < 1e-12);
        assert!((a[1] - 1.304_860_732_677_074_3).abs() < 1e-12);
    }

    #[test]
    fn mismatches_are_rejected() {
        let fact = factorize(k32(), two_centers()).unwrap();
        assert!(fact.interpolate(&DVector::zeros(3)).is_err());
        let other = Arc::new(CenterSet::new(2, vec![vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap());
        let f = RkhsFunction::zero(k32(), other).unwrap();
        assert!(fact.native_norm(&f).is_err());
        assert!(f.evaluate(&[0.0]).is_err());
        assert!(RkhsFunction::new(k32(), two_centers(), DVector::zeros(1)).is_err());
    }

    fn random_centers() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 1..25).prop_map(|pts| {
            let mut kept: Vec<Vec<f64>> = Vec::new();
            for p in pts {
                if kept.iter().all(|q| distance(q, &p) > 0.1) {
                    kept.push(p);
                }
            }
            kept
        })
    }

    proptest! {
        #[test]
        fn interpolation_reproduces_data(pts in random_centers(), seed in prop::collection::vec(-5.0f64..5.0, 25)) {
            let spec = KernelSpec::new(MaternOrder::FiveHalves, 0.5, 2).unwrap();
            let n = pts.len();
            let fact = factorize(spec, Arc::new(CenterSet::new(2, pts).unwrap())).unwrap();
            let v = DVector::from_iterator(n, seed.into_iter().take(n));
            let f = fact.interpolate(&v).unwrap();
            let scale = v.amax().max(f64::MIN_POSITIVE);
            prop_assert!(f.max_center_residual(&v) <= DEFAULT_TOL_INTERP * scale);
        }

        #[test]
        fn projection_is_idempotent_and_interpolatory(pts in random_centers(), w in -2.0f64..2.0) {
            let spec = KernelSpec::new(MaternOrder::ThreeHalves, 0.5, 2).unwrap();
            let fact = factorize(spec, Arc::new(CenterSet::new(2, pts).unwrap())).unwrap();
            let g = move |x: &[f64]| (w * x[0]).sin() + x[1] * x[1];
            let p1 = fact.project(&g).unwrap();
            for c in fact.centers().iter() {
                prop_assert!((p1.value(c) - g(c)).abs() < 1e-9);
            }
            let p2 = fact.project(&p1).unwrap();
            let diff = (p2.coefficients() - p1.coefficients()).amax();
            prop_assert!(diff <= 1e-10, "coefficient drift {}", diff);
        }

        #[test]
        fn norm_zero_iff_coefficients_zero(pts in random_centers(), scale in prop::sample::select(vec![0.0, 1e-3, 1.0, 7.0])) {
            let spec = KernelSpec::new(MaternOrder::ThreeHalves, 0.5, 2).unwrap();
            let n = pts.len();
            let c = Arc::new(CenterSet::new(2, pts).unwrap());
            let fact = factorize(spec, Arc::clone(&c)).unwrap();
            let a = DVector::from_fn(n, |i, _| scale * (1.0 + i as f64));
            let f = RkhsFunction::new(spec, c, a).unwrap();
            let norm = fact.native_norm(&f).unwrap();
            prop_assert_eq!(norm == 0.0, scale == 0.0);
        }
    }
}
