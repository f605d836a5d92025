//! A closed catalog of convex functions exposing evaluation and exact unit
//! proximal mappings. Conjugate proximal mappings come from the Moreau
//! decomposition `prox_f(x) + prox_{f*}(x) = x`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::conic::SubspaceBasis;
use crate::error::{Error, Result};
use crate::linalg;

/// Membership tolerance for indicator evaluation.
pub const TAU_DOM: f64 = 1e-9;

/// One coordinate of a separable convex piecewise-linear function: strictly
/// increasing breakpoints and nondecreasing slopes (one more slope than
/// breakpoints). The function value is anchored to zero at the first
/// breakpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearCoord {
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl PiecewiseLinearCoord {
    fn validate(&self) -> Result<()> {
        if self.breakpoints.is_empty() || self.slopes.len() != self.breakpoints.len() + 1 {
            return Err(Error::Construction(
                "piecewise linear coordinate needs k breakpoints and k+1 slopes".into(),
            ));
        }
        if self.breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Construction(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        if self.slopes.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Construction(
                "slopes must be nondecreasing (convexity)".into(),
            ));
        }
        if self
            .breakpoints
            .iter()
            .chain(self.slopes.iter())
            .any(|t| !t.is_finite())
        {
            return Err(Error::Construction(
                "breakpoints and slopes must be finite".into(),
            ));
        }
        Ok(())
    }

    /// prox of `scale * f` at `x`; the inverse of `y + scale * df(y)`.
    fn prox(&self, x: f64, scale: f64) -> f64 {
        let bp = &self.breakpoints;
        let s = |k: usize| scale * self.slopes[k];
        let m = bp.len();
        if x < bp[0] + s(0) {
            return x - s(0);
        }
        for j in 0..m {
            if x <= bp[j] + s(j + 1) {
                return bp[j];
            }
            if j + 1 < m && x < bp[j + 1] + s(j + 1) {
                return x - s(j + 1);
            }
        }
        x - s(m)
    }

    /// Value with `f(breakpoints[0]) = 0`.
    fn eval(&self, x: f64) -> f64 {
        let bp = &self.breakpoints;
        if x <= bp[0] {
            return self.slopes[0] * (x - bp[0]);
        }
        let mut acc = 0.0;
        for j in 0..bp.len() {
            let seg_end = if j + 1 < bp.len() {
                bp[j + 1]
            } else {
                f64::INFINITY
            };
            if x <= seg_end {
                return acc + self.slopes[j + 1] * (x - bp[j]);
            }
            acc += self.slopes[j + 1] * (bp[j + 1] - bp[j]);
        }
        acc
    }
}

/// A convex function from the catalog, presented through evaluation and its
/// unit proximal mapping. Values are immutable after construction and safe
/// to share across concurrent runs.
#[derive(Debug, Clone)]
pub enum ProxFunction {
    IndicatorSubspace(SubspaceBasis),
    IndicatorAffine {
        /// Least-norm point of the affine set; orthogonal to the directions.
        anchor: DVector<f64>,
        directions: SubspaceBasis,
    },
    IndicatorOrthant {
        n: usize,
    },
    /// Indicator of `[1, inf) x R^{n-1}_+`.
    IndicatorShiftedOrthant {
        n: usize,
    },
    IndicatorPolarOf(Box<ProxFunction>),
    /// `x -> x'Qx/2 + c'x` with `Q` symmetric positive semidefinite.
    Quadratic {
        q: DMatrix<f64>,
        c: DVector<f64>,
        /// Factorization of `I + Q`, done once and reused by every prox call.
        factor: Cholesky<f64, Dyn>,
    },
    /// `x -> lambda * ||x||_1`.
    ScaledL1 {
        lambda: f64,
        n: usize,
    },
    SeparablePiecewiseLinear {
        coords: Vec<PiecewiseLinearCoord>,
    },
}

impl ProxFunction {
    pub fn indicator_subspace(columns: &DMatrix<f64>) -> Self {
        ProxFunction::IndicatorSubspace(SubspaceBasis::new(columns))
    }

    pub fn indicator_subspace_basis(basis: SubspaceBasis) -> Self {
        ProxFunction::IndicatorSubspace(basis)
    }

    pub fn indicator_affine(point: DVector<f64>, columns: &DMatrix<f64>) -> Result<Self> {
        if columns.ncols() > 0 && columns.nrows() != point.len() {
            return Err(Error::DimensionMismatch {
                expected: point.len(),
                got: columns.nrows(),
            });
        }
        let directions = if columns.ncols() == 0 {
            SubspaceBasis::zero(point.len())
        } else {
            SubspaceBasis::new(columns)
        };
        let anchor = directions.project_complement(&point);
        Ok(ProxFunction::IndicatorAffine { anchor, directions })
    }

    pub fn indicator_orthant(n: usize) -> Self {
        ProxFunction::IndicatorOrthant { n }
    }

    pub fn indicator_shifted_orthant(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Construction(
                "shifted orthant needs dimension >= 1".into(),
            ));
        }
        Ok(ProxFunction::IndicatorShiftedOrthant { n })
    }

    /// Indicator of the polar of the cone that `inner` is the indicator of.
    pub fn indicator_polar_of(inner: ProxFunction) -> Result<Self> {
        if !inner.is_cone_indicator() {
            return Err(Error::Construction(
                "polar indicators require a cone indicator underneath".into(),
            ));
        }
        Ok(ProxFunction::IndicatorPolarOf(Box::new(inner)))
    }

    pub fn quadratic(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() || q.nrows() != c.len() {
            return Err(Error::DimensionMismatch {
                expected: c.len(),
                got: q.nrows(),
            });
        }
        if !linalg::is_symmetric_psd(&q) {
            return Err(Error::Construction(
                "quadratic catalog entries need a symmetric PSD matrix".into(),
            ));
        }
        let shifted = &q + DMatrix::identity(q.nrows(), q.nrows());
        let factor = Cholesky::new(shifted)
            .ok_or_else(|| Error::Construction("failed to factor I + Q".into()))?;
        Ok(ProxFunction::Quadratic { q, c, factor })
    }

    pub fn scaled_l1(lambda: f64, n: usize) -> Result<Self> {
        if lambda.is_nan() || lambda < 0.0 {
            return Err(Error::Construction("l1 weight must be nonnegative".into()));
        }
        Ok(ProxFunction::ScaledL1 { lambda, n })
    }

    pub fn separable_piecewise_linear(coords: Vec<PiecewiseLinearCoord>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Construction(
                "separable piecewise linear needs at least one coordinate".into(),
            ));
        }
        for c in &coords {
            c.validate()?;
        }
        Ok(ProxFunction::SeparablePiecewiseLinear { coords })
    }

    pub fn dim(&self) -> usize {
        match self {
            ProxFunction::IndicatorSubspace(b) => b.ambient_dim(),
            ProxFunction::IndicatorAffine { anchor, .. } => anchor.len(),
            ProxFunction::IndicatorOrthant { n }
            | ProxFunction::IndicatorShiftedOrthant { n }
            | ProxFunction::ScaledL1 { n, .. } => *n,
            ProxFunction::IndicatorPolarOf(inner) => inner.dim(),
            ProxFunction::Quadratic { c, .. } => c.len(),
            ProxFunction::SeparablePiecewiseLinear { coords } => coords.len(),
        }
    }

    pub fn is_indicator(&self) -> bool {
        matches!(
            self,
            ProxFunction::IndicatorSubspace(_)
                | ProxFunction::IndicatorAffine { .. }
                | ProxFunction::IndicatorOrthant { .. }
                | ProxFunction::IndicatorShiftedOrthant { .. }
                | ProxFunction::IndicatorPolarOf(_)
        )
    }

    fn is_cone_indicator(&self) -> bool {
        matches!(
            self,
            ProxFunction::IndicatorSubspace(_)
                | ProxFunction::IndicatorOrthant { .. }
                | ProxFunction::IndicatorPolarOf(_)
        )
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// The unit proximal mapping `argmin_y f(y) + ||y - x||^2 / 2`. For
    /// indicators this is the metric projection.
    pub fn prox(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        Ok(self.prox_raw(x))
    }

    pub(crate) fn prox_raw(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            ProxFunction::IndicatorSubspace(b) => b.project(x),
            ProxFunction::IndicatorAffine { anchor, directions } => anchor + directions.project(x),
            ProxFunction::IndicatorOrthant { .. } => x.map(|t| t.max(0.0)),
            ProxFunction::IndicatorShiftedOrthant { .. } => {
                let mut p = x.map(|t| t.max(0.0));
                p[0] = x[0].max(1.0);
                p
            }
            ProxFunction::IndicatorPolarOf(inner) => x - inner.prox_raw(x),
            ProxFunction::Quadratic { c, factor, .. } => factor.solve(&(x - c)),
            ProxFunction::ScaledL1 { lambda, .. } => x.map(|t| soft_threshold(t, *lambda)),
            ProxFunction::SeparablePiecewiseLinear { coords } => DVector::from_iterator(
                coords.len(),
                x.iter().zip(coords.iter()).map(|(&t, c)| c.prox(t, 1.0)),
            ),
        }
    }

    /// prox of the scaled function `t * f`; only needed by the iterative
    /// inner solver of the constrained module.
    pub(crate) fn prox_scaled(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        debug_assert!(t > 0.0);
        match self {
            ProxFunction::Quadratic { q, c, .. } => {
                let shifted = q * t + DMatrix::identity(q.nrows(), q.nrows());
                let chol = Cholesky::new(shifted).expect("I + tQ is positive definite");
                chol.solve(&(x - c * t))
            }
            ProxFunction::ScaledL1 { lambda, .. } => x.map(|v| soft_threshold(v, lambda * t)),
            ProxFunction::SeparablePiecewiseLinear { coords } => DVector::from_iterator(
                coords.len(),
                x.iter().zip(coords.iter()).map(|(&v, c)| c.prox(v, t)),
            ),
            // Indicators are invariant under positive scaling.
            _ => self.prox_raw(x),
        }
    }

    /// `prox_{f*}(x) = x - prox_f(x)` by the Moreau decomposition. For cone
    /// indicators this is the projection onto the polar cone.
    pub fn conjugate_prox(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        Ok(x - self.prox_raw(x))
    }

    /// `f(x)`, with `f64::INFINITY` outside the domain. Indicator
    /// membership is decided by `dist(x, set) <= TAU_DOM`.
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match self {
            ProxFunction::Quadratic { q, c, .. } => 0.5 * x.dot(&(q * x)) + c.dot(x),
            ProxFunction::ScaledL1 { lambda, .. } => {
                lambda * x.iter().map(|t| t.abs()).sum::<f64>()
            }
            ProxFunction::SeparablePiecewiseLinear { coords } => {
                x.iter().zip(coords.iter()).map(|(&t, c)| c.eval(t)).sum()
            }
            _ => {
                let dist = (x - self.prox_raw(x)).norm();
                if dist <= TAU_DOM {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        })
    }
}

fn soft_threshold(t: f64, lambda: f64) -> f64 {
    if t > lambda {
        t - lambda
    } else if t < -lambda {
        t + lambda
    } else {
        0.0
    }
}
