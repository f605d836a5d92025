//! The linearly constrained problem `min f(x) + g(y) s.t. Ax + By = b`,
//! solved by the splitting iteration `F(w) = w - Ax_+ - By_+ + b` and by
//! ADMM, with a step-by-step equivalence harness between the two.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SVD};

use crate::dr::{DRTrace, StopReason, StopRule};
use crate::error::{Error, Result};
use crate::linalg;
use crate::prox::ProxFunction;

/// Tolerance of the iterative inner solver.
pub const TAU_INNER: f64 = 1e-12;
/// Iteration budget of the iterative inner solver.
pub const INNER_BUDGET: usize = 10_000;

/// How one side's subproblem `argmin f(x) + ‖Mx - v‖^2 / 2` is solved.
/// Factorizations happen once, at problem construction.
#[derive(Debug, Clone)]
enum InnerSolver {
    /// Quadratic f with `Q + M'M` positive definite: one Cholesky solve.
    Definite(Cholesky<f64, Dyn>),
    /// Quadratic f with a singular `Q + M'M`: least-norm solution of the
    /// normal equations, with a consistency check (an inconsistent system
    /// means the subproblem has no minimizer).
    Semidefinite(SVD<f64, Dyn, Dyn>),
    /// Affine-indicator f: least-norm least squares in the affine
    /// coordinates.
    Affine {
        svd: SVD<f64, Dyn, Dyn>,
        m_anchor: DVector<f64>,
    },
    /// Indicator of a single point: the subproblem is constant.
    FixedPoint(DVector<f64>),
    /// Everything else: proximal gradient with momentum on the subproblem.
    ProxGradient { lipschitz: f64 },
}

#[derive(Debug, Clone)]
struct Side {
    matrix: DMatrix<f64>,
    solver: InnerSolver,
}

impl Side {
    fn new(f: &ProxFunction, m: &DMatrix<f64>) -> Result<Self> {
        let solver = match f {
            ProxFunction::Quadratic { q, .. } => {
                let gram = q + m.transpose() * m;
                match Cholesky::new(gram.clone()) {
                    Some(chol) => InnerSolver::Definite(chol),
                    None => InnerSolver::Semidefinite(gram.svd(true, true)),
                }
            }
            ProxFunction::IndicatorSubspace(basis) => {
                if basis.rank() == 0 {
                    InnerSolver::FixedPoint(DVector::zeros(basis.ambient_dim()))
                } else {
                    let mq = m * basis.basis_matrix();
                    InnerSolver::Affine {
                        svd: mq.svd(true, true),
                        m_anchor: DVector::zeros(m.nrows()),
                    }
                }
            }
            ProxFunction::IndicatorAffine { anchor, directions } => {
                if directions.rank() == 0 {
                    InnerSolver::FixedPoint(anchor.clone())
                } else {
                    let mq = m * directions.basis_matrix();
                    InnerSolver::Affine {
                        svd: mq.svd(true, true),
                        m_anchor: m * anchor,
                    }
                }
            }
            _ => InnerSolver::ProxGradient {
                lipschitz: linalg::operator_norm(m).powi(2),
            },
        };
        Ok(Side {
            matrix: m.clone(),
            solver,
        })
    }

    /// `argmin f(x) + ‖Mx - v‖^2 / 2`, least-norm among minimizers for the
    /// closed-form routes.
    fn solve(&self, f: &ProxFunction, v: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.solver {
            InnerSolver::Definite(chol) => {
                let rhs = match f {
                    ProxFunction::Quadratic { c, .. } => self.matrix.transpose() * v - c,
                    _ => unreachable!("definite route is quadratic-only"),
                };
                Ok(chol.solve(&rhs))
            }
            InnerSolver::Semidefinite(svd) => {
                let rhs = match f {
                    ProxFunction::Quadratic { c, .. } => self.matrix.transpose() * v - c,
                    _ => unreachable!("semidefinite route is quadratic-only"),
                };
                let cutoff = linalg::RANK_TOL * svd.singular_values.max().max(1e-300);
                let x = svd
                    .solve(&rhs, cutoff)
                    .map_err(|e| Error::Input(e.to_string()))?;
                let gram_x = match f {
                    ProxFunction::Quadratic { q, .. } => {
                        q * &x + self.matrix.transpose() * (&self.matrix * &x)
                    }
                    _ => unreachable!(),
                };
                let residual = (gram_x - &rhs).norm();
                if residual > 1e-10 * (1.0 + rhs.norm()) {
                    return Err(Error::InnerSolve { residual, iters: 0 });
                }
                Ok(x)
            }
            InnerSolver::FixedPoint(p) => Ok(p.clone()),
            InnerSolver::Affine { svd, m_anchor } => {
                let (anchor, basis) = match f {
                    ProxFunction::IndicatorSubspace(b) => (None, b),
                    ProxFunction::IndicatorAffine { anchor, directions } => {
                        (Some(anchor), directions)
                    }
                    _ => unreachable!("affine route is indicator-only"),
                };
                let cutoff = linalg::RANK_TOL * svd.singular_values.max().max(1e-300);
                let alpha = svd
                    .solve(&(v - m_anchor), cutoff)
                    .map_err(|e| Error::Input(e.to_string()))?;
                let mut x = basis.basis_matrix() * alpha;
                if let Some(p) = anchor {
                    x += p;
                }
                Ok(x)
            }
            InnerSolver::ProxGradient { lipschitz } => self.prox_gradient(f, v, *lipschitz),
        }
    }

    fn prox_gradient(
        &self,
        f: &ProxFunction,
        v: &DVector<f64>,
        lipschitz: f64,
    ) -> Result<DVector<f64>> {
        let n = self.matrix.ncols();
        if lipschitz <= 0.0 {
            // M = 0: the data term is constant, minimize f alone.
            return Ok(f.prox_scaled(&DVector::zeros(n), 1e12));
        }
        let step = 1.0 / lipschitz;
        let mut x = DVector::zeros(n);
        let mut z = x.clone();
        let mut theta = 1.0f64;
        for _ in 1..=INNER_BUDGET {
            let grad = self.matrix.transpose() * (&self.matrix * &z - v);
            let x_next = f.prox_scaled(&(&z - grad * step), step);
            let shift = (&x_next - &x).norm();
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let beta = (theta - 1.0) / theta_next;
            z = &x_next + (&x_next - &x) * beta;
            theta = theta_next;
            x = x_next;
            if shift <= TAU_INNER * (1.0 + x.norm()) {
                return Ok(x);
            }
        }
        let grad = self.matrix.transpose() * (&self.matrix * &x - v);
        let residual = (&x - f.prox_scaled(&(&x - grad * step), step)).norm() / step;
        Err(Error::InnerSolve {
            residual,
            iters: INNER_BUDGET,
        })
    }
}

/// `min f(x) + g(y)` subject to `Ax + By = b`. Inner-solve factorizations
/// are computed once here and shared immutably by all steps.
#[derive(Debug, Clone)]
pub struct ConstrainedProblem {
    f: ProxFunction,
    g: ProxFunction,
    a: DMatrix<f64>,
    b_mat: DMatrix<f64>,
    rhs: DVector<f64>,
    f_side: Side,
    g_side: Side,
}

impl ConstrainedProblem {
    pub fn new(
        f: ProxFunction,
        g: ProxFunction,
        a: DMatrix<f64>,
        b_mat: DMatrix<f64>,
        rhs: DVector<f64>,
    ) -> Result<Self> {
        if a.ncols() != f.dim() {
            return Err(Error::DimensionMismatch {
                expected: f.dim(),
                got: a.ncols(),
            });
        }
        if b_mat.ncols() != g.dim() {
            return Err(Error::DimensionMismatch {
                expected: g.dim(),
                got: b_mat.ncols(),
            });
        }
        if a.nrows() != rhs.len() || b_mat.nrows() != rhs.len() {
            return Err(Error::DimensionMismatch {
                expected: rhs.len(),
                got: a.nrows().max(b_mat.nrows()),
            });
        }
        let f_side = Side::new(&f, &a)?;
        let g_side = Side::new(&g, &b_mat)?;
        Ok(ConstrainedProblem {
            f,
            g,
            a,
            b_mat,
            rhs,
            f_side,
            g_side,
        })
    }

    pub fn f(&self) -> &ProxFunction {
        &self.f
    }

    pub fn g(&self) -> &ProxFunction {
        &self.g
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b_mat
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn constraint_dim(&self) -> usize {
        self.rhs.len()
    }

    fn check_w(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != self.rhs.len() {
            return Err(Error::DimensionMismatch {
                expected: self.rhs.len(),
                got: w.len(),
            });
        }
        Ok(())
    }
}

/// `argmin_x f(x) + ‖Ax - w‖^2 / 2` together with its image `A x_+`; the
/// prox of the image function `z -> min { f(x) : Ax = z }` evaluated at `w`
/// is exactly that image.
pub fn inner_prox_f(
    prob: &ConstrainedProblem,
    w: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    prob.check_w(w)?;
    let x = prob.f_side.solve(&prob.f, w)?;
    let ax = &prob.a * &x;
    Ok((x, ax))
}

/// One step of the constrained splitting iteration.
#[derive(Debug, Clone)]
pub struct GeneralStep {
    pub w_next: DVector<f64>,
    pub x_plus: DVector<f64>,
    pub y_plus: DVector<f64>,
    pub ax: DVector<f64>,
    pub by: DVector<f64>,
}

/// `F(w) = w - Ax_+ - By_+ + b` with
/// `x_+ = argmin f(x) + ‖Ax - w‖^2/2` and
/// `y_+ = argmin g(y) + ‖b - By - 2Ax_+ + w‖^2/2`.
pub fn general_dr_step(prob: &ConstrainedProblem, w: &DVector<f64>) -> Result<GeneralStep> {
    prob.check_w(w)?;
    let (x_plus, ax) = inner_prox_f(prob, w)?;
    let target = &prob.rhs + w - &ax * 2.0;
    let y_plus = prob.g_side.solve(&prob.g, &target)?;
    let by = &prob.b_mat * &y_plus;
    let w_next = w - &ax - &by + &prob.rhs;
    Ok(GeneralStep {
        w_next,
        x_plus,
        y_plus,
        ax,
        by,
    })
}

/// Runs the constrained iteration, recording the trace in the constraint
/// space: the trace's x is `Ax_+` and its y is `b - By_+`, so the recorded
/// states are exactly those of the unconstrained iteration on the image
/// functions. Returns the final primal pair alongside.
pub fn run_general(
    prob: &ConstrainedProblem,
    w0: &DVector<f64>,
    stop: &StopRule,
) -> Result<(DRTrace, DVector<f64>, DVector<f64>)> {
    stop.validate()?;
    prob.check_w(w0)?;
    let mut states = Vec::new();
    let mut warnings = Vec::new();
    let mut w = w0.clone();
    let mut prev_residual = f64::INFINITY;
    let mut reason = StopReason::MaxIters;
    let mut last_x = DVector::zeros(prob.f.dim());
    let mut last_y = DVector::zeros(prob.g.dim());
    for k in 1..=stop.max_iters {
        let step = general_dr_step(prob, &w)?;
        let x_img = step.ax.clone();
        let y_img = &prob.rhs - &step.by;
        let residual = (&step.w_next - &w).norm();
        if residual > prev_residual + 1e-9 {
            warnings.push(k);
        }
        prev_residual = residual;
        let u = &w - &x_img;
        let v = &step.w_next - &x_img;
        last_x = step.x_plus;
        last_y = step.y_plus;
        w = step.w_next.clone();
        states.push(crate::dr::DRState {
            k,
            w: step.w_next,
            x: x_img,
            y: y_img,
            u,
            v,
            residual,
        });
        if residual == 0.0 && stop.exact_zero {
            reason = StopReason::ExactFixedPoint;
            break;
        }
        if residual <= stop.tol {
            reason = StopReason::ResidualBelowTol;
            break;
        }
    }
    Ok((
        DRTrace {
            w0: w0.clone(),
            states,
            stop_reason: reason,
            stop: *stop,
            monotonicity_warnings: warnings,
        },
        last_x,
        last_y,
    ))
}

/// One ADMM iterate. The stored pair carries the stated index lag: state
/// `k` holds the multiplier and x-iterate of index `k` and the y-iterate of
/// index `k - 1`.
#[derive(Debug, Clone)]
pub struct ADMMState {
    pub k: usize,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub u: DVector<f64>,
    /// `‖A x_k + B y_{k-1} - b‖` for the stored pair.
    pub residual: f64,
}

impl ADMMState {
    /// Initial state from `x0` in the domain of `f` and a free multiplier.
    pub fn start(
        prob: &ConstrainedProblem,
        x0: DVector<f64>,
        u0: DVector<f64>,
    ) -> Result<ADMMState> {
        if x0.len() != prob.f.dim() {
            return Err(Error::DimensionMismatch {
                expected: prob.f.dim(),
                got: x0.len(),
            });
        }
        if u0.len() != prob.rhs.len() {
            return Err(Error::DimensionMismatch {
                expected: prob.rhs.len(),
                got: u0.len(),
            });
        }
        if !prob.f.evaluate(&x0)?.is_finite() {
            return Err(Error::Input("ADMM start must lie in dom(f)".into()));
        }
        let residual = (&prob.a * &x0 - &prob.rhs).norm();
        Ok(ADMMState {
            k: 0,
            x: x0,
            y: DVector::zeros(prob.g.dim()),
            u: u0,
            residual,
        })
    }
}

/// One ADMM step:
///
/// * `y_k   = argmin g(y) - <u_k, Ax_k + By - b> + ‖Ax_k + By - b‖^2/2`
/// * `x_k+1 = argmin f(x) - <u_k, Ax + By_k - b> + ‖Ax + By_k - b‖^2/2`
/// * `u_k+1 = u_k - Ax_k+1 - By_k + b`
///
/// The two argmins are solved through their completed-square forms, which
/// are the same inner subproblems as the splitting iteration's.
pub fn admm_step(prob: &ConstrainedProblem, state: &ADMMState) -> Result<ADMMState> {
    let y_target = &prob.rhs + &state.u - &prob.a * &state.x;
    let y_k = prob.g_side.solve(&prob.g, &y_target)?;
    let by = &prob.b_mat * &y_k;
    let x_target = &prob.rhs + &state.u - &by;
    let x_next = prob.f_side.solve(&prob.f, &x_target)?;
    let ax = &prob.a * &x_next;
    let u_next = &state.u - &ax - &by + &prob.rhs;
    let residual = (&ax + &by - &prob.rhs).norm();
    Ok(ADMMState {
        k: state.k + 1,
        x: x_next,
        y: y_k,
        u: u_next,
        residual,
    })
}

/// Runs ADMM from `(x0, u0)` and the splitting iteration from
/// `w0 = b - B y_0 + u_0` (with `y_0` the first ADMM half-step), and
/// returns the maximum deviation over all iterations between the aligned
/// triples `(x_k+1, y_k+1, u_k+1)` of the two algorithms; the splitting
/// side's multiplier is `w_k - A x_k+1`.
pub fn equivalence_run(
    prob: &ConstrainedProblem,
    x0: DVector<f64>,
    u0: DVector<f64>,
    iters: usize,
) -> Result<f64> {
    let mut admm_states = vec![ADMMState::start(prob, x0, u0)?];
    for k in 0..=iters {
        let next = admm_step(prob, &admm_states[k])?;
        admm_states.push(next);
    }
    // admm_states[j] holds (x_j, y_{j-1}, u_j): the y-iterate of index j
    // sits one state later.
    let mut w = &prob.rhs - &prob.b_mat * &admm_states[1].y + &admm_states[0].u;
    let mut max_dev = 0.0f64;
    for j in 1..=iters {
        let step = general_dr_step(prob, &w)?;
        let u_dr = &w - &step.ax;
        let dx = (&admm_states[j].x - &step.x_plus).norm_squared();
        let dy = (&admm_states[j + 1].y - &step.y_plus).norm_squared();
        let du = (&admm_states[j].u - &u_dr).norm_squared();
        max_dev = max_dev.max((dx + dy + du).sqrt());
        w = step.w_next;
    }
    Ok(max_dev)
}

/// `mu * sigma_min_plus(A)^2`: the strong-convexity constant of
/// `h(A .)` relative to preimages of sets in dom h, for `mu`-strongly
/// convex `h`. Singular values below `1e-12 * sigma_max` count as zero.
pub fn relative_sc_constant(mu: f64, a: &DMatrix<f64>) -> Result<f64> {
    if mu.is_nan() || mu <= 0.0 {
        return Err(Error::Input("mu must be positive".into()));
    }
    let sigma = linalg::smallest_positive_singular_value(a, 1e-12)
        .ok_or_else(|| Error::Input("matrix must be nonzero".into()))?;
    Ok(mu * sigma * sigma)
}

/// `L * ‖A‖^2`: the smoothness constant of `h(A .)` for `L`-smooth `h`.
pub fn smoothness_composed(l: f64, a: &DMatrix<f64>) -> f64 {
    l * linalg::operator_norm(a).powi(2)
}
