//! The splitting operator `F(w) = w + prox_g(2 prox_f(w) - w) - prox_f(w)`,
//! the fixed-point iteration on it, and the primal-dual swap harness.
//!
//! Every step materializes both primal intermediates (x, y) and dual
//! intermediates (u, v): they are vector subtractions away, and they make
//! the duality relations testable on every run.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::ProxFunction;

/// One iterate of the fixed-point loop. `x`, `y`, `u`, `v` are the
/// intermediates used to produce `w` from the previous governing iterate
/// `w_prev`:
///
/// * `x = prox_f(w_prev)`, `y = prox_g(2x - w_prev)`
/// * `u = w_prev - x` (the dual iterate, `prox_{f*}(w_prev)`)
/// * `v = w - x` (so `w = x + v`, the dual counterpart of `y`)
/// * `residual = ‖w - w_prev‖`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DRState {
    pub k: usize,
    pub w: DVector<f64>,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub residual: f64,
}

/// Termination rule for the fixed-point loop.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StopRule {
    /// Threshold on `‖w_k - w_{k-1}‖`.
    pub tol: f64,
    pub max_iters: usize,
    /// Treat an exactly zero residual as termination, so that finite
    /// termination is observable as literal fixed-point equality.
    pub exact_zero: bool,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            tol: 1e-10,
            max_iters: 100_000,
            exact_zero: true,
        }
    }
}

impl StopRule {
    pub fn validate(&self) -> Result<()> {
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::Input("stop tolerance must be nonnegative".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::Input("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ResidualBelowTol,
    MaxIters,
    ExactFixedPoint,
}

/// Full iteration history. The residual sequence is the authoritative
/// record of `‖(I - F)(w_{k-1})‖`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DRTrace {
    pub w0: DVector<f64>,
    pub states: Vec<DRState>,
    pub stop_reason: StopReason,
    pub stop: StopRule,
    /// Iterations whose residual exceeded the previous one by more than
    /// 1e-9; nonexpansiveness makes the sequence nonincreasing, so these
    /// flag numerical trouble.
    pub monotonicity_warnings: Vec<usize>,
}

impl DRTrace {
    pub fn residuals(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.residual).collect()
    }

    pub fn last_w(&self) -> &DVector<f64> {
        self.states.last().map(|s| &s.w).unwrap_or(&self.w0)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("trace serializes")
    }

    /// Writes `k,residual,dist_to_Wbar` rows; the distance column is left
    /// empty when no oracle distances are supplied.
    pub fn write_csv<W: Write>(&self, mut out: W, dist: Option<&[f64]>) -> std::io::Result<()> {
        writeln!(out, "k,residual,dist_to_Wbar")?;
        for (i, s) in self.states.iter().enumerate() {
            match dist.and_then(|d| d.get(i)) {
                Some(d) => writeln!(out, "{},{:.17e},{:.17e}", s.k, s.residual, d)?,
                None => writeln!(out, "{},{:.17e},", s.k, s.residual)?,
            }
        }
        Ok(())
    }
}

/// One application of the operator through a pair of prox closures.
pub(crate) fn step_with(
    prox_f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    prox_g: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    w: &DVector<f64>,
    k: usize,
) -> DRState {
    let x = prox_f(w);
    let reflected = &x * 2.0 - w;
    let y = prox_g(&reflected);
    let w_next = w + &y - &x;
    let u = w - &x;
    let v = &w_next - &x;
    let residual = (&w_next - w).norm();
    DRState {
        k,
        w: w_next,
        x,
        y,
        u,
        v,
        residual,
    }
}

pub(crate) fn run_with(
    prox_f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    prox_g: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    w0: &DVector<f64>,
    stop: &StopRule,
) -> Result<DRTrace> {
    stop.validate()?;
    let mut states = Vec::new();
    let mut warnings = Vec::new();
    let mut w = w0.clone();
    let mut prev_residual = f64::INFINITY;
    let mut reason = StopReason::MaxIters;
    for k in 1..=stop.max_iters {
        let state = step_with(prox_f, prox_g, &w, k);
        let residual = state.residual;
        if residual > prev_residual + 1e-9 {
            warnings.push(k);
        }
        prev_residual = residual;
        w = state.w.clone();
        states.push(state);
        if residual == 0.0 && stop.exact_zero {
            reason = StopReason::ExactFixedPoint;
            break;
        }
        if residual <= stop.tol {
            reason = StopReason::ResidualBelowTol;
            break;
        }
    }
    Ok(DRTrace {
        w0: w0.clone(),
        states,
        stop_reason: reason,
        stop: *stop,
        monotonicity_warnings: warnings,
    })
}

fn check_pair(f: &ProxFunction, g: &ProxFunction, w: &DVector<f64>) -> Result<()> {
    if f.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            got: g.dim(),
        });
    }
    if w.len() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            got: w.len(),
        });
    }
    Ok(())
}

/// One application of the operator; `state.w` is `F(w)`.
pub fn dr_operator(f: &ProxFunction, g: &ProxFunction, w: &DVector<f64>) -> Result<DRState> {
    check_pair(f, g, w)?;
    Ok(step_with(&|z| f.prox_raw(z), &|z| g.prox_raw(z), w, 0))
}

/// Iterates `w <- F(w)` until the stop rule fires.
pub fn run(
    f: &ProxFunction,
    g: &ProxFunction,
    w0: &DVector<f64>,
    stop: &StopRule,
) -> Result<DRTrace> {
    check_pair(f, g, w0)?;
    run_with(&|z| f.prox_raw(z), &|z| g.prox_raw(z), w0, stop)
}

/// Result of running the iteration on `(f, g)` and on the conjugate pair
/// `(f*, g_*)` from the same start, where `g_*(u) = g*(-u)`.
///
/// The governing sequences coincide, and the dual run's intermediates are
/// recoverable from the primal ones: its x-iterate is `w_{k-1} - x_k` and
/// its y-iterate is `y_k - 2 x_k + w_{k-1}`. The maxima below record the
/// observed deviations from those three identities.
#[derive(Debug, Clone)]
pub struct DualSwapReport {
    pub primal: DRTrace,
    pub dual: DRTrace,
    pub max_w_deviation: f64,
    pub max_u_deviation: f64,
    pub max_v_deviation: f64,
}

/// Runs the primal and the swapped (conjugate) iteration side by side.
/// Conjugate proxes come from the Moreau identities
/// `prox_{f*}(z) = z - prox_f(z)` and `prox_{g_*}(z) = z + prox_g(-z)`.
pub fn dual_swap_run(
    f: &ProxFunction,
    g: &ProxFunction,
    w0: &DVector<f64>,
    stop: &StopRule,
) -> Result<DualSwapReport> {
    check_pair(f, g, w0)?;
    let primal = run_with(&|z| f.prox_raw(z), &|z| g.prox_raw(z), w0, stop)?;
    let dual = run_with(&|z| z - f.prox_raw(z), &|z| z + g.prox_raw(&(-z)), w0, stop)?;
    let mut max_w = 0.0f64;
    let mut max_u = 0.0f64;
    let mut max_v = 0.0f64;
    let common = primal.states.len().min(dual.states.len());
    for i in 0..common {
        let p = &primal.states[i];
        let d = &dual.states[i];
        let w_prev = if i == 0 {
            &primal.w0
        } else {
            &primal.states[i - 1].w
        };
        max_w = max_w.max((&d.w - &p.w).norm());
        max_u = max_u.max((&d.x - (w_prev - &p.x)).norm());
        max_v = max_v.max((&d.y - (&p.y - &p.x * 2.0 + w_prev)).norm());
    }
    Ok(DualSwapReport {
        primal,
        dual,
        max_w_deviation: max_w,
        max_u_deviation: max_u,
        max_v_deviation: max_v,
    })
}

/// Worst slack of `<F(w) - F(ŵ), w - ŵ> >= ‖F(w) - F(ŵ)‖^2` over the given
/// pairs; firm nonexpansiveness makes it nonnegative up to roundoff.
pub fn firm_nonexpansive_check(
    f: &ProxFunction,
    g: &ProxFunction,
    pairs: &[(DVector<f64>, DVector<f64>)],
) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for (w, w_hat) in pairs {
        let fw = dr_operator(f, g, w)?.w;
        let fw_hat = dr_operator(f, g, w_hat)?.w;
        let diff = &fw - &fw_hat;
        let slack = diff.dot(&(w - w_hat)) - diff.norm_squared();
        worst = worst.min(slack);
    }
    Ok(if worst.is_finite() { worst } else { 0.0 })
}

/// Optimality certificate at a (near) fixed point: with `x = prox_f(w)` and
/// `u = w - x`, both `x = prox_f(x + u)` and `x = prox_g(x - u)` must hold,
/// i.e. `u` is a subgradient of `f` and `-u` one of `g` at `x`.
#[derive(Debug, Clone)]
pub struct FixedPointCertificate {
    pub prox_f_gap: f64,
    pub prox_g_gap: f64,
    pub ok: bool,
}

pub fn fixed_point_certificate(
    f: &ProxFunction,
    g: &ProxFunction,
    w: &DVector<f64>,
    tol: f64,
) -> Result<FixedPointCertificate> {
    check_pair(f, g, w)?;
    let x = f.prox_raw(w);
    let u = w - &x;
    let prox_f_gap = (&x - f.prox_raw(&(&x + &u))).norm();
    let prox_g_gap = (&x - g.prox_raw(&(&x - &u))).norm();
    Ok(FixedPointCertificate {
        prox_f_gap,
        prox_g_gap,
        ok: prox_f_gap <= tol && prox_g_gap <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn subspace(vectors: &[&[f64]]) -> ProxFunction {
        let cols: Vec<DVector<f64>> = vectors
            .iter()
            .map(|v| DVector::from_column_slice(v))
            .collect();
        let m = DMatrix::from_columns(&cols);
        ProxFunction::indicator_subspace(&m)
    }

    fn gauss(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
    }

    #[test]
    fn operator_state_relations() {
        // w = x + u and F(w) = w + y - x = u + y = x + v.
        let f = subspace(&[&[1.0, 1.0]]);
        let g = ProxFunction::indicator_orthant(2);
        let w = DVector::from_column_slice(&[1.0, 0.0]);
        let s = dr_operator(&f, &g, &w).unwrap();
        assert!(((&s.x + &s.u) - &w).norm() < 1e-15);
        assert!(((&s.u + &s.y) - &s.w).norm() < 1e-14);
        assert!(((&s.x + &s.v) - &s.w).norm() < 1e-15);
        assert!((s.w[0] - 0.5).abs() < 1e-15 && (s.w[1] - 0.5).abs() < 1e-15);
        assert!((s.u[0] - 0.5).abs() < 1e-15 && (s.u[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn orthant_pair_is_positive_part() {
        let f = ProxFunction::indicator_orthant(4);
        let w = DVector::from_column_slice(&[1.0, -2.0, 0.5, -0.1]);
        let s = dr_operator(&f, &f, &w).unwrap();
        let expected = w.map(|t| t.max(0.0));
        assert!((s.w - expected).norm() < 1e-15);
    }

    #[test]
    fn full_subspace_pair_stops_exactly() {
        let f = subspace(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let stop = StopRule {
            tol: 1e-12,
            ..StopRule::default()
        };
        let trace = run(&f, &f, &DVector::from_column_slice(&[3.0, -4.0]), &stop).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace.stop_reason, StopReason::ExactFixedPoint);
    }

    #[test]
    fn proper_subspace_pair_stops_at_first_step() {
        let f = subspace(&[&[1.0, 2.0, -1.0]]);
        let stop = StopRule {
            tol: 1e-12,
            ..StopRule::default()
        };
        let trace = run(&f, &f, &DVector::from_column_slice(&[0.3, 1.0, 2.0]), &stop).unwrap();
        assert_eq!(trace.len(), 1);
        assert!(trace.states[0].residual <= 1e-14);
    }

    #[test]
    fn axis_instance_freezes_immediately() {
        let f = subspace(&[&[1.0, 0.0]]);
        let g = ProxFunction::indicator_orthant(2);
        let trace = run(
            &f,
            &g,
            &DVector::from_column_slice(&[1.0, 1.0]),
            &StopRule::default(),
        )
        .unwrap();
        assert_eq!(trace.stop_reason, StopReason::ExactFixedPoint);
        assert_eq!(trace.len(), 1);
        assert_eq!(trace.states[0].w.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn dual_swap_on_scalar_orthant() {
        let f = ProxFunction::indicator_orthant(1);
        let report = dual_swap_run(
            &f,
            &f,
            &DVector::from_column_slice(&[-1.0]),
            &StopRule::default(),
        )
        .unwrap();
        assert_eq!(report.primal.states[0].w[0], 0.0);
        assert_eq!(report.dual.states[0].w[0], 0.0);
        assert!(report.max_w_deviation <= 1e-15);
    }

    #[test]
    fn dual_swap_sequences_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = ProxFunction::quadratic(
            DMatrix::from_partial_diagonal(3, 3, &[1.0, 0.25, 2.0]),
            gauss(&mut rng, 3),
        )
        .unwrap();
        let g = ProxFunction::scaled_l1(0.3, 3).unwrap();
        let stop = StopRule {
            tol: 0.0,
            max_iters: 60,
            exact_zero: true,
        };
        let report = dual_swap_run(&f, &g, &gauss(&mut rng, 3), &stop).unwrap();
        assert!(report.max_w_deviation <= 1e-10);
        assert!(report.max_u_deviation <= 1e-10);
        assert!(report.max_v_deviation <= 1e-10);
    }

    #[test]
    fn firm_nonexpansiveness_zero_for_identity() {
        let f = subspace(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let pairs = vec![(
            DVector::from_column_slice(&[1.0, 2.0]),
            DVector::from_column_slice(&[-1.0, 0.5]),
        )];
        let worst = firm_nonexpansive_check(&f, &f, &pairs).unwrap();
        assert!(worst.abs() < 1e-12);
    }

    #[test]
    fn residuals_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = ProxFunction::quadratic(DMatrix::identity(4, 4) * 0.8, gauss(&mut rng, 4)).unwrap();
        let g = ProxFunction::indicator_orthant(4);
        let stop = StopRule {
            tol: 1e-14,
            max_iters: 500,
            exact_zero: true,
        };
        let trace = run(&f, &g, &gauss(&mut rng, 4), &stop).unwrap();
        assert!(trace.monotonicity_warnings.is_empty());
        let r = trace.residuals();
        for k in 1..r.len() {
            assert!(r[k] <= r[k - 1] + 1e-10);
        }
    }

    #[test]
    fn certificate_holds_at_fixed_points() {
        let f = subspace(&[&[1.0, 0.0]]);
        let g = ProxFunction::indicator_orthant(2);
        let trace = run(
            &f,
            &g,
            &DVector::from_column_slice(&[1.0, 1.0]),
            &StopRule::default(),
        )
        .unwrap();
        let cert = fixed_point_certificate(&f, &g, trace.last_w(), 1e-9).unwrap();
        assert!(cert.ok, "gaps {} {}", cert.prox_f_gap, cert.prox_g_gap);

        // Also at the converged point of a smooth pair.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = ProxFunction::quadratic(DMatrix::identity(3, 3) * 0.7, gauss(&mut rng, 3)).unwrap();
        let g = ProxFunction::scaled_l1(0.2, 3).unwrap();
        let stop = StopRule {
            tol: 1e-13,
            max_iters: 5000,
            exact_zero: true,
        };
        let trace = run(&f, &g, &gauss(&mut rng, 3), &stop).unwrap();
        let cert = fixed_point_certificate(&f, &g, trace.last_w(), 1e-9).unwrap();
        assert!(cert.ok, "gaps {} {}", cert.prox_f_gap, cert.prox_g_gap);
    }

    #[test]
    fn lipschitz_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = ProxFunction::scaled_l1(0.5, 5).unwrap();
        let g = ProxFunction::indicator_orthant(5);
        for _ in 0..200 {
            let w = gauss(&mut rng, 5);
            let w_hat = gauss(&mut rng, 5);
            let fw = dr_operator(&f, &g, &w).unwrap().w;
            let fw_hat = dr_operator(&f, &g, &w_hat).unwrap().w;
            assert!((fw - fw_hat).norm() <= (&w - &w_hat).norm() + 1e-10);
        }
    }

    #[test]
    fn trace_csv_has_expected_shape() {
        let f = ProxFunction::indicator_orthant(1);
        let trace = run(
            &f,
            &f,
            &DVector::from_column_slice(&[-1.0]),
            &StopRule::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "k,residual,dist_to_Wbar");
        assert!(lines.next().unwrap().starts_with("1,"));
    }

    #[test]
    fn invalid_stop_rule_rejected() {
        let f = ProxFunction::indicator_orthant(1);
        let stop = StopRule {
            tol: -1.0,
            ..StopRule::default()
        };
        assert!(run(&f, &f, &DVector::zeros(1), &stop).is_err());
        let stop = StopRule {
            tol: 1e-10,
            max_iters: 0,
            exact_zero: true,
        };
        assert!(run(&f, &f, &DVector::zeros(1), &stop).is_err());
    }
}
