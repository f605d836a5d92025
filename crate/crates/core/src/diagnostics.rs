//! Quantitative verification layer: empirical error-bound constants,
//! linear-rate fitting, the closed-form constants of the strongly convex
//! and diagonal-QP cases, subtransversality estimation, and small-scale
//! exact oracles (active-set and vertex enumeration).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::conic::{ConeSpec, SubspaceBasis, SupportPartition};
use crate::dr::DRTrace;
use crate::error::{Error, Result};
use crate::linalg;

/// Largest ambient dimension accepted by the enumeration oracles.
pub const MAX_ORACLE_DIM: usize = 16;

/// Distance to the fixed-point set, supplied by a caller who knows it.
pub type DistOracle<'a> = &'a dyn Fn(&DVector<f64>) -> f64;

const ORACLE_TOL: f64 = 1e-9;

/// Summary of a convergence-rate analysis of one trace.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    /// Geometric ratio fitted on the trailing residuals.
    pub fitted_rate: Option<f64>,
    /// Geometric ratio fitted on the trailing oracle distances.
    pub fitted_dist_rate: Option<f64>,
    /// sup over iterates of dist(w, fixed set) / residual.
    pub empirical_h: Option<f64>,
    pub predicted_h: Option<f64>,
    /// sqrt(1 - 1/H^2) for the best available H.
    pub rate_bound: Option<f64>,
    /// 2r/(1-r) with r = rate_bound; only reported when an oracle
    /// distance was supplied, since it is meaningless without one.
    pub r_linear_constant: Option<f64>,
    pub finite_termination: bool,
    pub notes: Vec<String>,
}

/// `H = 4 (1 + max(1/mu, 1/mu_star))`: the error-bound constant when one
/// primal function is `mu`-strongly convex relative to the primal optimal
/// set and one dual function is `mu_star`-strongly convex relative to the
/// dual one.
pub fn strong_convexity_h(mu: f64, mu_star: f64) -> Result<f64> {
    if mu.is_nan() || mu <= 0.0 || mu_star.is_nan() || mu_star <= 0.0 {
        return Err(Error::Input(
            "strong convexity constants must be positive".into(),
        ));
    }
    Ok(4.0 * (1.0 + (1.0 / mu).max(1.0 / mu_star)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LemmaOutcome {
    /// The hypothesis inequality fails for these inputs: nothing to check.
    Inadmissible,
    Holds,
    Violated,
}

/// Checks the norm bound `‖a + b‖ <= 4 (1 + 1/mu) ‖b‖` with
/// `mu = min(mu1 + mu2, mu3 + mu4)`, conditional on the hypothesis
/// `<a, b> >= (mu1 ‖c‖^2 + mu2 ‖c - b‖^2 + mu3 ‖a - c‖^2 + mu4 ‖a + b - c‖^2) / 2`.
pub fn lemma_abc_check(
    a: &DVector<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    mus: [f64; 4],
) -> LemmaOutcome {
    if mus.iter().any(|&m| m < 0.0) {
        return LemmaOutcome::Inadmissible;
    }
    let rhs = 0.5
        * (mus[0] * c.norm_squared()
            + mus[1] * (c - b).norm_squared()
            + mus[2] * (a - c).norm_squared()
            + mus[3] * (a + b - c).norm_squared());
    if a.dot(b) < rhs {
        return LemmaOutcome::Inadmissible;
    }
    let mu = (mus[0] + mus[1]).min(mus[2] + mus[3]);
    if mu <= 0.0 {
        return LemmaOutcome::Inadmissible;
    }
    let lhs = (a + b).norm();
    let bound = 4.0 * (1.0 + 1.0 / mu) * b.norm();
    if lhs <= bound + 1e-12 * (1.0 + bound) {
        LemmaOutcome::Holds
    } else {
        LemmaOutcome::Violated
    }
}

/// The diagonal bound-constrained QP `min x'diag(d)x/2 + c'x, x >= 0`,
/// restricted to the orthant piece `P_J = { w : w_J >= 0, w_{J^c} <= 0 }`.
#[derive(Debug, Clone)]
pub struct DiagQpInstance {
    pub d: DVector<f64>,
    pub c: DVector<f64>,
    /// 0-based index subset J.
    pub j: Vec<usize>,
    /// Distance cap of the capped Hoffman ratio.
    pub r: f64,
}

impl DiagQpInstance {
    pub fn validate(&self) -> Result<()> {
        let n = self.d.len();
        if self.c.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.c.len(),
            });
        }
        if !self.d.iter().all(|&v| v > 0.0) {
            return Err(Error::Input(
                "diagonal entries must be strictly positive".into(),
            ));
        }
        if self.r.is_nan() || self.r <= 0.0 {
            return Err(Error::Input("distance cap must be positive".into()));
        }
        let mut seen = vec![false; n];
        for &j in &self.j {
            if j >= n {
                return Err(Error::Input(format!("index {j} out of range")));
            }
            if seen[j] {
                return Err(Error::Input(format!("index {j} repeated")));
            }
            seen[j] = true;
        }
        Ok(())
    }

    fn membership(&self) -> Vec<bool> {
        let mut mask = vec![false; self.d.len()];
        for &j in &self.j {
            mask[j] = true;
        }
        mask
    }

    /// Whether the piece meets the solution set: `{c < 0} ⊆ J ⊆ {c <= 0}`.
    pub fn feasible_piece(&self) -> bool {
        let mask = self.membership();
        mask.iter().zip(self.c.iter()).all(|(&in_j, &cj)| {
            if cj < 0.0 {
                in_j
            } else if in_j {
                cj <= 0.0
            } else {
                true
            }
        })
    }

    /// The single root of the piece's affine residual map.
    fn residual_root(&self) -> DVector<f64> {
        let mask = self.membership();
        DVector::from_fn(self.d.len(), |i, _| {
            if mask[i] {
                -self.c[i] / self.d[i]
            } else {
                -self.c[i]
            }
        })
    }

    /// Residual `G_J(w) = (I + Q)^{-1}(M_J w + c)` for diagonal `Q`.
    fn residual(&self, w: &DVector<f64>) -> DVector<f64> {
        let mask = self.membership();
        DVector::from_fn(self.d.len(), |i, _| {
            let m = if mask[i] { self.d[i] } else { 1.0 };
            (m * w[i] + self.c[i]) / (1.0 + self.d[i])
        })
    }

    fn clamp_to_piece(&self, w: &DVector<f64>) -> DVector<f64> {
        let mask = self.membership();
        DVector::from_fn(self.d.len(), |i, _| {
            if mask[i] {
                w[i].max(0.0)
            } else {
                w[i].min(0.0)
            }
        })
    }
}

/// Closed-form relative Hoffman constant of the piece.
///
/// Feasible piece: `H = 1 + max(max_{j in J} 1/d_j, max_{j not in J} d_j)`.
/// Infeasible piece: `H = max R (1 + d_j)/|c_j|` over the offending
/// coordinates (those whose sign makes the piece miss the solution set).
pub fn diag_qp_hoffman(inst: &DiagQpInstance) -> Result<(f64, bool)> {
    inst.validate()?;
    let n = inst.d.len();
    if n == 0 {
        // The residual map vanishes identically on an empty instance.
        return Ok((0.0, true));
    }
    let mask = inst.membership();
    if inst.feasible_piece() {
        let inner = mask
            .iter()
            .zip(inst.d.iter())
            .map(|(&in_j, &dj)| if in_j { 1.0 / dj } else { dj })
            .fold(f64::NEG_INFINITY, f64::max);
        Ok((1.0 + inner, true))
    } else {
        let mut best = 0.0f64;
        for ((&in_j, &dj), &cj) in mask.iter().zip(inst.d.iter()).zip(inst.c.iter()) {
            let offending = (in_j && cj > 0.0) || (!in_j && cj < 0.0);
            if offending {
                best = best.max(inst.r * (1.0 + dj) / cj.abs());
            }
        }
        Ok((best, false))
    }
}

/// Sampling budget for [`diag_qp_hoffman_bruteforce`].
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub samples: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { samples: 100_000 }
    }
}

/// Sampled capped Hoffman ratio
/// `sup_w min(dist(w, G^{-1}(0) ∩ P_J), R) / ‖G_J(w)‖` over a random cloud
/// in the piece. This is the definitional route and serves as the oracle
/// for the closed forms; as a sampled sup it is a lower estimate.
pub fn diag_qp_hoffman_bruteforce<R: Rng>(
    inst: &DiagQpInstance,
    grid: GridSpec,
    rng: &mut R,
) -> Result<f64> {
    inst.validate()?;
    let n = inst.d.len();
    if n > 4 {
        return Err(Error::Input("brute force is restricted to n <= 4".into()));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let root = inst.residual_root();
    let feasible = inst.feasible_piece();
    let anchor = inst.clamp_to_piece(&root);
    let scales = [0.01, 0.1, 1.0, 10.0];
    let mut sup = 0.0f64;
    for s in 0..grid.samples {
        let w = if s % 5 < 4 {
            let sigma = scales[s % 5];
            let jitter = DVector::from_fn(n, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
            inst.clamp_to_piece(&(&anchor + jitter))
        } else {
            let spread = scales[(s / 5) % scales.len()];
            let raw = DVector::from_fn(n, |_, _| {
                spread * rng.sample::<f64, _>(StandardNormal).abs()
            });
            let mask = inst.membership();
            DVector::from_fn(n, |i, _| if mask[i] { raw[i] } else { -raw[i] })
        };
        let denom = inst.residual(&w).norm();
        if denom <= 1e-14 {
            continue;
        }
        let numer = if feasible {
            (&w - &root).norm().min(inst.r)
        } else {
            inst.r
        };
        sup = sup.max(numer / denom);
    }
    Ok(sup)
}

/// Fits a geometric rate on the trailing `window` residuals of a trace and,
/// when a distance oracle for the fixed-point set is supplied, measures the
/// empirical error-bound constant.
pub fn fit_rate(
    trace: &DRTrace,
    window: usize,
    dist_oracle: Option<DistOracle<'_>>,
    predicted_h: Option<f64>,
) -> Result<DiagnosticsReport> {
    if window < 2 {
        return Err(Error::Input("rate window must be at least 2".into()));
    }
    if trace.len() < window + 2 {
        return Err(Error::Input(format!(
            "trace length {} is too short for window {}",
            trace.len(),
            window
        )));
    }
    let residuals = trace.residuals();
    let mut notes = Vec::new();
    let finite_termination = residuals.contains(&0.0);

    let fitted_rate = if finite_termination {
        notes.push("residuals hit exact zero; finite termination".into());
        None
    } else {
        let tail: Vec<(f64, f64)> = trace.states[trace.len() - window..]
            .iter()
            .map(|s| (s.k as f64, s.residual.ln()))
            .collect();
        Some(log_slope(&tail).exp())
    };

    let mut empirical_h = None;
    let mut fitted_dist_rate = None;
    if let Some(dist) = dist_oracle {
        let mut sup = 0.0f64;
        let mut dists = Vec::with_capacity(trace.len());
        for (i, s) in trace.states.iter().enumerate() {
            let w_prev = if i == 0 {
                &trace.w0
            } else {
                &trace.states[i - 1].w
            };
            let d = dist(w_prev);
            if s.residual > 0.0 {
                sup = sup.max(d / s.residual);
            }
            dists.push((s.k as f64, d));
        }
        empirical_h = Some(sup);
        if sup < 1.0 {
            notes.push(format!("empirical H {sup:.3e} below 1"));
        }
        if !finite_termination && dists.iter().all(|&(_, d)| d > 0.0) {
            let tail = &dists[dists.len() - window..];
            let logs: Vec<(f64, f64)> = tail.iter().map(|&(k, d)| (k, d.ln())).collect();
            fitted_dist_rate = Some(log_slope(&logs).exp());
        }
    }

    let h_for_bound = predicted_h.or(empirical_h);
    let rate_bound = match h_for_bound {
        Some(h) if h >= 1.0 => Some((1.0 - 1.0 / (h * h)).sqrt()),
        Some(h) => {
            notes.push(format!("H = {h:.3e} < 1; rate bound undefined"));
            None
        }
        None => None,
    };
    let r_linear_constant = match (dist_oracle.is_some(), rate_bound) {
        (true, Some(r)) if r < 1.0 => Some(2.0 * r / (1.0 - r)),
        _ => None,
    };
    Ok(DiagnosticsReport {
        fitted_rate,
        fitted_dist_rate,
        empirical_h,
        predicted_h,
        rate_bound,
        r_linear_constant,
        finite_termination,
        notes,
    })
}

fn log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let kbar = points.iter().map(|p| p.0).sum::<f64>() / n;
    let ybar = points.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = points.iter().map(|p| (p.0 - kbar) * (p.1 - ybar)).sum();
    let den: f64 = points.iter().map(|p| (p.0 - kbar).powi(2)).sum();
    num / den
}

/// Sampled lower bound on the subtransversality modulus
/// `S(B|A) = sup_{x in A \ B} dist(x, A ∩ B) / dist(x, B)`.
///
/// Samples are drawn on the unit sphere of A (the ratio is scale-invariant
/// for cones). The intersection projection is exact and currently
/// available for the subspace/orthant pair only. Returns 0 when no sample
/// lands in `A \ B`, matching the convention for `A ⊆ B`.
pub fn subtransversality_estimate<R: Rng>(
    a_set: &ConeSpec,
    b_set: &ConeSpec,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if a_set.dim() != b_set.dim() {
        return Err(Error::DimensionMismatch {
            expected: a_set.dim(),
            got: b_set.dim(),
        });
    }
    let n = a_set.dim();
    let mut sup = 0.0f64;
    for _ in 0..samples {
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut x = a_set.project_raw(&z);
        let norm = x.norm();
        if norm <= 1e-12 {
            continue;
        }
        x /= norm;
        let dist_b = (&x - b_set.project_raw(&x)).norm();
        if dist_b <= 1e-12 {
            continue;
        }
        let dist_ab = match (a_set, b_set) {
            (ConeSpec::Subspace(basis), ConeSpec::Orthant { .. }) => {
                let p = project_onto_subspace_orthant(basis, &x)?;
                (&x - &p).norm()
            }
            _ => {
                return Err(Error::Input(
                    "intersection projection is only exact for subspace/orthant pairs".into(),
                ))
            }
        };
        sup = sup.max(dist_ab / dist_b);
    }
    Ok(sup)
}

/// Exact projection onto `L ∩ R^n_+` by enumerating active sets and
/// verifying the KKT conditions of the projection QP.
pub fn project_onto_subspace_orthant(
    basis: &SubspaceBasis,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = basis.ambient_dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    if n > MAX_ORACLE_DIM {
        return Err(Error::Input(format!(
            "active-set projection is restricted to n <= {MAX_ORACLE_DIM}"
        )));
    }
    let r = basis.rank();
    if r == 0 {
        return Ok(DVector::zeros(n));
    }
    if r == n {
        return Ok(x.map(|t| t.max(0.0)));
    }
    let q = basis.basis_matrix();
    let qt_x = q.transpose() * x;
    let tol = ORACLE_TOL * (1.0 + x.norm());
    for active_mask in 0u32..(1u32 << n) {
        let active: Vec<usize> = (0..n).filter(|i| active_mask & (1 << i) != 0).collect();
        let alpha = if active.is_empty() {
            qt_x.clone()
        } else {
            let qa = DMatrix::from_fn(active.len(), r, |i, j| q[(active[i], j)]);
            let gram = &qa * qa.transpose();
            let rhs = -(&qa * &qt_x);
            let lambda = linalg::least_norm_solve(&gram, &rhs);
            if (gram * &lambda - rhs).norm() > tol {
                continue;
            }
            if lambda.iter().any(|&l| l < -tol) {
                continue;
            }
            &qt_x + qa.transpose() * lambda
        };
        let z = q * &alpha;
        if active.iter().any(|&i| z[i].abs() > tol) {
            continue;
        }
        if z.iter()
            .enumerate()
            .any(|(i, &zi)| !active.contains(&i) && zi < -tol)
        {
            continue;
        }
        return Ok(z);
    }
    Err(Error::Oracle("no KKT-consistent active set found".into()))
}

fn combinations(pool: &[usize], take: usize) -> Vec<Vec<usize>> {
    if take == 0 {
        return vec![Vec::new()];
    }
    if take > pool.len() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..take).collect();
    loop {
        out.push(idx.iter().map(|&i| pool[i]).collect());
        // advance the combination cursor
        let mut i = take;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + pool.len() - take {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in (i + 1)..take {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Decides whether `{ x in span(q) : x >= 0, x_i >= 1 }` is nonempty by
/// enumerating the vertices of `{ alpha : q alpha >= 0, (q alpha)_i = 1 }`.
/// The polyhedron contains no line (q has full column rank), so it is
/// nonempty iff it has a vertex, and every vertex is cut out by the
/// equality row plus rank-1-deficient many tight inequality rows.
fn index_feasible(q: &DMatrix<f64>, i: usize) -> bool {
    let n = q.nrows();
    let r = q.ncols();
    if r == 0 {
        return false;
    }
    let pool: Vec<usize> = (0..n).filter(|&t| t != i).collect();
    for tight in combinations(&pool, r - 1) {
        let mut m = DMatrix::zeros(r, r);
        let mut rhs = DVector::zeros(r);
        for (row, &t) in tight.iter().enumerate() {
            for col in 0..r {
                m[(row, col)] = q[(t, col)];
            }
        }
        for col in 0..r {
            m[(r - 1, col)] = q[(i, col)];
        }
        rhs[r - 1] = 1.0;
        let lu = m.full_piv_lu();
        let alpha = match lu.solve(&rhs) {
            Some(a) => a,
            None => continue,
        };
        if !alpha.iter().all(|t| t.is_finite()) {
            continue;
        }
        let z = q * &alpha;
        if z.iter().all(|&t| t >= -ORACLE_TOL * (1.0 + alpha.norm())) {
            return true;
        }
    }
    false
}

/// Exact Goldman-Tucker partition of the index set by small-scale vertex
/// enumeration: `i` belongs to the support of `L` iff some `x in L` has
/// `x >= 0` and `x_i >= 1`, and likewise for the orthogonal complement.
/// Fails loudly if the two support sets do not partition `{0,..,n-1}`.
pub fn support_partition_oracle(basis: &SubspaceBasis) -> Result<SupportPartition> {
    let n = basis.ambient_dim();
    if n > MAX_ORACLE_DIM {
        return Err(Error::Input(format!(
            "support oracle is restricted to n <= {MAX_ORACLE_DIM}"
        )));
    }
    let complement = basis.orthogonal_complement();
    let q = basis.basis_matrix();
    let qc = complement.basis_matrix();
    let mut supp_l = Vec::new();
    let mut supp_lperp = Vec::new();
    let mut cert_x = DVector::zeros(n);
    let mut cert_u = DVector::zeros(n);
    for i in 0..n {
        let in_l = index_feasible(q, i);
        let in_lperp = index_feasible(qc, i);
        match (in_l, in_lperp) {
            (true, false) => supp_l.push(i),
            (false, true) => supp_lperp.push(i),
            _ => {
                return Err(Error::Oracle(format!(
                    "index {i} classified as (L: {in_l}, Lperp: {in_lperp}); \
                     supports must partition the index set"
                )))
            }
        }
    }
    // Certificates: one feasible witness per support index, summed. Each
    // witness lies in the subspace, so the sums do too.
    for &i in &supp_l {
        cert_x += witness(q, i);
    }
    for &i in &supp_lperp {
        cert_u += witness(qc, i);
    }
    Ok(SupportPartition {
        supp_l,
        supp_lperp,
        identified_at: 0,
        certificate_x: cert_x,
        certificate_u: cert_u,
    })
}

fn witness(q: &DMatrix<f64>, i: usize) -> DVector<f64> {
    let n = q.nrows();
    let r = q.ncols();
    let pool: Vec<usize> = (0..n).filter(|&t| t != i).collect();
    for tight in combinations(&pool, r - 1) {
        let mut m = DMatrix::zeros(r, r);
        let mut rhs = DVector::zeros(r);
        for (row, &t) in tight.iter().enumerate() {
            for col in 0..r {
                m[(row, col)] = q[(t, col)];
            }
        }
        for col in 0..r {
            m[(r - 1, col)] = q[(i, col)];
        }
        rhs[r - 1] = 1.0;
        if let Some(alpha) = m.full_piv_lu().solve(&rhs) {
            if !alpha.iter().all(|t| t.is_finite()) {
                continue;
            }
            let z = q * &alpha;
            if z.iter().all(|&t| t >= -ORACLE_TOL * (1.0 + alpha.norm())) {
                return z;
            }
        }
    }
    DVector::zeros(n)
}

/// Exact distance oracle for the fixed-point set
/// `(L ∩ R^n_+) + (L⊥ ∩ R^n_+)` of the subspace/orthant pair. The two
/// summands live on the complementary Goldman-Tucker support sets, so the
/// distance splits coordinate-wise across the partition.
pub struct SubspaceOrthantOracle {
    basis: SubspaceBasis,
    complement: SubspaceBasis,
    pub partition: SupportPartition,
}

impl SubspaceOrthantOracle {
    pub fn new(basis: &SubspaceBasis) -> Result<Self> {
        let partition = support_partition_oracle(basis)?;
        Ok(SubspaceOrthantOracle {
            basis: basis.clone(),
            complement: basis.orthogonal_complement(),
            partition,
        })
    }

    pub fn dist_to_fixed_points(&self, w: &DVector<f64>) -> Result<f64> {
        let n = self.basis.ambient_dim();
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: w.len(),
            });
        }
        let mut on_l = DVector::zeros(n);
        for &i in &self.partition.supp_l {
            on_l[i] = w[i];
        }
        let mut on_lperp = DVector::zeros(n);
        for &i in &self.partition.supp_lperp {
            on_lperp[i] = w[i];
        }
        let p1 = project_onto_subspace_orthant(&self.basis, &on_l)?;
        let p2 = project_onto_subspace_orthant(&self.complement, &on_lperp)?;
        Ok(((&on_l - p1).norm_squared() + (&on_lperp - p2).norm_squared()).sqrt())
    }
}

/// Exact projection onto `{ z : lo <= A z <= hi }` by enumeration of the
/// active bound pattern of each constraint row (free / at lower / at
/// upper) with KKT sign checks.
pub fn project_preimage_box(
    a: &DMatrix<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    let k = a.nrows();
    if lo.len() != k || hi.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: lo.len().max(hi.len()),
        });
    }
    if y.len() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: y.len(),
        });
    }
    if k > 10 {
        return Err(Error::Input(
            "box-preimage projection is restricted to k <= 10".into(),
        ));
    }
    if (0..k).any(|t| lo[t] > hi[t]) {
        return Err(Error::Input("box bounds are inverted".into()));
    }
    let tol = ORACLE_TOL * (1.0 + y.norm());
    let patterns = 3usize.pow(k as u32);
    for code in 0..patterns {
        let mut state = Vec::with_capacity(k);
        let mut rem = code;
        for _ in 0..k {
            state.push(rem % 3); // 0 free, 1 at lower, 2 at upper
            rem /= 3;
        }
        let active: Vec<usize> = (0..k).filter(|&t| state[t] != 0).collect();
        let z = if active.is_empty() {
            y.clone()
        } else {
            let a_act = DMatrix::from_fn(active.len(), a.ncols(), |i, j| a[(active[i], j)]);
            let target = DVector::from_fn(active.len(), |i, _| {
                if state[active[i]] == 1 {
                    lo[active[i]]
                } else {
                    hi[active[i]]
                }
            });
            let gram = &a_act * a_act.transpose();
            let rhs = &a_act * y - &target;
            let nu = linalg::least_norm_solve(&gram, &rhs);
            if (gram * &nu - &rhs).norm() > tol {
                continue;
            }
            let sign_ok = (0..active.len()).all(|i| {
                if state[active[i]] == 1 {
                    nu[i] <= tol
                } else {
                    nu[i] >= -tol
                }
            });
            if !sign_ok {
                continue;
            }
            y - a_act.transpose() * nu
        };
        let az = a * &z;
        let feasible = (0..k).all(|t| az[t] >= lo[t] - tol && az[t] <= hi[t] + tol);
        if feasible {
            return Ok(z);
        }
    }
    Err(Error::Oracle(
        "no KKT-consistent bound pattern found".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn span(vectors: &[&[f64]]) -> SubspaceBasis {
        let n = vectors[0].len();
        let vs: Vec<DVector<f64>> = vectors
            .iter()
            .map(|v| DVector::from_column_slice(v))
            .collect();
        SubspaceBasis::from_spanning(n, &vs).unwrap()
    }

    #[test]
    fn strong_convexity_constant_arithmetic() {
        assert!((strong_convexity_h(1.0, 1.0).unwrap() - 8.0).abs() < 1e-14);
        assert!((strong_convexity_h(0.5, 2.0).unwrap() - 12.0).abs() < 1e-14);
        let near_limit = strong_convexity_h(1e9, 1e9).unwrap();
        assert!((near_limit - 4.0).abs() < 1e-7);
        assert!(strong_convexity_h(0.0, 1.0).is_err());
    }

    #[test]
    fn lemma_check_trivial_cases() {
        let zero = DVector::zeros(2);
        assert_eq!(
            lemma_abc_check(&zero, &zero, &zero, [0.1, 0.1, 0.1, 0.1]),
            LemmaOutcome::Holds
        );
        let a = DVector::from_column_slice(&[1.0, 2.0]);
        // a = b = c with small moduli: hypothesis holds, bound is slack.
        assert_eq!(
            lemma_abc_check(&a, &a, &a, [0.05, 0.05, 0.05, 0.05]),
            LemmaOutcome::Holds
        );
    }

    #[test]
    fn hoffman_feasible_example() {
        let inst = DiagQpInstance {
            d: DVector::from_column_slice(&[2.0, 0.5]),
            c: DVector::from_column_slice(&[-1.0, -1.0]),
            j: vec![0, 1],
            r: 1.0,
        };
        let (h, feasible) = diag_qp_hoffman(&inst).unwrap();
        assert!(feasible);
        assert!((h - 3.0).abs() < 1e-14);
    }

    #[test]
    fn hoffman_infeasible_example() {
        let inst = DiagQpInstance {
            d: DVector::from_column_slice(&[2.0, 0.5]),
            c: DVector::from_column_slice(&[-1.0, -1.0]),
            j: vec![],
            r: 1.0,
        };
        let (h, feasible) = diag_qp_hoffman(&inst).unwrap();
        assert!(!feasible);
        assert!((h - 3.0).abs() < 1e-14);
    }

    #[test]
    fn hoffman_empty_instance_follows_zero_convention() {
        let inst = DiagQpInstance {
            d: DVector::zeros(0),
            c: DVector::zeros(0),
            j: vec![],
            r: 1.0,
        };
        let (h, feasible) = diag_qp_hoffman(&inst).unwrap();
        assert_eq!(h, 0.0);
        assert!(feasible);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let brute = diag_qp_hoffman_bruteforce(&inst, GridSpec { samples: 10 }, &mut rng).unwrap();
        assert_eq!(brute, 0.0);
    }

    #[test]
    fn hoffman_one_dimensional_bruteforce_converges() {
        let inst = DiagQpInstance {
            d: DVector::from_column_slice(&[1.0]),
            c: DVector::from_column_slice(&[-1.0]),
            j: vec![0],
            r: 1.0,
        };
        let (h, _) = diag_qp_hoffman(&inst).unwrap();
        assert!((h - 2.0).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let brute =
            diag_qp_hoffman_bruteforce(&inst, GridSpec { samples: 20_000 }, &mut rng).unwrap();
        assert!((brute - h).abs() / h < 0.05, "brute {brute} vs exact {h}");
    }

    #[test]
    fn fit_rate_on_synthetic_geometric_trace() {
        use crate::dr::{DRState, StopReason, StopRule};
        let ratio = 0.5f64;
        let mut states = Vec::new();
        for k in 1..=80usize {
            let r = ratio.powi(k as i32);
            states.push(DRState {
                k,
                w: DVector::zeros(1),
                x: DVector::zeros(1),
                y: DVector::zeros(1),
                u: DVector::zeros(1),
                v: DVector::zeros(1),
                residual: r,
            });
        }
        let trace = DRTrace {
            w0: DVector::zeros(1),
            states,
            stop_reason: StopReason::MaxIters,
            stop: StopRule::default(),
            monotonicity_warnings: vec![],
        };
        let report = fit_rate(&trace, 50, None, None).unwrap();
        assert!((report.fitted_rate.unwrap() - ratio).abs() < 1e-6);
        assert!(!report.finite_termination);
    }

    #[test]
    fn fit_rate_flags_finite_termination() {
        use crate::dr::{run, DRState, StopReason, StopRule};
        use crate::prox::ProxFunction;
        let f = ProxFunction::indicator_orthant(2);
        let trace = run(
            &f,
            &f,
            &DVector::from_column_slice(&[1.0, -1.0]),
            &StopRule::default(),
        )
        .unwrap();
        // A single exact step is too short for any window.
        assert!(fit_rate(&trace, 2, None, None).is_err());

        // Padded synthetic trace ending in an exact zero residual.
        let mut states = Vec::new();
        for k in 1..=10usize {
            states.push(DRState {
                k,
                w: DVector::zeros(1),
                x: DVector::zeros(1),
                y: DVector::zeros(1),
                u: DVector::zeros(1),
                v: DVector::zeros(1),
                residual: if k == 10 { 0.0 } else { 0.5f64.powi(k as i32) },
            });
        }
        let trace = DRTrace {
            w0: DVector::zeros(1),
            states,
            stop_reason: StopReason::ExactFixedPoint,
            stop: StopRule::default(),
            monotonicity_warnings: vec![],
        };
        let report = fit_rate(&trace, 4, None, None).unwrap();
        assert!(report.finite_termination);
        assert!(report.fitted_rate.is_none());
    }

    #[test]
    fn subtransversality_hand_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let axis = ConeSpec::subspace(span(&[&[1.0, 0.0]]));
        let orthant = ConeSpec::orthant(2);
        let s = subtransversality_estimate(&axis, &orthant, 2000, &mut rng).unwrap();
        assert!((1.0 - 0.01..=1.0 + 1e-9).contains(&s), "got {s}");

        let diag = ConeSpec::subspace(span(&[&[1.0, -1.0]]));
        let s = subtransversality_estimate(&diag, &orthant, 100_000, &mut rng).unwrap();
        let sqrt2 = 2.0f64.sqrt();
        assert!((sqrt2 - 0.01..=sqrt2 + 1e-9).contains(&s), "got {s}");

        // A ⊆ B: the zero subspace never produces a sample outside B.
        let zero = ConeSpec::subspace(SubspaceBasis::zero(2));
        let s = subtransversality_estimate(&zero, &orthant, 100, &mut rng).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn cone_projection_matches_small_cases() {
        // L = span{(1,1)}: the cone L ∩ R^2_+ is the ray through (1,1).
        let basis = span(&[&[1.0, 1.0]]);
        let p = project_onto_subspace_orthant(&basis, &DVector::from_column_slice(&[1.0, 0.0]))
            .unwrap();
        assert!((p[0] - 0.5).abs() < 1e-9 && (p[1] - 0.5).abs() < 1e-9);

        // L = span{(1,-1)}: the cone is {0}.
        let basis = span(&[&[1.0, -1.0]]);
        let p = project_onto_subspace_orthant(&basis, &DVector::from_column_slice(&[3.0, 1.0]))
            .unwrap();
        assert!(p.norm() < 1e-9);
    }

    #[test]
    fn support_oracle_hand_instances() {
        let part = support_partition_oracle(&span(&[&[1.0, 0.0]])).unwrap();
        assert_eq!(part.supp_l, vec![0]);
        assert_eq!(part.supp_lperp, vec![1]);

        let part = support_partition_oracle(&SubspaceBasis::zero(3)).unwrap();
        assert!(part.supp_l.is_empty());
        assert_eq!(part.supp_lperp.len(), 3);

        let part = support_partition_oracle(&SubspaceBasis::full(3)).unwrap();
        assert_eq!(part.supp_l.len(), 3);
        assert!(part.supp_lperp.is_empty());

        let part = support_partition_oracle(&span(&[&[1.0, -1.0, 0.0]])).unwrap();
        assert!(part.supp_l.is_empty());
        assert_eq!(part.supp_lperp, vec![0, 1, 2]);
    }

    #[test]
    fn support_oracle_certificates_are_complementary() {
        let basis = span(&[&[1.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 1.0, -1.0]]);
        let part = support_partition_oracle(&basis).unwrap();
        assert_eq!(part.supp_l, vec![0, 1]);
        assert_eq!(part.supp_lperp, vec![2, 3]);
        assert!(part.certificate_x.dot(&part.certificate_u).abs() < 1e-9);
        for &i in &part.supp_l {
            assert!(part.certificate_x[i] > 0.0);
        }
    }

    #[test]
    fn fixed_point_distance_on_axis_instance() {
        let oracle = SubspaceOrthantOracle::new(&span(&[&[1.0, 0.0]])).unwrap();
        // (1,1) = (1,0) + (0,1) is a fixed point.
        let d = oracle
            .dist_to_fixed_points(&DVector::from_column_slice(&[1.0, 1.0]))
            .unwrap();
        assert!(d < 1e-9);
        // (-1,0) is distance 1 from the set.
        let d = oracle
            .dist_to_fixed_points(&DVector::from_column_slice(&[-1.0, 0.0]))
            .unwrap();
        assert!((d - 1.0).abs() < 1e-9);
    }

    #[test]
    fn preimage_box_projection() {
        // A = I: plain box projection.
        let a = DMatrix::identity(2, 2);
        let lo = DVector::from_column_slice(&[0.0, 0.0]);
        let hi = DVector::from_column_slice(&[1.0, 1.0]);
        let y = DVector::from_column_slice(&[2.0, -0.5]);
        let z = project_preimage_box(&a, &lo, &hi, &y).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-9 && z[1].abs() < 1e-9);

        // A = [1 1]: slab 0 <= x + y <= 1.
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let lo = DVector::from_column_slice(&[0.0]);
        let hi = DVector::from_column_slice(&[1.0]);
        let y = DVector::from_column_slice(&[1.0, 1.0]);
        let z = project_preimage_box(&a, &lo, &hi, &y).unwrap();
        assert!((z[0] - 0.5).abs() < 1e-9 && (z[1] - 0.5).abs() < 1e-9);
    }
}
