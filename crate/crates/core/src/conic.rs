//! Cone feasibility: projections, reflections, the cone form of the
//! splitting operator, and finite support identification for the pair
//! `L ∩ R^n_+` / `L⊥ ∩ R^n_+`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dr::{run_with, DRState, DRTrace, StopRule};
use crate::error::{AmbiguousSupports, Error, Result};
use crate::linalg;
use crate::prox::ProxFunction;

/// Sign threshold on `x - u` for support classification.
pub const TAU_ID: f64 = 1e-8;

/// Number of consecutive iterations a zero-free sign pattern must persist
/// before it is reported as identified.
pub const IDENTIFICATION_WINDOW: usize = 50;

/// A linear subspace of `R^n`, stored as an orthonormal basis of its
/// column span. Rank-deficient spanning sets are accepted; dependent
/// columns are dropped and counted.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    ambient: usize,
    q: DMatrix<f64>,
    dropped: usize,
}

impl SubspaceBasis {
    /// Builds the subspace spanned by the columns of `columns`.
    pub fn new(columns: &DMatrix<f64>) -> Self {
        let (q, dropped) = linalg::orthonormalize(columns);
        SubspaceBasis {
            ambient: columns.nrows(),
            q,
            dropped,
        }
    }

    /// Builds the subspace spanned by the given vectors.
    pub fn from_spanning(ambient: usize, vectors: &[DVector<f64>]) -> Result<Self> {
        for v in vectors {
            if v.len() != ambient {
                return Err(Error::DimensionMismatch {
                    expected: ambient,
                    got: v.len(),
                });
            }
        }
        if vectors.is_empty() {
            return Ok(SubspaceBasis {
                ambient,
                q: DMatrix::zeros(ambient, 0),
                dropped: 0,
            });
        }
        let cols = DMatrix::from_columns(vectors);
        Ok(SubspaceBasis::new(&cols))
    }

    /// The zero subspace `{0}`.
    pub fn zero(ambient: usize) -> Self {
        SubspaceBasis {
            ambient,
            q: DMatrix::zeros(ambient, 0),
            dropped: 0,
        }
    }

    /// The full space `R^n`.
    pub fn full(ambient: usize) -> Self {
        SubspaceBasis {
            ambient,
            q: DMatrix::identity(ambient, ambient),
            dropped: 0,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    /// How many supplied spanning columns were dropped as dependent.
    pub fn dropped_columns(&self) -> usize {
        self.dropped
    }

    /// Orthonormal basis matrix (n x rank).
    pub fn basis_matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Orthogonal projection onto the subspace. The degenerate ranks 0 and
    /// n short-circuit so that the projection is exact there.
    pub fn project(&self, z: &DVector<f64>) -> DVector<f64> {
        if self.rank() == 0 {
            return DVector::zeros(self.ambient);
        }
        if self.rank() == self.ambient {
            return z.clone();
        }
        &self.q * (self.q.transpose() * z)
    }

    /// Projection onto the orthogonal complement.
    pub fn project_complement(&self, z: &DVector<f64>) -> DVector<f64> {
        z - self.project(z)
    }

    /// Orthonormal basis of the orthogonal complement.
    pub fn orthogonal_complement(&self) -> SubspaceBasis {
        let n = self.ambient;
        if self.rank() == 0 {
            return SubspaceBasis::full(n);
        }
        if self.rank() == n {
            return SubspaceBasis::zero(n);
        }
        let mut cols = DMatrix::identity(n, n);
        for j in 0..n {
            let e = cols.column(j).into_owned();
            let p = self.project(&e);
            cols.set_column(j, &(e - p));
        }
        let (q, _) = linalg::orthonormalize(&cols);
        SubspaceBasis {
            ambient: n,
            q,
            dropped: 0,
        }
    }

    fn check_dim(&self, z: &DVector<f64>) -> Result<()> {
        if z.len() != self.ambient {
            return Err(Error::DimensionMismatch {
                expected: self.ambient,
                got: z.len(),
            });
        }
        Ok(())
    }
}

/// Closed convex cones (plus the shifted orthant `[1,∞) x R^{n-1}_+`,
/// which shares the projection machinery but is not a cone).
#[derive(Debug, Clone)]
pub enum ConeSpec {
    Subspace(SubspaceBasis),
    Orthant { n: usize },
    ShiftedOrthant { n: usize },
    PolarOf(Box<ConeSpec>),
    DualOf(Box<ConeSpec>),
}

impl ConeSpec {
    pub fn subspace(basis: SubspaceBasis) -> Self {
        ConeSpec::Subspace(basis)
    }

    pub fn orthant(n: usize) -> Self {
        ConeSpec::Orthant { n }
    }

    pub fn shifted_orthant(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Construction(
                "shifted orthant needs dimension >= 1".into(),
            ));
        }
        Ok(ConeSpec::ShiftedOrthant { n })
    }

    /// Polar cone. Only defined when the base set is a cone.
    pub fn polar_of(inner: ConeSpec) -> Result<Self> {
        if !inner.is_cone() {
            return Err(Error::Construction(
                "polar is only defined for cones".into(),
            ));
        }
        Ok(ConeSpec::PolarOf(Box::new(inner)))
    }

    /// Dual cone `C* = -C°`. Only defined when the base set is a cone.
    pub fn dual_of(inner: ConeSpec) -> Result<Self> {
        if !inner.is_cone() {
            return Err(Error::Construction("dual is only defined for cones".into()));
        }
        Ok(ConeSpec::DualOf(Box::new(inner)))
    }

    pub fn is_cone(&self) -> bool {
        !matches!(self, ConeSpec::ShiftedOrthant { .. })
    }

    pub fn dim(&self) -> usize {
        match self {
            ConeSpec::Subspace(b) => b.ambient_dim(),
            ConeSpec::Orthant { n } | ConeSpec::ShiftedOrthant { n } => *n,
            ConeSpec::PolarOf(c) | ConeSpec::DualOf(c) => c.dim(),
        }
    }

    /// Metric projection onto the set. Polars and duals go through the
    /// Moreau decomposition of the base cone's projector.
    pub fn project(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        Ok(self.project_raw(z))
    }

    pub(crate) fn project_raw(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            ConeSpec::Subspace(b) => b.project(z),
            ConeSpec::Orthant { .. } => z.map(|t| t.max(0.0)),
            ConeSpec::ShiftedOrthant { .. } => {
                let mut p = z.map(|t| t.max(0.0));
                p[0] = z[0].max(1.0);
                p
            }
            ConeSpec::PolarOf(c) => z - c.project_raw(z),
            ConeSpec::DualOf(c) => z + c.project_raw(&(-z)),
        }
    }

    /// The indicator function of this set as a catalog entry, when the
    /// catalog can represent it.
    pub fn indicator(&self) -> Result<ProxFunction> {
        match self {
            ConeSpec::Subspace(b) => Ok(ProxFunction::indicator_subspace_basis(b.clone())),
            ConeSpec::Orthant { n } => Ok(ProxFunction::indicator_orthant(*n)),
            ConeSpec::ShiftedOrthant { n } => ProxFunction::indicator_shifted_orthant(*n),
            ConeSpec::PolarOf(c) => ProxFunction::indicator_polar_of(c.indicator()?),
            ConeSpec::DualOf(c) => match c.as_ref() {
                // self-dual / negation-symmetric cases
                ConeSpec::Orthant { n } => Ok(ProxFunction::indicator_orthant(*n)),
                ConeSpec::Subspace(b) => ProxFunction::indicator_polar_of(
                    ProxFunction::indicator_subspace_basis(b.clone()),
                ),
                _ => Err(Error::Construction(
                    "no catalog indicator for this dual cone".into(),
                )),
            },
        }
    }
}

/// One application of the cone splitting operator
/// `F(w) = (w + R_K(R_C(w))) / 2`, together with the Moreau decomposition
/// of `w` along `C` and its polar.
#[derive(Debug, Clone)]
pub struct ConeDRStep {
    pub state: DRState,
    pub w_cone: DVector<f64>,
    pub w_polar: DVector<f64>,
}

/// Applies `F(w) = (w + R_K(R_C(w))) / 2` through the reflection form.
pub fn cone_dr_operator(c: &ConeSpec, k: &ConeSpec, w: &DVector<f64>) -> Result<ConeDRStep> {
    if c.dim() != k.dim() {
        return Err(Error::DimensionMismatch {
            expected: c.dim(),
            got: k.dim(),
        });
    }
    if w.len() != c.dim() {
        return Err(Error::DimensionMismatch {
            expected: c.dim(),
            got: w.len(),
        });
    }
    let x = c.project_raw(w);
    let reflect_c = &x * 2.0 - w;
    let y = k.project_raw(&reflect_c);
    let reflect_k = &y * 2.0 - &reflect_c;
    let w_next = (w + reflect_k) * 0.5;
    let u = w - &x;
    let v = &w_next - &x;
    let residual = (&w_next - w).norm();
    Ok(ConeDRStep {
        w_polar: u.clone(),
        w_cone: x.clone(),
        state: DRState {
            k: 0,
            w: w_next,
            x,
            y,
            u,
            v,
            residual,
        },
    })
}

/// Tests membership of `w` in the fixed-point set `(C ∩ K) + (C° ∩ K*)`.
///
/// For a subspace/orthant pair the orthogonal decomposition is unique and
/// the test is exact; for general pairs the residual `‖w - F(w)‖ <= tol`
/// is used as a sound surrogate.
pub fn fixed_point_membership(
    c: &ConeSpec,
    k: &ConeSpec,
    w: &DVector<f64>,
    tol: f64,
) -> Result<bool> {
    if let (ConeSpec::Subspace(basis), ConeSpec::Orthant { n }) = (c, k) {
        if basis.ambient_dim() != *n {
            return Err(Error::DimensionMismatch {
                expected: basis.ambient_dim(),
                got: *n,
            });
        }
        basis.check_dim(w)?;
        let x = basis.project(w);
        let u = w - &x;
        return Ok(x.iter().all(|&t| t >= -tol) && u.iter().all(|&t| t >= -tol));
    }
    let step = cone_dr_operator(c, k, w)?;
    Ok(step.state.residual <= tol)
}

/// The Goldman-Tucker partition of `{0,..,n-1}` into the maximum support
/// sets of `L ∩ R^n_+` and `L⊥ ∩ R^n_+`, with a certificate pair.
#[derive(Debug, Clone, Serialize)]
pub struct SupportPartition {
    pub supp_l: Vec<usize>,
    pub supp_lperp: Vec<usize>,
    pub identified_at: usize,
    pub certificate_x: DVector<f64>,
    pub certificate_u: DVector<f64>,
}

impl SupportPartition {
    /// JSON form with 1-based index sets, as emitted by the CLI.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "supp_l": self.supp_l.iter().map(|i| i + 1).collect::<Vec<_>>(),
            "supp_lperp": self.supp_lperp.iter().map(|i| i + 1).collect::<Vec<_>>(),
            "identified_at": self.identified_at,
            "certificate_x": self.certificate_x.as_slice(),
            "certificate_u": self.certificate_u.as_slice(),
        })
    }
}

/// The iteration `w <- max(Π_L w, Π_{L⊥} w)` with both projections
/// computed in complement form — `x = w - Π_{L⊥} w`, `u = w - Π_L w` —
/// and the corrections evaluated in compensated arithmetic.
///
/// Near the limit the selected coordinate of either branch updates as
/// `w_i - (vanishing correction)`; computing the correction to its true
/// sub-ulp size makes the subtraction round to `w_i` itself, so the
/// iterate lands on an exact floating-point fixed point — the literal
/// equality the finite-termination results are about. The plain range
/// form `Q(Q'w)` lacks such fixed points whenever the float norm of the
/// basis columns falls an ulp short of one, and uncompensated corrections
/// carry one-ulp noise that can sustain two-cycles.
#[derive(Debug, Clone)]
pub struct SupportIteration {
    basis: SubspaceBasis,
    complement: SubspaceBasis,
}

impl SupportIteration {
    pub fn new(basis: &SubspaceBasis) -> Self {
        SupportIteration {
            basis: basis.clone(),
            complement: basis.orthogonal_complement(),
        }
    }

    fn complement_projection(onto: &SubspaceBasis, w: &DVector<f64>) -> DVector<f64> {
        if onto.rank() == 0 {
            return w.clone();
        }
        if onto.rank() == onto.ambient_dim() {
            return DVector::zeros(onto.ambient_dim());
        }
        w - linalg::range_projection_compensated(onto.basis_matrix(), w)
    }

    /// Returns `(x, u, max(x, u))`.
    pub fn step(&self, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let x = Self::complement_projection(&self.complement, w);
        let u = Self::complement_projection(&self.basis, w);
        let next = x.zip_map(&u, f64::max);
        (x, u, next)
    }
}

fn sign_pattern(x: &DVector<f64>, u: &DVector<f64>) -> Vec<i8> {
    x.iter()
        .zip(u.iter())
        .map(|(&xi, &ui)| {
            let d = xi - ui;
            if d > TAU_ID {
                1
            } else if d < -TAU_ID {
                -1
            } else {
                0
            }
        })
        .collect()
}

fn certificates(
    basis: &SubspaceBasis,
    x: &DVector<f64>,
    u: &DVector<f64>,
    pattern: &[i8],
) -> (DVector<f64>, DVector<f64>) {
    let clean = |src: &DVector<f64>, keep: i8| {
        DVector::from_iterator(
            src.len(),
            src.iter()
                .zip(pattern.iter())
                .map(|(&t, &p)| if p == keep { t.max(0.0) } else { 0.0 }),
        )
    };
    let cx = basis.project(&clean(x, 1));
    let cu = basis.project_complement(&clean(u, -1));
    (cx, cu)
}

/// Runs `w <- max(Π_L w, Π_{L⊥} w)` from a strictly positive start until
/// the stop rule fires, then reports the support partition encoded in the
/// final sign pattern of `x - u`.
///
/// The pattern is only trusted when it is free of ties (every
/// `|x_i - u_i| > TAU_ID`) and has persisted for
/// [`IDENTIFICATION_WINDOW`] consecutive iterations by the time the
/// residual tolerance fires, or when the iterate freezes bitwise (a frozen
/// pattern can never change again). Anything else — ties at stop, or an
/// exhausted iteration budget — is reported as an error carrying the
/// ambiguous index set.
pub fn identify_supports(
    basis: &SubspaceBasis,
    w0: &DVector<f64>,
    stop: &StopRule,
) -> Result<SupportPartition> {
    stop.validate()?;
    basis.check_dim(w0)?;
    if !w0.iter().all(|&t| t > 0.0) {
        return Err(Error::Input(
            "support identification needs a strictly positive start".into(),
        ));
    }
    let n = basis.ambient_dim();
    // Degenerate subspaces resolve without iterating.
    if basis.rank() == 0 {
        return Ok(SupportPartition {
            supp_l: Vec::new(),
            supp_lperp: (0..n).collect(),
            identified_at: 0,
            certificate_x: DVector::zeros(n),
            certificate_u: DVector::from_element(n, 1.0),
        });
    }
    if basis.rank() == n {
        return Ok(SupportPartition {
            supp_l: (0..n).collect(),
            supp_lperp: Vec::new(),
            identified_at: 0,
            certificate_x: DVector::from_element(n, 1.0),
            certificate_u: DVector::zeros(n),
        });
    }

    let iteration = SupportIteration::new(basis);
    let mut w = w0.clone();
    let mut pattern: Vec<i8> = Vec::new();
    let mut pattern_since = 0usize;
    let mut tol_reached = false;
    for k in 1..=stop.max_iters {
        let (x, u, w_next) = iteration.step(&w);
        let pat = sign_pattern(&x, &u);
        if pat != pattern {
            pattern = pat;
            pattern_since = k;
        }
        let zero_free = pattern.iter().all(|&p| p != 0);
        let frozen = w_next
            .iter()
            .zip(w.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        tol_reached = tol_reached || (&w_next - &w).norm() <= stop.tol;
        // A frozen pattern can never change again; otherwise the residual
        // tolerance must have fired and the pattern must have survived the
        // confirmation window.
        let confirmed = zero_free
            && (frozen || (tol_reached && k - pattern_since + 1 >= IDENTIFICATION_WINDOW));
        if confirmed {
            let supp_l = pattern
                .iter()
                .enumerate()
                .filter(|(_, &p)| p == 1)
                .map(|(i, _)| i)
                .collect();
            let supp_lperp = pattern
                .iter()
                .enumerate()
                .filter(|(_, &p)| p == -1)
                .map(|(i, _)| i)
                .collect();
            let (certificate_x, certificate_u) = certificates(basis, &x, &u, &pattern);
            return Ok(SupportPartition {
                supp_l,
                supp_lperp,
                identified_at: pattern_since,
                certificate_x,
                certificate_u,
            });
        }
        if frozen {
            let indices = pattern
                .iter()
                .enumerate()
                .filter(|(_, &p)| p == 0)
                .map(|(i, _)| i)
                .collect();
            return Err(Error::AmbiguousSupports(AmbiguousSupports {
                indices,
                stopped_at: k,
            }));
        }
        w = w_next;
    }
    let (x, u, _) = iteration.step(&w);
    let indices = sign_pattern(&x, &u)
        .iter()
        .enumerate()
        .filter(|(_, &p)| p == 0)
        .map(|(i, _)| i)
        .collect();
    Err(Error::AmbiguousSupports(AmbiguousSupports {
        indices,
        stopped_at: stop.max_iters,
    }))
}

/// One step of the affine-orthant operator `F(w) = max(x, u + e1)`, where
/// `x`, `u` are the projections of `w` onto `L` and `L⊥`.
pub fn affine_step(basis: &SubspaceBasis, w: &DVector<f64>) -> Result<DVector<f64>> {
    basis.check_dim(w)?;
    if basis.ambient_dim() == 0 {
        return Err(Error::Input("affine step needs dimension >= 1".into()));
    }
    let x = basis.project(w);
    let mut shifted = w - &x;
    shifted[0] += 1.0;
    Ok(x.zip_map(&shifted, f64::max))
}

/// Lifts the affine subspace `point + span(columns)` in `R^{n-1}` to the
/// linear subspace `{t (1, x) : x affine, t real}` of `R^n`, closed under
/// span.
pub fn homogenize(point: &DVector<f64>, columns: &DMatrix<f64>) -> Result<SubspaceBasis> {
    if columns.ncols() > 0 && columns.nrows() != point.len() {
        return Err(Error::DimensionMismatch {
            expected: point.len(),
            got: columns.nrows(),
        });
    }
    let n = point.len() + 1;
    let mut cols = DMatrix::zeros(n, columns.ncols() + 1);
    cols[(0, 0)] = 1.0;
    for i in 0..point.len() {
        cols[(i + 1, 0)] = point[i];
    }
    for j in 0..columns.ncols() {
        for i in 0..columns.nrows() {
            cols[(i + 1, j + 1)] = columns[(i, j)];
        }
    }
    Ok(SubspaceBasis::new(&cols))
}

/// How to pick the starting point of [`nonzero_limit_run`].
#[derive(Debug, Clone)]
pub enum StartMode {
    /// All-ones vector; strictly interior to the orthant and its dual.
    /// Only accepted when `K` is the orthant, since no generic recipe for
    /// a relative-interior point of an arbitrary cone is available.
    AllOnes,
    Point(DVector<f64>),
}

/// A converged run together with the Moreau split of its limit.
#[derive(Debug, Clone)]
pub struct LimitRun {
    pub trace: DRTrace,
    pub w_limit: DVector<f64>,
    pub norm_cone: f64,
    pub norm_polar: f64,
}

/// Runs the cone iteration from a strictly interior start and reports
/// `‖w̄^C‖` and `‖w̄^{C°}‖` for the limit.
pub fn nonzero_limit_run(
    c: &ConeSpec,
    k: &ConeSpec,
    start: StartMode,
    stop: &StopRule,
) -> Result<LimitRun> {
    if c.dim() != k.dim() {
        return Err(Error::DimensionMismatch {
            expected: c.dim(),
            got: k.dim(),
        });
    }
    let w0 = match start {
        StartMode::AllOnes => {
            if !matches!(k, ConeSpec::Orthant { .. }) {
                return Err(Error::Input(
                    "the all-ones start is only strictly interior for the orthant".into(),
                ));
            }
            DVector::from_element(k.dim(), 1.0)
        }
        StartMode::Point(p) => {
            if p.len() != c.dim() {
                return Err(Error::DimensionMismatch {
                    expected: c.dim(),
                    got: p.len(),
                });
            }
            p
        }
    };
    let trace = run_with(&|z| c.project_raw(z), &|z| k.project_raw(z), &w0, stop)?;
    let w_limit = trace.last_w().clone();
    let w_cone = c.project_raw(&w_limit);
    let norm_polar = (&w_limit - &w_cone).norm();
    Ok(LimitRun {
        trace,
        norm_cone: w_cone.norm(),
        w_limit,
        norm_polar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(vectors: &[&[f64]]) -> SubspaceBasis {
        let n = vectors[0].len();
        let vs: Vec<DVector<f64>> = vectors
            .iter()
            .map(|v| DVector::from_column_slice(v))
            .collect();
        SubspaceBasis::from_spanning(n, &vs).unwrap()
    }

    #[test]
    fn orthant_projection_clamps() {
        let k = ConeSpec::orthant(3);
        let z = DVector::from_column_slice(&[1.0, -2.0, 0.0]);
        let p = k.project(&z).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn polar_orthant_is_negative_part() {
        let polar = ConeSpec::polar_of(ConeSpec::orthant(3)).unwrap();
        let z = DVector::from_column_slice(&[1.0, -2.0, 0.0]);
        let p = polar.project(&z).unwrap();
        assert_eq!(p.as_slice(), &[0.0, -2.0, 0.0]);
    }

    #[test]
    fn diagonal_subspace_projection() {
        let basis = span(&[&[1.0, 1.0]]);
        let p = basis.project(&DVector::from_column_slice(&[1.0, 0.0]));
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn polar_of_shifted_orthant_rejected() {
        let p = ConeSpec::shifted_orthant(2).unwrap();
        assert!(matches!(ConeSpec::polar_of(p), Err(Error::Construction(_))));
    }

    #[test]
    fn moreau_split_is_orthogonal() {
        use rand::Rng;
        use rand::SeedableRng;
        let cones = [
            ConeSpec::subspace(span(&[&[1.0, 2.0, 0.0], &[0.0, 1.0, -1.0]])),
            ConeSpec::orthant(3),
            ConeSpec::polar_of(ConeSpec::orthant(3)).unwrap(),
            ConeSpec::dual_of(ConeSpec::subspace(span(&[&[1.0, -1.0, 0.5]]))).unwrap(),
        ];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..250 {
            let z = DVector::from_fn(3, |_, _| {
                rng.sample::<f64, _>(rand_distr::StandardNormal) * 2.0
            });
            for c in &cones {
                let zc = c.project(&z).unwrap();
                let zp = ConeSpec::polar_of(c.clone()).unwrap().project(&z).unwrap();
                assert!((&zc + &zp - &z).norm() < 1e-10);
                assert!(zc.dot(&zp).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn subspace_orthant_operator_is_coordinate_max() {
        let basis = span(&[&[1.0, 1.0]]);
        let c = ConeSpec::subspace(basis.clone());
        let k = ConeSpec::orthant(2);
        let w = DVector::from_column_slice(&[1.0, 0.0]);
        let step = cone_dr_operator(&c, &k, &w).unwrap();
        let x = basis.project(&w);
        let u = &w - &x;
        let expected = x.zip_map(&u, f64::max);
        assert!((&step.state.w - &expected).norm() < 1e-14);
        assert!((step.state.x[0] - 0.5).abs() < 1e-15);
        assert!((step.state.u[0] - 0.5).abs() < 1e-15 && (step.state.u[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn orthant_pair_operator_is_positive_part() {
        let k = ConeSpec::orthant(4);
        let w = DVector::from_column_slice(&[1.0, -2.0, 0.5, -0.1]);
        let step = cone_dr_operator(&k, &k, &w).unwrap();
        let expected = w.map(|t| t.max(0.0));
        assert!((&step.state.w - &expected).norm() < 1e-14);
    }

    #[test]
    fn identify_positive_line_terminates_finitely() {
        // (1,1,1) spans L, so the whole index set supports L and the
        // iteration freezes on an interior point.
        let basis = span(&[&[1.0, 1.0, 1.0]]);
        let part = identify_supports(&basis, &DVector::from_element(3, 1.0), &StopRule::default())
            .unwrap();
        assert_eq!(part.supp_l, vec![0, 1, 2]);
        assert!(part.supp_lperp.is_empty());

        let iteration = SupportIteration::new(&basis);
        let mut w = DVector::from_element(3, 1.0);
        let mut frozen = false;
        for _ in 0..10_000 {
            let (_, _, next) = iteration.step(&w);
            frozen = next
                .iter()
                .zip(w.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            w = next;
            if frozen {
                break;
            }
        }
        assert!(frozen);
        assert!(w.iter().all(|&t| t > 0.0));
    }

    #[test]
    fn fixed_point_membership_subspace_orthant() {
        let basis = span(&[&[1.0, 0.0]]);
        let c = ConeSpec::subspace(basis);
        let k = ConeSpec::orthant(2);
        let w = DVector::from_column_slice(&[1.0, 1.0]);
        assert!(fixed_point_membership(&c, &k, &w, 1e-12).unwrap());
        let w_bad = DVector::from_column_slice(&[-1.0, 0.0]);
        assert!(!fixed_point_membership(&c, &k, &w_bad, 1e-12).unwrap());
        let zero = DVector::zeros(2);
        assert!(fixed_point_membership(&c, &k, &zero, 1e-12).unwrap());
    }

    #[test]
    fn fixed_point_membership_general_surrogate() {
        // Pairs outside the subspace/orthant case fall back to the
        // residual test.
        let c = ConeSpec::orthant(2);
        let k = ConeSpec::orthant(2);
        assert!(
            fixed_point_membership(&c, &k, &DVector::from_column_slice(&[1.0, 1.0]), 1e-12)
                .unwrap()
        );
        assert!(
            !fixed_point_membership(&c, &k, &DVector::from_column_slice(&[-1.0, 1.0]), 1e-12)
                .unwrap()
        );
    }

    #[test]
    fn identify_axis_subspace() {
        let basis = span(&[&[1.0, 0.0]]);
        let part = identify_supports(&basis, &DVector::from_element(2, 1.0), &StopRule::default())
            .unwrap();
        assert_eq!(part.supp_l, vec![0]);
        assert_eq!(part.supp_lperp, vec![1]);
        assert_eq!(part.identified_at, 1);
    }

    #[test]
    fn identify_certificates_live_in_the_right_cones() {
        let basis = span(&[&[1.0, 1.0, 0.0, 0.0]]);
        let part = identify_supports(&basis, &DVector::from_element(4, 1.0), &StopRule::default())
            .unwrap();
        assert_eq!(part.supp_l, vec![0, 1]);
        let x = &part.certificate_x;
        let u = &part.certificate_u;
        // x in L, u in the complement, disjoint supports, nonnegative.
        assert!((x - basis.project(x)).norm() < 1e-10);
        assert!((u - basis.project_complement(u)).norm() < 1e-10);
        assert!(x.dot(u).abs() < 1e-10);
        assert!(x.iter().all(|&t| t >= -1e-10));
        assert!(u.iter().all(|&t| t >= -1e-10));
        for &i in &part.supp_l {
            assert!(x[i] > TAU_ID);
        }
        for &i in &part.supp_lperp {
            assert!(u[i] > TAU_ID);
        }
    }

    #[test]
    fn identify_mixed_sign_line() {
        // L = span{(1,-1,0)}: the complement holds all of the support.
        let basis = span(&[&[1.0, -1.0, 0.0]]);
        let part = identify_supports(&basis, &DVector::from_element(3, 1.0), &StopRule::default())
            .unwrap();
        assert!(part.supp_l.is_empty());
        assert_eq!(part.supp_lperp, vec![0, 1, 2]);
    }

    #[test]
    fn identify_requires_positive_start() {
        let basis = span(&[&[1.0, 0.0]]);
        let w0 = DVector::from_column_slice(&[1.0, 0.0]);
        assert!(matches!(
            identify_supports(&basis, &w0, &StopRule::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn identify_degenerate_subspaces() {
        let zero = SubspaceBasis::zero(3);
        let part =
            identify_supports(&zero, &DVector::from_element(3, 1.0), &StopRule::default()).unwrap();
        assert!(part.supp_l.is_empty());
        assert_eq!(part.supp_lperp.len(), 3);

        let full = SubspaceBasis::full(3);
        let part =
            identify_supports(&full, &DVector::from_element(3, 1.0), &StopRule::default()).unwrap();
        assert_eq!(part.supp_l.len(), 3);
        assert!(part.supp_lperp.is_empty());
    }

    #[test]
    fn identify_budget_exhaustion_reports_ambiguity() {
        let basis = span(&[&[2.0, 1.0]]);
        let stop = StopRule {
            tol: 0.0,
            max_iters: 1,
            exact_zero: true,
        };
        match identify_supports(&basis, &DVector::from_element(2, 1.0), &stop) {
            Err(Error::AmbiguousSupports(a)) => assert_eq!(a.stopped_at, 1),
            other => panic!("expected ambiguity, got {other:?}"),
        }
    }

    #[test]
    fn affine_step_fixes_feasible_points() {
        // L spanned by (1,2): (1,2) sits in L ∩ P.
        let basis = span(&[&[1.0, 2.0]]);
        let w = DVector::from_column_slice(&[1.0, 2.0]);
        let next = affine_step(&basis, &w).unwrap();
        assert!((next - w).norm() < 1e-14);
    }

    #[test]
    fn affine_step_full_space() {
        let basis = SubspaceBasis::full(2);
        let w = DVector::from_column_slice(&[0.25, -3.0]);
        let next = affine_step(&basis, &w).unwrap();
        assert_eq!(next.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn homogenize_examples() {
        // {2} in R^1 lifts to span{(1,2)}.
        let lifted =
            homogenize(&DVector::from_column_slice(&[2.0]), &DMatrix::zeros(1, 0)).unwrap();
        assert_eq!(lifted.rank(), 1);
        let q = lifted.basis_matrix().column(0).into_owned();
        assert!((q[1] / q[0] - 2.0).abs() < 1e-12);

        // R^1 (point 0, basis {1}) lifts to all of R^2.
        let lifted = homogenize(
            &DVector::from_column_slice(&[0.0]),
            &DMatrix::from_column_slice(1, 1, &[1.0]),
        )
        .unwrap();
        assert_eq!(lifted.rank(), 2);
    }

    #[test]
    fn nonzero_limit_classification() {
        // L = span{(1,0)}: both pieces of the limit split are nonzero.
        let c = ConeSpec::subspace(span(&[&[1.0, 0.0]]));
        let k = ConeSpec::orthant(2);
        let run = nonzero_limit_run(&c, &k, StartMode::AllOnes, &StopRule::default()).unwrap();
        assert!(run.norm_cone > 0.9 && run.norm_polar > 0.9);

        // L = span{(1,-1)}: L ∩ R^2_+ = {0}, so the limit lives in the
        // polar side only.
        let c = ConeSpec::subspace(span(&[&[1.0, -1.0]]));
        let run = nonzero_limit_run(&c, &k, StartMode::AllOnes, &StopRule::default()).unwrap();
        assert!(run.norm_cone < 1e-12);
        assert!(run.norm_polar > 1.0);
    }

    #[test]
    fn all_ones_start_requires_orthant() {
        let c = ConeSpec::subspace(span(&[&[1.0, 0.0]]));
        let k = ConeSpec::subspace(span(&[&[0.0, 1.0]]));
        assert!(matches!(
            nonzero_limit_run(&c, &k, StartMode::AllOnes, &StopRule::default()),
            Err(Error::Input(_))
        ));
    }
}
