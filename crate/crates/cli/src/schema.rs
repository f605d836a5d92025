//! Problem-file schema: one JSON document describes the mode, the
//! mode-specific payload, optional solver overrides, and a seed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use drsplit::conic::{ConeSpec, SubspaceBasis};
use drsplit::constrained::ConstrainedProblem;
use drsplit::dr::StopRule;
use drsplit::prox::{PiecewiseLinearCoord, ProxFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Unconstrained,
    Conic,
    SubspaceOrthant,
    AffineOrthant,
    Constrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EntrySpec {
    /// Subspace indicator; `basis` lists spanning vectors.
    IndicatorSubspace {
        basis: Vec<Vec<f64>>,
    },
    IndicatorAffine {
        point: Vec<f64>,
        #[serde(default)]
        basis: Vec<Vec<f64>>,
    },
    IndicatorOrthant {
        n: usize,
    },
    IndicatorShiftedOrthant {
        n: usize,
    },
    IndicatorPolarOf {
        of: Box<EntrySpec>,
    },
    /// `x'Qx/2 + c'x`; `q` is given in row-major rows.
    Quadratic {
        q: Vec<Vec<f64>>,
        c: Vec<f64>,
    },
    ScaledL1 {
        lambda: f64,
        n: usize,
    },
    SeparablePiecewiseLinear {
        coords: Vec<PlcSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlcSpec {
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConeJson {
    Subspace { basis: Vec<Vec<f64>> },
    Orthant { n: usize },
    ShiftedOrthant { n: usize },
    PolarOf { of: Box<ConeJson> },
    DualOf { of: Box<ConeJson> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnownAnnotation {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_star: Option<f64>,
    /// A known fixed point, enabling exact distance reporting.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wbar: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagQpJson {
    /// 1-based indices of the orthant piece.
    pub j: Vec<usize>,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalenceJson {
    pub x0: Vec<f64>,
    pub u0: Vec<f64>,
    pub iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Payload {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<EntrySpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<EntrySpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<ConeJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<ConeJson>,
    /// Spanning vectors of the subspace (subspace_orthant, affine_orthant).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis: Option<Vec<Vec<f64>>>,
    /// Path to a CSV matrix file holding one spanning vector per row;
    /// alternative to `basis`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis_csv: Option<String>,
    /// Base point of the affine subspace (affine_orthant).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    #[serde(rename = "A", skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(rename = "B", skip_serializing_if = "Option::is_none")]
    pub b_mat: Option<Vec<Vec<f64>>>,
    #[serde(rename = "b", skip_serializing_if = "Option::is_none")]
    pub rhs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub known: Option<KnownAnnotation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diag_qp: Option<DiagQpJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<EquivalenceJson>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverJson {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_zero: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema_version: String,
    pub mode: Mode,
    pub payload: Payload,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ProblemFile {
    pub fn stop_rule(&self) -> StopRule {
        let mut stop = StopRule::default();
        if let Some(s) = &self.solver {
            if let Some(t) = s.tol {
                stop.tol = t;
            }
            if let Some(m) = s.max_iters {
                stop.max_iters = m;
            }
            if let Some(e) = s.exact_zero {
                stop.exact_zero = e;
            }
        }
        stop
    }
}

pub fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Row-major rows to a matrix; rows must be rectangular.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    if rows.is_empty() {
        return Err("matrix needs at least one row".into());
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err("matrix rows have inconsistent lengths".into());
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), width, &flat))
}

/// Parses a CSV matrix file: one spanning vector per row, comma-separated.
pub fn vectors_from_csv(text: &str) -> Result<Vec<Vec<f64>>, String> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line
            .split(',')
            .map(|cell| cell.trim().parse::<f64>())
            .collect();
        rows.push(row.map_err(|e| format!("csv line {}: {e}", lineno + 1))?);
    }
    Ok(rows)
}

/// Spanning vectors to a subspace basis.
pub fn subspace_from_vectors(vectors: &[Vec<f64>]) -> Result<SubspaceBasis, String> {
    if vectors.is_empty() {
        return Err("subspace needs at least one spanning vector".into());
    }
    let n = vectors[0].len();
    let owned: Vec<DVector<f64>> = vectors.iter().map(|v| vector(v)).collect();
    SubspaceBasis::from_spanning(n, &owned).map_err(|e| e.to_string())
}

pub fn build_entry(spec: &EntrySpec) -> Result<ProxFunction, String> {
    match spec {
        EntrySpec::IndicatorSubspace { basis } => Ok(ProxFunction::indicator_subspace_basis(
            subspace_from_vectors(basis)?,
        )),
        EntrySpec::IndicatorAffine { point, basis } => {
            let p = vector(point);
            let cols = if basis.is_empty() {
                DMatrix::zeros(point.len(), 0)
            } else {
                let b = subspace_from_vectors(basis)?;
                b.basis_matrix().clone()
            };
            ProxFunction::indicator_affine(p, &cols).map_err(|e| e.to_string())
        }
        EntrySpec::IndicatorOrthant { n } => Ok(ProxFunction::indicator_orthant(*n)),
        EntrySpec::IndicatorShiftedOrthant { n } => {
            ProxFunction::indicator_shifted_orthant(*n).map_err(|e| e.to_string())
        }
        EntrySpec::IndicatorPolarOf { of } => {
            let inner = build_entry(of)?;
            ProxFunction::indicator_polar_of(inner).map_err(|e| e.to_string())
        }
        EntrySpec::Quadratic { q, c } => {
            let qm = matrix_from_rows(q)?;
            ProxFunction::quadratic(qm, vector(c)).map_err(|e| e.to_string())
        }
        EntrySpec::ScaledL1 { lambda, n } => {
            ProxFunction::scaled_l1(*lambda, *n).map_err(|e| e.to_string())
        }
        EntrySpec::SeparablePiecewiseLinear { coords } => {
            let cs = coords
                .iter()
                .map(|c| PiecewiseLinearCoord {
                    breakpoints: c.breakpoints.clone(),
                    slopes: c.slopes.clone(),
                })
                .collect();
            ProxFunction::separable_piecewise_linear(cs).map_err(|e| e.to_string())
        }
    }
}

pub fn build_cone(spec: &ConeJson) -> Result<ConeSpec, String> {
    match spec {
        ConeJson::Subspace { basis } => Ok(ConeSpec::subspace(subspace_from_vectors(basis)?)),
        ConeJson::Orthant { n } => Ok(ConeSpec::orthant(*n)),
        ConeJson::ShiftedOrthant { n } => ConeSpec::shifted_orthant(*n).map_err(|e| e.to_string()),
        ConeJson::PolarOf { of } => ConeSpec::polar_of(build_cone(of)?).map_err(|e| e.to_string()),
        ConeJson::DualOf { of } => ConeSpec::dual_of(build_cone(of)?).map_err(|e| e.to_string()),
    }
}

pub fn build_constrained(payload: &Payload) -> Result<ConstrainedProblem, String> {
    let f = build_entry(
        payload
            .f
            .as_ref()
            .ok_or("constrained mode needs payload.f")?,
    )?;
    let g = build_entry(
        payload
            .g
            .as_ref()
            .ok_or("constrained mode needs payload.g")?,
    )?;
    let a = matrix_from_rows(
        payload
            .a
            .as_ref()
            .ok_or("constrained mode needs payload.A")?,
    )?;
    let b_mat = matrix_from_rows(
        payload
            .b_mat
            .as_ref()
            .ok_or("constrained mode needs payload.B")?,
    )?;
    let rhs = vector(
        payload
            .rhs
            .as_ref()
            .ok_or("constrained mode needs payload.b")?,
    );
    ConstrainedProblem::new(f, g, a, b_mat, rhs).map_err(|e| e.to_string())
}
