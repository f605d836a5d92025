//! Command-line front-end: problem ingestion, solver invocation,
//! trace/report export, and oracle subcommands.
//!
//! Exit codes: 0 converged (residual below tolerance or exact fixed
//! point), 1 input or solver error, 2 iteration budget exhausted,
//! 3 support identification stopped with ambiguous indices.

mod schema;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use drsplit::conic::{self, StartMode, SubspaceBasis};
use drsplit::constrained::{equivalence_run, run_general};
use drsplit::diagnostics::{
    diag_qp_hoffman, diag_qp_hoffman_bruteforce, fit_rate, support_partition_oracle,
    DiagQpInstance, DiagnosticsReport, DistOracle, GridSpec, SubspaceOrthantOracle,
};
use drsplit::dr::{run, DRTrace, StopReason, StopRule};
use drsplit::prox::ProxFunction;
use drsplit::Error;

use schema::{
    build_cone, build_constrained, build_entry, subspace_from_vectors, vector, EntrySpec, Mode,
    ProblemFile,
};

#[derive(Parser)]
#[command(
    name = "drsplit",
    version,
    about = "Douglas-Rachford splitting solver and diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TraceFormat {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the problem described by a JSON file and export trace/report.
    Solve {
        file: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "json")]
        trace_format: TraceFormat,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Identify the support partition of a subspace/orthant instance.
    Supports {
        file: PathBuf,
        /// Cross-check against the exact enumeration oracle.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compute diagnostics: Hoffman constants, equivalence deviations, or
    /// rate fits of a solve / replayed trace.
    Diagnose {
        file: PathBuf,
        /// Fit a rate on a previously exported trace.json instead of
        /// solving; the file may also be a bare {"residuals": [...]}.
        #[arg(long)]
        replay: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 50)]
        window: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match &e {
            Error::AmbiguousSupports(a) => fail(
                3,
                format!(
                    "ambiguous support indices {:?} at iteration {}",
                    a.indices.iter().map(|i| i + 1).collect::<Vec<_>>(),
                    a.stopped_at
                ),
            ),
            _ => fail(1, e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve {
            file,
            tol,
            max_iters,
            seed,
            trace_format,
            out,
        } => cmd_solve(&file, tol, max_iters, seed, trace_format, &out),
        Command::Supports {
            file,
            oracle,
            tol,
            max_iters,
            seed,
            out,
        } => cmd_supports(&file, oracle, tol, max_iters, seed, &out),
        Command::Diagnose {
            file,
            replay,
            samples,
            window,
            seed,
            out,
        } => cmd_diagnose(&file, replay.as_deref(), samples, window, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_problem(path: &Path) -> Result<ProblemFile, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| fail(1, format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        fail(
            1,
            format!(
                "{}: line {}, column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ),
        )
    })
}

fn effective_stop(file: &ProblemFile, tol: Option<f64>, max_iters: Option<usize>) -> StopRule {
    let mut stop = file.stop_rule();
    if let Some(t) = tol {
        stop.tol = t;
    }
    if let Some(m) = max_iters {
        stop.max_iters = m;
    }
    stop
}

fn effective_seed(file: &ProblemFile, seed: Option<u64>) -> u64 {
    seed.or(file.seed).unwrap_or(0)
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| fail(1, format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| fail(1, format!("serialization failed: {e}")))?;
    fs::write(&path, text + "\n")
        .map_err(|e| fail(1, format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn write_trace(
    dir: &Path,
    trace: &DRTrace,
    format: TraceFormat,
    dist: Option<&[f64]>,
) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| fail(1, format!("cannot create {}: {e}", dir.display())))?;
    match format {
        TraceFormat::Json => {
            let path = dir.join("trace.json");
            let text = serde_json::to_string_pretty(&trace.to_json())
                .map_err(|e| fail(1, e.to_string()))?;
            fs::write(&path, text + "\n")
                .map_err(|e| fail(1, format!("cannot write {}: {e}", path.display())))?;
            Ok(path)
        }
        TraceFormat::Csv => {
            let path = dir.join("trace.csv");
            let mut buf = Vec::new();
            trace
                .write_csv(&mut buf, dist)
                .map_err(|e| fail(1, e.to_string()))?;
            fs::write(&path, buf)
                .map_err(|e| fail(1, format!("cannot write {}: {e}", path.display())))?;
            Ok(path)
        }
    }
}

fn exit_code_for(reason: StopReason) -> Result<(), Failure> {
    match reason {
        StopReason::MaxIters => Err(fail(2, "iteration budget exhausted")),
        _ => Ok(()),
    }
}

/// Predicted error-bound constant for a pair of quadratics: one side must
/// be strongly convex and one side smooth, giving the dual modulus.
fn predicted_h_for(f: &ProxFunction, g: &ProxFunction) -> Option<f64> {
    let eig_range = |p: &ProxFunction| -> Option<(f64, f64)> {
        if let ProxFunction::Quadratic { q, .. } = p {
            let eigs = q.clone().symmetric_eigenvalues();
            let min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = eigs.iter().copied().fold(0.0f64, f64::max);
            Some((min, max))
        } else {
            None
        }
    };
    let (fmin, fmax) = eig_range(f)?;
    let (gmin, gmax) = eig_range(g)?;
    let mu = fmin.max(gmin);
    let l = fmax.min(gmax);
    if mu > 0.0 && l > 0.0 {
        let mu_star = 1.0 / l;
        Some(4.0 * (1.0 + (1.0 / mu).max(1.0 / mu_star)))
    } else {
        None
    }
}

fn rate_report(
    trace: &DRTrace,
    dist_oracle: Option<DistOracle<'_>>,
    predicted_h: Option<f64>,
    window: usize,
) -> Option<DiagnosticsReport> {
    if trace.len() < 6 {
        return None;
    }
    let w = window.min(trace.len() - 2).max(2);
    fit_rate(trace, w, dist_oracle, predicted_h).ok()
}

fn solve_report_value(
    file: &ProblemFile,
    seed: u64,
    trace: &DRTrace,
    extras: serde_json::Value,
    diagnostics: Option<&DiagnosticsReport>,
) -> serde_json::Value {
    let mut report = json!({
        "mode": file.mode,
        "seed": seed,
        "stop_reason": trace.stop_reason,
        "iterations": trace.len(),
        "final_residual": trace.states.last().map(|s| s.residual),
        "monotonicity_warnings": trace.monotonicity_warnings,
    });
    if let Some(d) = diagnostics {
        report["diagnostics"] = serde_json::to_value(d).unwrap();
        if let Some(r) = d.fitted_rate {
            report["fitted_rate"] = json!(r);
        }
        if let Some(b) = d.rate_bound {
            report["rate_bound"] = json!(b);
        }
    }
    if let serde_json::Value::Object(extra) = extras {
        for (k, v) in extra {
            report[k] = v;
        }
    }
    report
}

fn cmd_solve(
    path: &Path,
    tol: Option<f64>,
    max_iters: Option<usize>,
    seed: Option<u64>,
    trace_format: TraceFormat,
    out: &Path,
) -> Result<(), Failure> {
    let file = load_problem(path)?;
    let stop = effective_stop(&file, tol, max_iters);
    let seed = effective_seed(&file, seed);

    // Canonical echo of the parsed problem; reparsing it must yield the
    // same in-memory problem.
    let echo = serde_json::to_value(&file).map_err(|e| fail(1, e.to_string()))?;
    write_json(out, "problem_echo.json", &echo)?;

    match file.mode {
        Mode::Unconstrained => {
            let payload = &file.payload;
            let f = build_entry(
                payload
                    .f
                    .as_ref()
                    .ok_or_else(|| fail(1, "missing payload.f"))?,
            )
            .map_err(|m| fail(1, m))?;
            let g = build_entry(
                payload
                    .g
                    .as_ref()
                    .ok_or_else(|| fail(1, "missing payload.g"))?,
            )
            .map_err(|m| fail(1, m))?;
            let w0 = payload
                .w0
                .as_ref()
                .map(|v| vector(v))
                .unwrap_or_else(|| DVector::zeros(f.dim()));
            let trace = run(&f, &g, &w0, &stop)?;

            let known = payload.known.as_ref();
            let predicted = known
                .and_then(|k| match (k.mu, k.mu_star) {
                    (Some(mu), Some(ms)) if mu > 0.0 && ms > 0.0 => {
                        Some(4.0 * (1.0 + (1.0 / mu).max(1.0 / ms)))
                    }
                    _ => None,
                })
                .or_else(|| predicted_h_for(&f, &g));
            let wbar = known.and_then(|k| k.wbar.as_ref()).map(|v| vector(v));
            let dist_fn = wbar.map(|w| move |x: &DVector<f64>| (x - &w).norm());
            let diag = rate_report(
                &trace,
                dist_fn.as_ref().map(|f| f as &dyn Fn(&DVector<f64>) -> f64),
                predicted,
                50,
            );

            let x_final = trace.states.last().map(|s| s.x.clone());
            let objective = x_final.as_ref().and_then(|x| {
                let fx = f.evaluate(x).ok()?;
                let gx = g.evaluate(x).ok()?;
                Some(fx + gx)
            });
            let dists = dist_fn
                .as_ref()
                .map(|df| trace.states.iter().map(|s| df(&s.w)).collect::<Vec<_>>());
            write_trace(out, &trace, trace_format, dists.as_deref())?;
            let report = solve_report_value(
                &file,
                seed,
                &trace,
                json!({ "objective": objective }),
                diag.as_ref(),
            );
            write_json(out, "report.json", &report)?;
            println!(
                "solve: {:?} after {} iterations, residual {:.3e}",
                trace.stop_reason,
                trace.len(),
                trace.states.last().map(|s| s.residual).unwrap_or(0.0)
            );
            exit_code_for(trace.stop_reason)
        }
        Mode::Conic => {
            let payload = &file.payload;
            let c = build_cone(
                payload
                    .c
                    .as_ref()
                    .ok_or_else(|| fail(1, "missing payload.c"))?,
            )
            .map_err(|m| fail(1, m))?;
            let k = build_cone(
                payload
                    .k
                    .as_ref()
                    .ok_or_else(|| fail(1, "missing payload.k"))?,
            )
            .map_err(|m| fail(1, m))?;
            let start = match payload.w0.as_ref() {
                Some(v) => StartMode::Point(vector(v)),
                None => StartMode::AllOnes,
            };
            let limit = conic::nonzero_limit_run(&c, &k, start, &stop)?;
            write_trace(out, &limit.trace, trace_format, None)?;
            let diag = rate_report(&limit.trace, None, None, 50);
            let report = solve_report_value(
                &file,
                seed,
                &limit.trace,
                json!({
                    "limit_norm_cone": limit.norm_cone,
                    "limit_norm_polar": limit.norm_polar,
                }),
                diag.as_ref(),
            );
            write_json(out, "report.json", &report)?;
            println!(
                "solve: {:?}, limit split norms ({:.6e}, {:.6e})",
                limit.trace.stop_reason, limit.norm_cone, limit.norm_polar
            );
            exit_code_for(limit.trace.stop_reason)
        }
        Mode::SubspaceOrthant | Mode::AffineOrthant => {
            let basis = solve_basis(&file)?;
            let n = basis.ambient_dim();
            let w0 = file
                .payload
                .w0
                .as_ref()
                .map(|v| vector(v))
                .unwrap_or_else(|| DVector::from_element(n, 1.0));
            let (f, g) = match file.mode {
                Mode::SubspaceOrthant => (
                    ProxFunction::indicator_subspace_basis(basis.clone()),
                    ProxFunction::indicator_orthant(n),
                ),
                _ => (
                    ProxFunction::indicator_subspace_basis(basis.clone()),
                    ProxFunction::indicator_shifted_orthant(n).map_err(Failure::from)?,
                ),
            };
            let trace = run(&f, &g, &w0, &stop)?;

            let oracle = if matches!(file.mode, Mode::SubspaceOrthant) && n <= 12 {
                SubspaceOrthantOracle::new(&basis).ok()
            } else {
                None
            };
            let dists = oracle.as_ref().map(|o| {
                trace
                    .states
                    .iter()
                    .map(|s| o.dist_to_fixed_points(&s.w).unwrap_or(f64::NAN))
                    .collect::<Vec<_>>()
            });
            let dist_fn = oracle
                .as_ref()
                .map(|o| move |w: &DVector<f64>| o.dist_to_fixed_points(w).unwrap_or(f64::NAN));
            let diag = rate_report(
                &trace,
                dist_fn.as_ref().map(|f| f as &dyn Fn(&DVector<f64>) -> f64),
                None,
                50,
            );
            write_trace(out, &trace, trace_format, dists.as_deref())?;

            let supports = conic::identify_supports(&basis, &w0, &stop);
            let supports_json = match &supports {
                Ok(p) => p.to_json(),
                Err(e) => json!({ "error": e.to_string() }),
            };
            let mut extras = json!({ "supports": supports_json });
            if let Ok(p) = &supports {
                extras["supp_l"] = json!(p.supp_l.iter().map(|i| i + 1).collect::<Vec<_>>());
                extras["supp_lperp"] =
                    json!(p.supp_lperp.iter().map(|i| i + 1).collect::<Vec<_>>());
            }
            if basis.dropped_columns() > 0 {
                extras["basis_warning"] = json!(format!(
                    "{} dependent spanning vectors dropped",
                    basis.dropped_columns()
                ));
            }
            let report = solve_report_value(&file, seed, &trace, extras, diag.as_ref());
            write_json(out, "report.json", &report)?;
            println!(
                "solve: {:?} after {} iterations",
                trace.stop_reason,
                trace.len()
            );
            exit_code_for(trace.stop_reason)
        }
        Mode::Constrained => {
            let prob = build_constrained(&file.payload).map_err(|m| fail(1, m))?;
            let w0 = file
                .payload
                .w0
                .as_ref()
                .map(|v| vector(v))
                .unwrap_or_else(|| DVector::zeros(prob.constraint_dim()));
            let (trace, x_final, y_final) = run_general(&prob, &w0, &stop)?;
            write_trace(out, &trace, trace_format, None)?;
            let feasibility = (prob.a() * &x_final + prob.b() * &y_final - prob.rhs()).norm();
            let diag = rate_report(&trace, None, None, 50);
            let report = solve_report_value(
                &file,
                seed,
                &trace,
                json!({
                    "x": x_final.as_slice(),
                    "y": y_final.as_slice(),
                    "constraint_violation": feasibility,
                }),
                diag.as_ref(),
            );
            write_json(out, "report.json", &report)?;
            println!(
                "solve: {:?} after {} iterations, |Ax+By-b| = {:.3e}",
                trace.stop_reason,
                trace.len(),
                feasibility
            );
            exit_code_for(trace.stop_reason)
        }
    }
}

fn basis_vectors(file: &ProblemFile) -> Result<Option<Vec<Vec<f64>>>, Failure> {
    if let Some(path) = file.payload.basis_csv.as_ref() {
        if file.payload.basis.is_some() {
            return Err(fail(
                1,
                "give either payload.basis or payload.basis_csv, not both",
            ));
        }
        let text =
            fs::read_to_string(path).map_err(|e| fail(1, format!("cannot read {path}: {e}")))?;
        return schema::vectors_from_csv(&text)
            .map(Some)
            .map_err(|m| fail(1, m));
    }
    Ok(file.payload.basis.clone())
}

fn solve_basis(file: &ProblemFile) -> Result<SubspaceBasis, Failure> {
    match file.mode {
        Mode::SubspaceOrthant => {
            let vs = basis_vectors(file)?.ok_or_else(|| fail(1, "missing payload.basis"))?;
            subspace_from_vectors(&vs).map_err(|m| fail(1, m))
        }
        Mode::AffineOrthant => {
            let point = file
                .payload
                .point
                .as_ref()
                .ok_or_else(|| fail(1, "missing payload.point"))?;
            let cols = match basis_vectors(file)? {
                Some(vs) if !vs.is_empty() => {
                    let b = subspace_from_vectors(&vs).map_err(|m| fail(1, m))?;
                    b.basis_matrix().clone()
                }
                _ => nalgebra::DMatrix::zeros(point.len(), 0),
            };
            conic::homogenize(&vector(point), &cols).map_err(Failure::from)
        }
        _ => Err(fail(
            1,
            "supports need mode subspace_orthant or affine_orthant",
        )),
    }
}

fn cmd_supports(
    path: &Path,
    oracle: bool,
    tol: Option<f64>,
    max_iters: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), Failure> {
    let file = load_problem(path)?;
    if !matches!(file.mode, Mode::SubspaceOrthant | Mode::AffineOrthant) {
        return Err(fail(
            1,
            "supports need mode subspace_orthant or affine_orthant",
        ));
    }
    let stop = effective_stop(&file, tol, max_iters);
    let seed = effective_seed(&file, seed);
    let basis = solve_basis(&file)?;
    let n = basis.ambient_dim();
    let w0 = file
        .payload
        .w0
        .as_ref()
        .map(|v| vector(v))
        .unwrap_or_else(|| DVector::from_element(n, 1.0));
    if basis.dropped_columns() > 0 {
        eprintln!(
            "warning: {} dependent spanning vectors dropped",
            basis.dropped_columns()
        );
    }
    let partition = conic::identify_supports(&basis, &w0, &stop)?;
    let mut value = partition.to_json();
    value["seed"] = json!(seed);
    if basis.dropped_columns() > 0 {
        value["basis_warning"] = json!(format!(
            "{} dependent spanning vectors dropped",
            basis.dropped_columns()
        ));
    }
    if oracle {
        let reference = support_partition_oracle(&basis)?;
        let matches =
            reference.supp_l == partition.supp_l && reference.supp_lperp == partition.supp_lperp;
        value["oracle_match"] = json!(matches);
        if !matches {
            write_json(out, "supports.json", &value)?;
            return Err(fail(
                1,
                format!(
                    "oracle mismatch: identified supp_l {:?}, oracle {:?}",
                    partition.supp_l, reference.supp_l
                ),
            ));
        }
    }
    write_json(out, "supports.json", &value)?;
    println!(
        "supports: supp_l = {:?}, supp_lperp = {:?}, identified at {}",
        partition.supp_l.iter().map(|i| i + 1).collect::<Vec<_>>(),
        partition
            .supp_lperp
            .iter()
            .map(|i| i + 1)
            .collect::<Vec<_>>(),
        partition.identified_at
    );
    Ok(())
}

fn cmd_diagnose(
    path: &Path,
    replay: Option<&Path>,
    samples: usize,
    window: usize,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), Failure> {
    if let Some(trace_path) = replay {
        return diagnose_replay(trace_path, window, out);
    }
    let file = load_problem(path)?;
    let seed = effective_seed(&file, seed);
    match file.mode {
        Mode::Unconstrained if file.payload.diag_qp.is_some() => {
            diagnose_diag_qp(&file, samples, seed, out)
        }
        Mode::Constrained if file.payload.equivalence.is_some() => {
            let prob = build_constrained(&file.payload).map_err(|m| fail(1, m))?;
            let spec = file.payload.equivalence.as_ref().unwrap();
            let deviation = equivalence_run(&prob, vector(&spec.x0), vector(&spec.u0), spec.iters)?;
            let report = json!({
                "kind": "admm_equivalence",
                "seed": seed,
                "iters": spec.iters,
                "max_deviation": deviation,
            });
            write_json(out, "report.json", &report)?;
            println!(
                "equivalence max deviation over {} iterations: {deviation:.3e}",
                spec.iters
            );
            Ok(())
        }
        Mode::Unconstrained => {
            let payload = &file.payload;
            let f = build_entry(
                payload
                    .f
                    .as_ref()
                    .ok_or_else(|| fail(1, "missing payload.f"))?,
            )
            .map_err(|m| fail(1, m))?;
            let g = build_entry(
                payload
                    .g
                    .as_ref()
                    .ok_or_else(|| fail(1, "missing payload.g"))?,
            )
            .map_err(|m| fail(1, m))?;
            let w0 = payload
                .w0
                .as_ref()
                .map(|v| vector(v))
                .unwrap_or_else(|| DVector::zeros(f.dim()));
            let stop = file.stop_rule();
            let trace = run(&f, &g, &w0, &stop)?;
            let known = payload.known.as_ref();
            let predicted = known
                .and_then(|k| match (k.mu, k.mu_star) {
                    (Some(mu), Some(ms)) if mu > 0.0 && ms > 0.0 => {
                        Some(4.0 * (1.0 + (1.0 / mu).max(1.0 / ms)))
                    }
                    _ => None,
                })
                .or_else(|| predicted_h_for(&f, &g));
            let wbar = known.and_then(|k| k.wbar.as_ref()).map(|v| vector(v));
            let dist_fn = wbar.map(|w| move |x: &DVector<f64>| (x - &w).norm());
            let diag = fit_rate(
                &trace,
                window.min(trace.len().saturating_sub(2)).max(2),
                dist_fn.as_ref().map(|f| f as &dyn Fn(&DVector<f64>) -> f64),
                predicted,
            )?;
            let mut report = serde_json::to_value(&diag).unwrap();
            report["kind"] = json!("rate_fit");
            report["seed"] = json!(seed);
            write_json(out, "report.json", &report)?;
            println!(
                "diagnose: fitted_rate {:?}, predicted H {:?}, empirical H {:?}",
                diag.fitted_rate, diag.predicted_h, diag.empirical_h
            );
            Ok(())
        }
        Mode::SubspaceOrthant => {
            let basis = solve_basis(&file)?;
            let n = basis.ambient_dim();
            let w0 = file
                .payload
                .w0
                .as_ref()
                .map(|v| vector(v))
                .unwrap_or_else(|| DVector::from_element(n, 1.0));
            let stop = file.stop_rule();
            let f = ProxFunction::indicator_subspace_basis(basis.clone());
            let g = ProxFunction::indicator_orthant(n);
            let trace = run(&f, &g, &w0, &stop)?;
            let oracle = SubspaceOrthantOracle::new(&basis)?;
            let dist_fn =
                move |w: &DVector<f64>| oracle.dist_to_fixed_points(w).unwrap_or(f64::NAN);
            let diag = fit_rate(
                &trace,
                window.min(trace.len().saturating_sub(2)).max(2),
                Some(&dist_fn),
                None,
            );
            let report = match diag {
                Ok(d) => {
                    let mut v = serde_json::to_value(&d).unwrap();
                    v["kind"] = json!("rate_fit");
                    v["seed"] = json!(seed);
                    v
                }
                Err(e) => json!({
                    "kind": "rate_fit",
                    "seed": seed,
                    "error": e.to_string(),
                    "iterations": trace.len(),
                    "stop_reason": trace.stop_reason,
                }),
            };
            write_json(out, "report.json", &report)?;
            println!("diagnose: {report}");
            Ok(())
        }
        _ => Err(fail(1, "no diagnostics defined for this mode/payload")),
    }
}

fn diagnose_diag_qp(
    file: &ProblemFile,
    samples: usize,
    seed: u64,
    out: &Path,
) -> Result<(), Failure> {
    let payload = &file.payload;
    let qp = payload.diag_qp.as_ref().unwrap();
    let f = payload
        .f
        .as_ref()
        .ok_or_else(|| fail(1, "missing payload.f"))?;
    let g = payload
        .g
        .as_ref()
        .ok_or_else(|| fail(1, "missing payload.g"))?;
    if !matches!(f, EntrySpec::IndicatorOrthant { .. }) {
        return Err(fail(1, "diag_qp analysis needs f = indicator_orthant"));
    }
    let (q_rows, c) = match g {
        EntrySpec::Quadratic { q, c } => (q, c),
        _ => return Err(fail(1, "diag_qp analysis needs quadratic g")),
    };
    let n = c.len();
    let mut d = vec![0.0f64; n];
    for (i, row) in q_rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i == j {
                d[i] = v;
            } else if v != 0.0 {
                return Err(fail(1, "diag_qp analysis needs a diagonal quadratic"));
            }
        }
    }
    let mut j0: Vec<usize> = Vec::with_capacity(qp.j.len());
    for &idx in &qp.j {
        if idx == 0 || idx > n {
            return Err(fail(1, format!("index {idx} outside 1..={n}")));
        }
        j0.push(idx - 1);
    }
    let inst = DiagQpInstance {
        d: vector(&d),
        c: vector(c),
        j: j0,
        r: qp.r,
    };
    let (h_exact, feasible) = diag_qp_hoffman(&inst)?;
    let mut report = json!({
        "kind": "diag_qp_hoffman",
        "seed": seed,
        "h_exact": h_exact,
        "feasible_piece": feasible,
    });
    if samples > 0 && inst.d.len() <= 4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let brute = diag_qp_hoffman_bruteforce(&inst, GridSpec { samples }, &mut rng)?;
        report["h_bruteforce"] = json!(brute);
        report["samples"] = json!(samples);
    }
    write_json(out, "report.json", &report)?;
    println!("diagnose: H_exact = {h_exact}, feasible piece = {feasible}");
    Ok(())
}

fn diagnose_replay(trace_path: &Path, window: usize, out: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(trace_path)
        .map_err(|e| fail(1, format!("cannot read {}: {e}", trace_path.display())))?;
    let trace: DRTrace = match serde_json::from_str(&text) {
        Ok(t) => t,
        Err(_) => {
            // Bare residual list: rebuild a minimal trace around it.
            #[derive(serde::Deserialize)]
            struct Residuals {
                residuals: Vec<f64>,
            }
            let r: Residuals = serde_json::from_str(&text)
                .map_err(|e| fail(1, format!("not a trace or residual list: {e}")))?;
            synthetic_trace(&r.residuals)
        }
    };
    let diag = fit_rate(
        &trace,
        window.min(trace.len().saturating_sub(2)).max(2),
        None,
        None,
    )?;
    let mut report = serde_json::to_value(&diag).unwrap();
    report["kind"] = json!("trace_replay");
    write_json(out, "report.json", &report)?;
    println!(
        "replay: fitted_rate {:?} over {} residuals",
        diag.fitted_rate,
        trace.len()
    );
    Ok(())
}

fn synthetic_trace(residuals: &[f64]) -> DRTrace {
    let states = residuals
        .iter()
        .enumerate()
        .map(|(i, &r)| drsplit::dr::DRState {
            k: i + 1,
            w: DVector::zeros(1),
            x: DVector::zeros(1),
            y: DVector::zeros(1),
            u: DVector::zeros(1),
            v: DVector::zeros(1),
            residual: r,
        })
        .collect();
    DRTrace {
        w0: DVector::zeros(1),
        states,
        stop_reason: StopReason::MaxIters,
        stop: StopRule::default(),
        monotonicity_warnings: Vec::new(),
    }
}
