//! Experiment pipeline: build, certify, iterate, cross-check, report.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use num_complex::Complex64;
use serde::Serialize;
use serde_json::json;

use kam_spectra::band::BandOperator;
use kam_spectra::constants::KamConstants;
use kam_spectra::engine::{
    diophantine_report, localization_report, run_kam, unitarize, DioReport, KamMode, KamOptions,
    KamResult, LocReport, StepRecord, UnitarizeOutput,
};
use kam_spectra::error::KamError;
use kam_spectra::lattice::{default_interior_radius, Window, WindowGrid, WindowShape};
use kam_spectra::oracle::{dense_symmetric_eig, match_spectra, DenseEigResult, MatchReport};
use kam_spectra::perturbation::{
    build_perturbation, hermitian_check, verify_assumption_a4, A4Row, PerturbationKind,
    PerturbationSpec,
};
use kam_spectra::spectrum::{
    certify_constants, check_h_conditions, diophantine_scan, AssumptionReport, SpectrumModel,
    SpectrumParams,
};

use crate::config::{
    ConstantSource, EpsilonSpec, ExperimentConfig, PerturbationKindConfig, TransformConfig,
};

/// Exit codes of the batch front-end.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RIGOR: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Classify a pipeline error into an exit code.
pub fn exit_code_for(err: &anyhow::Error) -> i32 {
    if let Some(kam) = err.downcast_ref::<KamError>() {
        return match kam {
            KamError::RigorViolation { .. } => EXIT_RIGOR,
            _ => EXIT_NUMERIC,
        };
    }
    EXIT_CONFIG
}

/// Overrides passed on the command line on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<String>,
    pub radius: Option<i64>,
    pub trace: bool,
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub window: Window,
    pub grid: Arc<WindowGrid>,
    pub model: Arc<SpectrumModel>,
    pub c_source: &'static str,
    pub scan_reports: Option<[AssumptionReport; 3]>,
    pub v: BandOperator,
    pub v_alpha_norm: f64,
    pub a4_rows: Vec<A4Row>,
    pub hermitian_ok: bool,
    pub hermitian_violation: f64,
    pub constants: KamConstants,
    pub epsilon: f64,
    pub mode: KamMode,
}

fn scan_defaults(dim: usize, radius: i64, kmax: Option<u64>, jmax: Option<u64>) -> (u64, u64) {
    let span = (2 * radius) as u64;
    let default = if dim == 1 { span } else { span.min(8) };
    (
        kmax.unwrap_or(default).min(span),
        jmax.unwrap_or(default).min(span),
    )
}

/// Resolve the config into a ready-to-run experiment: window, validated
/// model with a certified or declared c, perturbation and thresholds.
pub fn prepare(config: &ExperimentConfig, overrides: &Overrides) -> Result<Experiment> {
    let mut config = config.clone();
    if let Some(mode) = &overrides.mode {
        config.run.mode = mode.clone();
    }
    if let Some(radius) = overrides.radius {
        config.run.radius = radius;
    }
    if overrides.trace {
        config.outputs.trace = true;
    }
    config.validate().map_err(|e| anyhow!("{e}"))?;

    let alpha = config.perturbation.alpha;
    let sigma = (alpha / 2.0).min(1.0);
    let interior = config
        .run
        .interior_radius
        .unwrap_or_else(|| default_interior_radius(config.run.radius, alpha - sigma));
    let window = Window::new(
        config.model.dimension,
        config.run.radius,
        WindowShape::BoxLinf,
        Some(interior),
    )?;
    let grid = WindowGrid::new(window);

    let model = SpectrumModel::build(
        SpectrumParams {
            dim: config.model.dimension,
            omega: config.model.omega.clone(),
            transform: config.model.transform.to_transform(),
            gamma: config.model.gamma,
            c: None,
            base_point: config.base_point(),
        },
        &window,
    )?;

    let (model, c_source, scan_reports) = match &config.model.c {
        ConstantSource::Declared { declared } => (model.with_c(*declared), "declared", None),
        ConstantSource::Scan { scan } => {
            let (kmax, jmax) = scan_defaults(
                config.model.dimension,
                config.run.radius,
                scan.kmax,
                scan.jmax,
            );
            let (c, reports) = certify_constants(&model, &grid, kmax, jmax)?;
            (model.with_c(c), "scan", Some(reports))
        }
    };
    model.validate_periodic_diophantine(&window)?;

    let kind = match &config.perturbation.kind {
        PerturbationKindConfig::Laplacian => PerturbationKind::Laplacian,
        PerturbationKindConfig::Profile { entries } => PerturbationKind::Profile(entries.clone()),
        PerturbationKindConfig::Explicit { diagonals } => PerturbationKind::Explicit(
            diagonals
                .iter()
                .map(|d| {
                    (
                        kam_spectra::MultiIndex::new(d.offset.clone()),
                        d.entries
                            .iter()
                            .map(|(n, re, im)| {
                                (
                                    kam_spectra::MultiIndex::new(n.clone()),
                                    Complex64::new(*re, *im),
                                )
                            })
                            .collect(),
                    )
                })
                .collect(),
        ),
    };
    let spec = PerturbationSpec {
        kind,
        alpha,
        hermitian: config.perturbation.hermitian,
    };
    let v = build_perturbation(&spec, &model, &grid)?;
    let (v_alpha_norm, a4_rows, _) = verify_assumption_a4(&v, alpha, None)?;
    let (hermitian_ok, hermitian_violation) = hermitian_check(&v);

    let c = model.c().expect("c resolved above");
    let constants = KamConstants::new(
        c,
        config.model.gamma,
        config.model.dimension,
        alpha,
        v_alpha_norm,
    )?;

    let epsilon = match &config.run.epsilon {
        EpsilonSpec::Value(v) => *v,
        EpsilonSpec::Named(_) => constants.eps_star,
        EpsilonSpec::Capped { cap } => constants.eps_star.min(*cap),
    };
    let mode = match config.run.mode.as_str() {
        "rigorous" => KamMode::Rigorous,
        _ => KamMode::Empirical,
    };

    Ok(Experiment {
        config,
        window,
        grid,
        model,
        c_source,
        scan_reports,
        v,
        v_alpha_norm,
        a4_rows,
        hermitian_ok,
        hermitian_violation,
        constants,
        epsilon,
        mode,
    })
}

pub struct RunArtifacts {
    pub result: KamResult,
    pub dio: DioReport,
    pub unit: Option<UnitarizeOutput>,
    pub loc: Option<LocReport>,
    pub oracle: Option<(DenseEigResult, MatchReport)>,
    pub wall_ms: f64,
}

/// The full pipeline on a prepared experiment.
pub fn execute(exp: &Experiment) -> Result<RunArtifacts> {
    let started = Instant::now();
    let options = KamOptions {
        mode: exp.mode,
        max_steps: exp.config.run.max_steps,
        convergence_tol_rel: exp.config.run.tolerances.convergence_tol_rel,
        condition_slack: exp.config.run.tolerances.condition_slack,
    };
    let result = run_kam(
        &exp.model,
        &exp.grid,
        &exp.v,
        exp.epsilon,
        &exp.constants,
        &options,
    )?;

    let kmax_report = exp
        .config
        .run
        .kmax_report
        .unwrap_or(15)
        .min((2 * exp.window.radius()) as u64);
    let dio = diophantine_report(
        &exp.model,
        &exp.grid,
        &result.correction,
        exp.constants.c,
        exp.constants.gamma,
        kmax_report,
    )?;

    let (unit, loc) = if exp.hermitian_ok {
        let unit = unitarize(&result, true)?;
        let loc = localization_report(
            &exp.grid,
            &unit.vectors,
            &unit.c_n,
            exp.constants.alpha - exp.constants.sigma,
        );
        (Some(unit), Some(loc))
    } else {
        let unit = unitarize(&result, false)?;
        (Some(unit), None)
    };

    let want_oracle = exp.config.run.oracle.unwrap_or(exp.hermitian_ok);
    let oracle = if want_oracle && exp.hermitian_ok {
        let dense = dense_t_plus_v(exp)?;
        let eig = dense_symmetric_eig(&dense, exp.config.run.tolerances.oracle_tol)?;
        let lambda: Vec<f64> = exp
            .grid
            .points()
            .iter()
            .map(|n| result.lambda_eps.get(n).unwrap().re)
            .collect();
        let unit_ref = unit.as_ref().expect("unitarize ran above");
        let report = match_spectra(&exp.grid, &lambda, &unit_ref.vectors, &eig)?;
        Some((eig, report))
    } else {
        None
    };

    Ok(RunArtifacts {
        result,
        dio,
        unit,
        loc,
        oracle,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

pub fn dense_t_plus_v(exp: &Experiment) -> Result<kam_spectra::DenseMatrix> {
    let mut dense = exp.v.scale(Complex64::new(exp.epsilon, 0.0)).to_dense()?;
    for (i, pt) in exp.grid.points().iter().enumerate() {
        dense[(i, i)] += Complex64::new(exp.model.eigenvalue(pt)?, 0.0);
    }
    Ok(dense)
}

fn ledger_without_wall(ledger: &[StepRecord]) -> Result<Vec<serde_json::Value>> {
    ledger
        .iter()
        .map(|rec| {
            let mut v = serde_json::to_value(rec)?;
            v.as_object_mut()
                .expect("step record serializes to an object")
                .remove("wall_time_ms");
            Ok(v)
        })
        .collect()
}

/// The versioned report document. Wall-clock data is segregated under the
/// "timing" key so that everything else is bit-stable across runs.
pub fn build_report(exp: &Experiment, art: &RunArtifacts) -> Result<serde_json::Value> {
    let per_step_ms: Vec<f64> = art.result.ledger.iter().map(|r| r.wall_time_ms).collect();
    let unit_summary = art.unit.as_ref().map(|u| {
        json!({
            "orthogonal": u.orthogonal,
            "max_interior_offdiag": u.max_interior_offdiag,
            "ortho_tol": exp.config.run.tolerances.ortho_tol,
            "pass": u.max_interior_offdiag
                .map(|v| v <= exp.config.run.tolerances.ortho_tol),
        })
    });
    let match_summary = art.oracle.as_ref().map(|(_, m)| {
        json!({
            "max_delta_lambda": m.max_delta_lambda,
            "max_overlap_deficit": m.max_overlap_deficit,
            "interior_pairs": m.rows.len(),
        })
    });
    Ok(json!({
        "schema": "kam-spectra/1",
        "config": serde_json::to_value(&exp.config)?,
        "window": {
            "dimension": exp.window.dim(),
            "radius": exp.window.radius(),
            "interior_radius": exp.window.interior_radius(),
            "points": exp.grid.point_count(),
        },
        "certification": {
            "source": exp.c_source,
            "c": exp.constants.c,
            "scans": exp.scan_reports.as_ref().map(|r| serde_json::to_value(r).unwrap()),
            "spectral_scale": exp.model.spectral_scale(),
            "denom_floor": exp.model.denom_floor(),
        },
        "perturbation": {
            "v_alpha_norm": exp.v_alpha_norm,
            "hermitian": exp.hermitian_ok,
            "hermitian_violation": exp.hermitian_violation,
            "a4_breakdown": serde_json::to_value(&exp.a4_rows)?,
        },
        "constants": serde_json::to_value(&exp.constants)?,
        "run": {
            "epsilon": exp.epsilon,
            "mode": serde_json::to_value(exp.mode)?,
            "converged": art.result.converged,
            "steps": art.result.steps,
            "residual": art.result.residual,
            "initial_norm": art.result.initial_norm,
        },
        "ledger": ledger_without_wall(&art.result.ledger)?,
        "diophantine": serde_json::to_value(&art.dio)?,
        "localization": art.loc.as_ref().map(|l| serde_json::to_value(l).unwrap()),
        "unitarity": unit_summary,
        "match": match_summary,
        "timing": {
            "wall_ms_total": art.wall_ms,
            "per_step_ms": per_step_ms,
        },
    }))
}

fn write_atomic(path: &std::path::Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Shortest round-trip decimal for CSV cells.
fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn write_eigenvalues_csv(
    path: &std::path::Path,
    exp: &Experiment,
    art: &RunArtifacts,
) -> Result<()> {
    let mut out = String::from("n,lambda,lambda_eps_re,lambda_eps_im,oracle_theta\n");
    // oracle values arranged per site via the overlap pairing
    let theta_by_site: Option<Vec<Option<f64>>> = art.oracle.as_ref().map(|(eig, _)| {
        (0..exp.grid.point_count())
            .map(|site| Some(eig.values[eig.order_map[site]]))
            .collect()
    });
    for (i, n) in exp.grid.points().iter().enumerate() {
        let lambda = exp.model.eigenvalue(n)?;
        let leps = art.result.lambda_eps.get(n).unwrap();
        let theta = theta_by_site
            .as_ref()
            .and_then(|t| t[i])
            .map(fmt_f64)
            .unwrap_or_default();
        out.push_str(&format!(
            "{n},{},{},{},{theta}\n",
            fmt_f64(lambda),
            fmt_f64(leps.re),
            fmt_f64(leps.im)
        ));
    }
    write_atomic(path, &out)
}

pub fn write_vectors_csv(
    path: &std::path::Path,
    exp: &Experiment,
    art: &RunArtifacts,
) -> Result<()> {
    let Some(unit) = art.unit.as_ref() else {
        return Ok(());
    };
    let mut out = String::from("n,j,re,im\n");
    for (i, n) in exp.grid.points().iter().enumerate() {
        if !exp.window.is_interior(n) {
            continue;
        }
        for (j, m) in exp.grid.points().iter().enumerate() {
            let z = unit.vectors[i][j];
            if z.norm() > 0.0 {
                out.push_str(&format!("{n},{m},{},{}\n", fmt_f64(z.re), fmt_f64(z.im)));
            }
        }
    }
    write_atomic(path, &out)
}

pub fn write_ledger_jsonl(path: &std::path::Path, art: &RunArtifacts) -> Result<()> {
    let mut out = String::new();
    for rec in &art.result.ledger {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    write_atomic(path, &out)
}

/// The `run` verb: full pipeline plus artifact emission.
pub fn run_experiment(
    config: &ExperimentConfig,
    overrides: &Overrides,
) -> Result<serde_json::Value> {
    let exp = prepare(config, overrides)?;
    let art = execute(&exp)?;
    let report = build_report(&exp, &art)?;
    if let Some(path) = &exp.config.outputs.report {
        write_atomic(path, &format!("{:#}\n", report))?;
    }
    if let Some(path) = &exp.config.outputs.eigenvalues_csv {
        write_eigenvalues_csv(path, &exp, &art)?;
    }
    if let Some(path) = &exp.config.outputs.vectors_csv {
        write_vectors_csv(path, &exp, &art)?;
    }
    if exp.config.outputs.trace {
        if let Some(path) = &exp.config.outputs.ledger {
            write_ledger_jsonl(path, &art)?;
        }
    }
    Ok(report)
}

/// The `scan` verb: assumption verification only.
pub fn run_scan(config: &ExperimentConfig, overrides: &Overrides) -> Result<serde_json::Value> {
    let exp = prepare(config, overrides)?;
    let dio = diophantine_scan(
        exp.model.omega(),
        (2 * exp.window.radius()) as u64,
        exp.constants.gamma,
        exp.model.transform().is_periodic(),
    )?;
    let h = check_h_conditions(exp.model.transform(), dio.c_est, 200)?;
    let report = json!({
        "schema": "kam-spectra/1",
        "config": serde_json::to_value(&exp.config)?,
        "certification": {
            "source": exp.c_source,
            "c": exp.constants.c,
            "scans": exp.scan_reports.as_ref().map(|r| serde_json::to_value(r).unwrap()),
        },
        "frequency_scan": serde_json::to_value(&dio)?,
        "h_conditions": serde_json::to_value(&h)?,
        "a4": {
            "v_alpha_norm": exp.v_alpha_norm,
            "breakdown": serde_json::to_value(&exp.a4_rows)?,
            "hermitian": exp.hermitian_ok,
        },
    });
    if let Some(path) = &exp.config.outputs.report {
        write_atomic(path, &format!("{:#}\n", report))?;
    }
    Ok(report)
}

/// The `constants` verb.
pub fn run_constants(
    config: &ExperimentConfig,
    overrides: &Overrides,
) -> Result<serde_json::Value> {
    let exp = prepare(config, overrides)?;
    Ok(json!({
        "schema": "kam-spectra/1",
        "constants": serde_json::to_value(&exp.constants)?,
        "epsilon_resolved": exp.epsilon,
        "certification": { "source": exp.c_source, "c": exp.constants.c },
    }))
}

/// The `oracle` verb: dense diagonalization only.
pub fn run_oracle(config: &ExperimentConfig, overrides: &Overrides) -> Result<serde_json::Value> {
    let exp = prepare(config, overrides)?;
    let dense = dense_t_plus_v(&exp)?;
    let eig = dense_symmetric_eig(&dense, exp.config.run.tolerances.oracle_tol)?;
    if let Some(path) = &exp.config.outputs.eigenvalues_csv {
        let mut out = String::from("n,lambda,lambda_eps_re,lambda_eps_im,oracle_theta\n");
        for (i, n) in exp.grid.points().iter().enumerate() {
            let lambda = exp.model.eigenvalue(n)?;
            let theta = eig.values[eig.order_map[i]];
            out.push_str(&format!("{n},{},,,{}\n", fmt_f64(lambda), fmt_f64(theta)));
        }
        write_atomic(path, &out)?;
    }
    Ok(json!({
        "schema": "kam-spectra/1",
        "epsilon": exp.epsilon,
        "matrix_side": exp.grid.point_count(),
        "eigenvalues": eig.values,
    }))
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub converged: Option<bool>,
    pub steps: Option<u32>,
    pub residual: Option<f64>,
    pub worst_dio_margin: Option<f64>,
    pub fitted_loc_rate: Option<f64>,
    pub status: String,
}

enum SweepParam {
    Epsilon(f64),
    Omega(Vec<f64>),
}

fn sweep_one(config: &ExperimentConfig, overrides: &Overrides, param: &SweepParam) -> SweepRow {
    let mut cfg = config.clone();
    cfg.run.epsilon_sweep = None;
    cfg.run.omega_sweep = None;
    let label = match param {
        SweepParam::Epsilon(e) => {
            cfg.run.epsilon = EpsilonSpec::Value(*e);
            fmt_f64(*e)
        }
        SweepParam::Omega(omega) => {
            cfg.model.omega = omega.clone();
            omega
                .iter()
                .map(|w| fmt_f64(*w))
                .collect::<Vec<_>>()
                .join(";")
        }
    };
    cfg.outputs = Default::default();
    let outcome = prepare(&cfg, overrides).and_then(|exp| Ok((execute(&exp)?, exp)));
    match outcome {
        Ok((art, _exp)) => SweepRow {
            param: label,
            converged: Some(art.result.converged),
            steps: Some(art.result.steps),
            residual: Some(art.result.residual),
            worst_dio_margin: Some(art.dio.worst_margin),
            fitted_loc_rate: art.loc.as_ref().map(|l| l.fitted_rate_min),
            status: "ok".into(),
        },
        Err(e) => SweepRow {
            param: label,
            converged: None,
            steps: None,
            residual: None,
            worst_dio_margin: None,
            fitted_loc_rate: None,
            status: format!("error: {e}"),
        },
    }
}

fn worker_count(rows: usize) -> usize {
    let cap = std::env::var("KAM_SPECTRA_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1);
    let avail = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    cap.unwrap_or(avail).min(rows.max(1))
}

/// The `sweep` verb: one row per parameter value, failures recorded
/// per-row, deterministic row order.
pub fn run_sweep(config: &ExperimentConfig, overrides: &Overrides) -> Result<serde_json::Value> {
    let params: Vec<SweepParam> = if let Some(eps) = &config.run.epsilon_sweep {
        eps.iter().map(|e| SweepParam::Epsilon(*e)).collect()
    } else if let Some(omegas) = &config.run.omega_sweep {
        omegas
            .iter()
            .map(|o| SweepParam::Omega(o.clone()))
            .collect()
    } else {
        return Err(anyhow!(
            "sweep requires run.epsilon_sweep or run.omega_sweep"
        ));
    };

    let workers = worker_count(params.len());
    let mut rows: Vec<Option<SweepRow>> = (0..params.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let rows_mutex = std::sync::Mutex::new(&mut rows);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= params.len() {
                    break;
                }
                let row = sweep_one(config, overrides, &params[i]);
                rows_mutex.lock().unwrap()[i] = Some(row);
            });
        }
    });
    let rows: Vec<SweepRow> = rows.into_iter().map(|r| r.unwrap()).collect();

    if let Some(path) = &config.outputs.sweep_csv {
        let mut out = String::from(
            "param,converged,steps,residual,worst_dio_margin,fitted_loc_rate,status\n",
        );
        for r in &rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.param,
                r.converged.map(|b| b.to_string()).unwrap_or_default(),
                r.steps.map(|s| s.to_string()).unwrap_or_default(),
                r.residual.map(fmt_f64).unwrap_or_default(),
                r.worst_dio_margin.map(fmt_f64).unwrap_or_default(),
                r.fitted_loc_rate.map(fmt_f64).unwrap_or_default(),
                r.status.replace(',', ";"),
            ));
        }
        write_atomic(path, &out)?;
    }
    Ok(json!({
        "schema": "kam-spectra/1",
        "rows": serde_json::to_value(&rows)?,
        "workers": workers,
    }))
}

impl ExperimentConfig {
    /// Echo helper used by the report tests.
    pub fn transform_kind(&self) -> &'static str {
        match self.model.transform {
            TransformConfig::Identity => "identity",
            TransformConfig::Cubic { .. } => "cubic",
            TransformConfig::TanPi => "tan_pi",
            TransformConfig::Sawtooth => "sawtooth",
        }
    }
}

/// Write to stdout, used by main for the verb summaries.
pub fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{value:#}")?;
    Ok(())
}
