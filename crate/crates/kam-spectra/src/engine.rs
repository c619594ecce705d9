//! The iterative diagonalization loop.
//!
//! Each step solves the commutator equation for a near-identity conjugation
//! W, inverts it by Neumann series, and replaces the perturbation by
//! W^-1 (P - [P]) (W - I), which squares its size. The step norms, the
//! conjugation increments and the four admissibility conditions are recorded
//! in a per-step ledger; rigorous mode aborts on the first violated
//! condition, empirical mode records and continues.
//!
//! The state variable is the scaled perturbation P_l = eps^{2^l} V^{(l)}
//! itself: eps^{2^l} underflows after a handful of steps, so the bare
//! V^{(l)} is never materialized, and threshold comparisons run in log
//! space.

use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use serde::Serialize;

use crate::band::BandOperator;
use crate::constants::{sup_poly_exp, KamConstants};
use crate::error::{KamError, Result};
use crate::lattice::{MultiIndex, WindowGrid};
use crate::sequence::{reciprocal_difference, TSequence};
use crate::spectrum::{offsets_up_to, SpectrumModel};

pub const DEFAULT_MAX_STEPS: usize = 30;
pub const DEFAULT_CONVERGENCE_TOL_REL: f64 = 1e-14;
pub const DEFAULT_CONDITION_SLACK: f64 = 1e-9;
pub const HOM_RESIDUAL_TOL_REL: f64 = 1e-13;
pub const COLUMN_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KamMode {
    /// Enforce the admissibility threshold and all four step conditions.
    Rigorous,
    /// Iterate regardless, recording which condition fails first.
    Empirical,
}

#[derive(Clone, Debug)]
pub struct KamOptions {
    pub mode: KamMode,
    pub max_steps: usize,
    /// Convergence tolerance relative to the initial perturbation norm.
    pub convergence_tol_rel: f64,
    /// Relative slack absorbed by the condition comparisons.
    pub condition_slack: f64,
}

impl Default for KamOptions {
    fn default() -> Self {
        KamOptions {
            mode: KamMode::Rigorous,
            max_steps: DEFAULT_MAX_STEPS,
            convergence_tol_rel: DEFAULT_CONVERGENCE_TOL_REL,
            condition_slack: DEFAULT_CONDITION_SLACK,
        }
    }
}

/// One row of the iteration ledger.
#[derive(Clone, Debug, Serialize)]
pub struct StepRecord {
    pub ell: u32,
    /// eps^{2^ell}; underflows to zero in deep steps, see `log10_eps_abs`.
    pub eps_ell: f64,
    pub log10_eps_abs: f64,
    pub alpha_ell: f64,
    pub sigma_ell: f64,
    /// |eps_l V^(l)|_{alpha_l}.
    pub norm_v: f64,
    pub norm_w_minus_i: f64,
    pub norm_w_inv_minus_i: f64,
    /// Entrywise residual of the commutator equation.
    pub hom_residual: f64,
    /// sup |entry| of the scaled perturbation, the residual's scale.
    pub entry_scale: f64,
    /// 12 c^2 (2 gamma/(e sigma_l))^{2 gamma} |eps_l V^(l)|_{alpha_l}.
    pub w_bound_rhs: f64,
    pub w_bound_ok: bool,
    /// Accumulated diagonal-correction budget sum and norm.
    pub sum_norms: f64,
    pub w_budget: f64,
    pub cond_a: bool,
    pub cond_b: bool,
    pub cond_c: bool,
    pub cond_d: bool,
    pub wall_time_ms: f64,
}

#[derive(Clone, Debug)]
pub struct KamResult {
    /// lambda_n(eps) on the full window (complex for non-self-adjoint V).
    pub lambda_eps: TSequence,
    /// The accumulated diagonal correction sum_j eps_j [V^(j)] alone.
    pub correction: TSequence,
    pub u: BandOperator,
    pub u_inv: BandOperator,
    /// The last scaled perturbation eps_l V^(l); its norm is `residual`.
    pub final_scaled_v: BandOperator,
    pub converged: bool,
    pub steps: u32,
    pub residual: f64,
    pub initial_norm: f64,
    pub mode: KamMode,
    pub ledger: Vec<StepRecord>,
    pub constants: KamConstants,
}

/// Solution of the commutator equation for one step.
#[derive(Clone, Debug)]
pub struct HomologicalSolution {
    pub w: BandOperator,
    pub w_minus_i: BandOperator,
    /// max entrywise residual of the equation over the solved entries.
    pub residual: f64,
    /// sup |entry| of the scaled perturbation, the residual's scale.
    pub entry_scale: f64,
}

/// Solve [T~, W] + P - [P] = 0 for W with unit diagonal, where the
/// eigenvalues of T~ are lambda_n + correction_n and P = eps * v.
///
/// The solution is exact per entry: W_{m,m+k} = P_{m,m+k} / gap~(m, k).
pub fn solve_homological(
    model: &Arc<SpectrumModel>,
    grid: &Arc<WindowGrid>,
    correction: &TSequence,
    v: &BandOperator,
    eps: f64,
) -> Result<HomologicalSolution> {
    let zero = MultiIndex::zero(grid.window().dim());
    let mut w_minus_i = BandOperator::zero(grid, model);
    let mut residual = 0.0_f64;
    let mut entry_scale = 0.0_f64;
    for k in v.offsets() {
        let seq = v.diagonal(k).unwrap();
        entry_scale = entry_scale.max(seq.sup_abs() * eps.abs());
        if *k == zero {
            continue;
        }
        let recip = reciprocal_difference(model, grid, k, Some(correction))?;
        let wk = recip.pointwise_product(&seq.scale(Complex64::new(eps, 0.0)))?;
        if wk.sup_abs() == 0.0 {
            continue;
        }
        // entrywise check: gap * W + P must cancel exactly up to round-off
        for (n, wv) in wk.iter() {
            let denom = Complex64::new(model.gap(n, k)?, 0.0)
                + (correction.get(&n.add(k)).unwrap() - correction.get(n).unwrap());
            let p = seq.get(n).unwrap() * eps;
            residual = residual.max((denom * wv - p).norm());
        }
        w_minus_i.insert_diagonal(k.clone(), wk)?;
    }
    let w = w_minus_i.plus_identity()?;
    Ok(HomologicalSolution {
        w,
        w_minus_i,
        residual,
        entry_scale,
    })
}

/// Mutable state of the iteration: everything step ell consumes and
/// step ell + 1 needs.
#[derive(Clone, Debug)]
pub struct KamState {
    pub ell: u32,
    /// The original perturbation size (sign carried through step 0 only).
    pub eps: f64,
    /// The scaled perturbation eps^{2^ell} V^{(ell)}.
    pub scaled_v: BandOperator,
    /// Accumulated diagonal correction sum_{j < ell} eps_j [V^{(j)}]; the
    /// running eigenvalues are lambda_n plus this sequence.
    pub correction: TSequence,
    pub u: BandOperator,
    pub u_inv: BandOperator,
    /// sum_{j < ell} |eps_j V^{(j)}|_{alpha_j}.
    pub sum_norms: f64,
    pub ledger: Vec<StepRecord>,
}

impl KamState {
    pub fn initial(
        model: &Arc<SpectrumModel>,
        grid: &Arc<WindowGrid>,
        v: &BandOperator,
        eps: f64,
    ) -> Result<KamState> {
        Ok(KamState {
            ell: 0,
            eps,
            scaled_v: v.scale(Complex64::new(eps, 0.0)),
            correction: TSequence::constant(grid, model, Complex64::ZERO)?,
            u: BandOperator::identity(grid, model),
            u_inv: BandOperator::identity(grid, model),
            sum_norms: 0.0,
            ledger: Vec::new(),
        })
    }

    /// |eps_ell V^{(ell)}|_{alpha_ell}, the convergence quantity.
    pub fn current_norm(&self, constants: &KamConstants) -> Result<f64> {
        let (alpha_ell, _) = constants.schedule(self.ell);
        self.scaled_v.alpha_norm(alpha_ell)
    }
}

/// One conjugation step: update the running eigenvalues with the diagonal
/// part, solve the commutator equation, invert, square the perturbation,
/// accumulate the transforms, and append the ledger record. Rigorous mode
/// errors out on the first violated condition; empirical mode records it
/// and continues.
pub fn kam_step(
    model: &Arc<SpectrumModel>,
    grid: &Arc<WindowGrid>,
    state: KamState,
    constants: &KamConstants,
    options: &KamOptions,
) -> Result<KamState> {
    let started = Instant::now();
    let slack = options.condition_slack;
    let quarter_c = 1.0 / (4.0 * constants.c);
    let zero = MultiIndex::zero(grid.window().dim());
    let KamState {
        ell,
        eps,
        scaled_v,
        mut correction,
        u,
        u_inv,
        mut sum_norms,
        mut ledger,
    } = state;

    let (alpha_ell, sigma_ell) = constants.schedule(ell);
    let norm_v = scaled_v.alpha_norm(alpha_ell)?;
    let two_pow_ell = 2f64.powi(ell as i32);

    // T^{(l+1)} = T^{(l)} + eps_l [V^{(l)}]
    if let Some(d0) = scaled_v.diagonal(&zero) {
        correction.add_assign_where(d0);
    }
    sum_norms += norm_v;
    let w_budget = correction.t_norm()?;
    let cond_a = sum_norms <= quarter_c * (1.0 + slack) && w_budget <= quarter_c * (1.0 + slack);

    let ln_norm_v = scaled_v.log_alpha_norm(alpha_ell)?;
    let cond_b = ln_norm_v <= two_pow_ell * constants.ln_step_base(ell) + slack;

    let hom = solve_homological(model, grid, &correction, &scaled_v, 1.0)?;
    let norm_w_minus_i = hom.w_minus_i.alpha_norm(alpha_ell - sigma_ell)?;
    let w_bound_rhs =
        12.0 * constants.c * constants.c * sup_poly_exp(constants.gamma, sigma_ell) * norm_v;
    let residual_ok = hom.residual <= HOM_RESIDUAL_TOL_REL * hom.entry_scale.max(1e-300);
    let w_bound_ok = norm_w_minus_i <= w_bound_rhs * (1.0 + slack) && residual_ok;

    let w_inv = match options.mode {
        KamMode::Rigorous => hom.w.neumann_inverse(alpha_ell - sigma_ell, sigma_ell)?,
        KamMode::Empirical => hom.w.neumann_series(alpha_ell - 2.0 * sigma_ell)?,
    };
    let w_inv_minus_i = w_inv.minus_identity()?;
    let norm_w_inv_minus_i = w_inv_minus_i.alpha_norm(alpha_ell - 2.0 * sigma_ell)?;

    // eps_{l+1} V^{(l+1)} = W^-1 (P - [P]) (W - I)
    let off = scaled_v.off_diagonal_part();
    let next_scaled = if off.diagonal_count() == 0 || hom.w_minus_i.diagonal_count() == 0 {
        BandOperator::zero(grid, model)
    } else {
        let m1 = off.compose_raw(&hom.w_minus_i, alpha_ell - sigma_ell)?;
        w_inv.compose_raw(&m1, alpha_ell - 2.0 * sigma_ell)?
    };

    // condition increments use the estimate-grade composition; the
    // accumulated transforms use the exact window product so their
    // columns survive to the boundary
    let (alpha_next, sigma_next) = constants.schedule(ell + 1);
    let du = if hom.w_minus_i.diagonal_count() == 0 {
        BandOperator::zero(grid, model)
    } else {
        u.compose_raw(&hom.w_minus_i, alpha_next + sigma_next)?
    };
    let u_next = u.window_product(&hom.w)?;
    let du_inv = if w_inv_minus_i.diagonal_count() == 0 {
        BandOperator::zero(grid, model)
    } else {
        w_inv_minus_i.compose_raw(&u_inv, alpha_next)?
    };
    let u_inv_next = w_inv.window_product(&u_inv)?;

    let ln_tail = two_pow_ell * constants.ln_tail_base() + slack;
    let cond_c = du.log_alpha_norm(alpha_next + sigma_next)? <= ln_tail;
    let cond_d = du_inv.log_alpha_norm(alpha_next)? <= ln_tail;

    let eps_ell = if eps == 0.0 {
        0.0
    } else {
        eps.abs().powf(two_pow_ell) * if ell == 0 { eps.signum() } else { 1.0 }
    };
    ledger.push(StepRecord {
        ell,
        eps_ell,
        log10_eps_abs: two_pow_ell * eps.abs().log10(),
        alpha_ell,
        sigma_ell,
        norm_v,
        norm_w_minus_i,
        norm_w_inv_minus_i,
        hom_residual: hom.residual,
        entry_scale: hom.entry_scale,
        w_bound_rhs,
        w_bound_ok,
        sum_norms,
        w_budget,
        cond_a,
        cond_b,
        cond_c,
        cond_d,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    });

    if options.mode == KamMode::Rigorous {
        let mut failed = Vec::new();
        if !cond_a {
            failed.push("A (cumulative norm budget)");
        }
        if !cond_b {
            failed.push("B (quadratic decay threshold)");
        }
        if !cond_c {
            failed.push("C (transform increment)");
        }
        if !cond_d {
            failed.push("D (inverse transform increment)");
        }
        if !w_bound_ok {
            failed.push("homological bound");
        }
        if !failed.is_empty() {
            return Err(KamError::RigorViolation {
                step: ell as usize,
                what: format!("conditions failed: {}", failed.join(", ")),
            });
        }
    }

    Ok(KamState {
        ell: ell + 1,
        eps,
        scaled_v: next_scaled,
        correction,
        u: u_next,
        u_inv: u_inv_next,
        sum_norms,
        ledger,
    })
}

/// Run the full iteration. `v` is the unscaled perturbation; `eps` the
/// perturbation size (sign carried through the first step only, as every
/// later power eps^{2^l} is positive).
pub fn run_kam(
    model: &Arc<SpectrumModel>,
    grid: &Arc<WindowGrid>,
    v: &BandOperator,
    eps: f64,
    constants: &KamConstants,
    options: &KamOptions,
) -> Result<KamResult> {
    let slack = options.condition_slack;
    if options.mode == KamMode::Rigorous && eps.abs() > constants.eps_star * (1.0 + slack) {
        return Err(KamError::RigorViolation {
            step: 0,
            what: format!(
                "|eps| = {:.6e} exceeds the admissible size {:.6e}",
                eps.abs(),
                constants.eps_star
            ),
        });
    }

    let mut state = KamState::initial(model, grid, v, eps)?;
    let initial_norm = state.current_norm(constants)?;
    let tol = options.convergence_tol_rel * initial_norm;

    let (converged, residual) = loop {
        let norm_v = state.current_norm(constants)?;
        if norm_v <= tol {
            break (true, norm_v);
        }
        if state.ell as usize >= options.max_steps {
            break (false, norm_v);
        }
        state = kam_step(model, grid, state, constants, options)?;
    };

    let lambda_eps = TSequence::from_fn(grid, model, |n| {
        Complex64::new(model.eigenvalue(n).expect("validated on window"), 0.0)
            + state.correction.get(n).unwrap()
    })?;

    Ok(KamResult {
        lambda_eps,
        correction: state.correction,
        u: state.u,
        u_inv: state.u_inv,
        final_scaled_v: state.scaled_v,
        converged,
        steps: state.ell,
        residual,
        initial_norm,
        mode: options.mode,
        ledger: state.ledger,
        constants: constants.clone(),
    })
}

/// Normalized columns of the accumulated transform and the localization
/// prefactors C_n = |U|_{alpha-sigma} / |U e_n|.
#[derive(Clone, Debug)]
pub struct UnitarizeOutput {
    /// vectors[site ordinal] = u_n over window ordinals.
    pub vectors: Vec<Vec<Complex64>>,
    pub c_n: Vec<f64>,
    /// Max |(U* U)_{n,m}|, n != m, over interior pairs; None when skipped.
    pub max_interior_offdiag: Option<f64>,
    pub orthogonal: bool,
}

pub fn unitarize(result: &KamResult, hermitian: bool) -> Result<UnitarizeOutput> {
    let grid = result.u.grid().clone();
    let n_sites = grid.point_count();
    let u_norm = result
        .u
        .alpha_norm(result.constants.alpha - result.constants.sigma)?;

    let mut raw: Vec<Vec<Complex64>> = Vec::with_capacity(n_sites);
    let mut norms = Vec::with_capacity(n_sites);
    for n in grid.points() {
        let col = result.u.column(n);
        let nrm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nrm < COLUMN_FLOOR {
            return Err(KamError::DegenerateColumn(nrm));
        }
        raw.push(col);
        norms.push(nrm);
    }

    let max_interior_offdiag = if hermitian {
        let interior: Vec<usize> = (0..n_sites)
            .filter(|&i| grid.window().is_interior(&grid.points()[i]))
            .collect();
        let mut worst = 0.0_f64;
        for (a, &i) in interior.iter().enumerate() {
            for &j in interior.iter().skip(a + 1) {
                let dot: Complex64 = raw[i].iter().zip(&raw[j]).map(|(x, y)| x.conj() * y).sum();
                worst = worst.max(dot.norm());
            }
        }
        Some(worst)
    } else {
        None
    };

    let vectors = raw
        .into_iter()
        .zip(&norms)
        .map(|(col, &nrm)| col.into_iter().map(|z| z / nrm).collect())
        .collect();
    let c_n = norms.iter().map(|&nrm| u_norm / nrm).collect();

    Ok(UnitarizeOutput {
        vectors,
        c_n,
        max_interior_offdiag,
        orthogonal: hermitian,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DioRow {
    pub k: MultiIndex,
    pub worst_inverse_gap: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DioReport {
    pub kmax: u64,
    pub rows: Vec<DioRow>,
    pub all_pass: bool,
    /// min over rows of bound / worst_inverse_gap.
    pub worst_margin: f64,
}

/// Check 1/|lambda_{n+k}(eps) - lambda_n(eps)| <= 12 c^2 |k|^{2 gamma} over
/// interior pairs. Degenerate gaps are recorded as failures, not errors.
pub fn diophantine_report(
    model: &Arc<SpectrumModel>,
    grid: &Arc<WindowGrid>,
    correction: &TSequence,
    c: f64,
    gamma: f64,
    kmax: u64,
) -> Result<DioReport> {
    let mut rows = Vec::new();
    let mut all_pass = true;
    let mut worst_margin = f64::INFINITY;
    for k in offsets_up_to(grid, kmax) {
        let bound = 12.0 * c * c * (k.l1_norm() as f64).powf(2.0 * gamma);
        let mut worst = 0.0_f64;
        for n in grid.points() {
            if !grid.window().is_interior(n) {
                continue;
            }
            let m = n.add(&k);
            if !grid.window().is_interior(&m) {
                continue;
            }
            let (Some(wn), Some(wm)) = (correction.get(n), correction.get(&m)) else {
                continue;
            };
            let gap = Complex64::new(model.gap(n, &k)?, 0.0) + (wm - wn);
            let inv = if gap.norm() == 0.0 {
                f64::INFINITY
            } else {
                1.0 / gap.norm()
            };
            worst = worst.max(inv);
        }
        let pass = worst <= bound * (1.0 + 1e-12);
        all_pass &= pass;
        if worst > 0.0 {
            worst_margin = worst_margin.min(bound / worst);
        }
        rows.push(DioRow {
            k,
            worst_inverse_gap: worst,
            bound,
            pass,
        });
    }
    Ok(DioReport {
        kmax,
        rows,
        all_pass,
        worst_margin,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LocReport {
    /// The claimed decay rate alpha - sigma.
    pub rate_bound: f64,
    /// max over interior (n, j) of |<e_j, u_n>| / (C_n e^{-rate |j-n|}).
    pub worst_margin: f64,
    pub all_pass: bool,
    /// min over interior n of the fitted decay rate of u_n.
    pub fitted_rate_min: f64,
    pub checked_sites: usize,
}

/// Verify |<e_j, u_n>| <= C_n e^{-(alpha - sigma)|j - n|} for interior n and
/// all window j, and fit the observed decay rate per site.
pub fn localization_report(
    grid: &WindowGrid,
    vectors: &[Vec<Complex64>],
    c_n: &[f64],
    rate_bound: f64,
) -> LocReport {
    let points = grid.points();
    let mut worst = 0.0_f64;
    let mut fitted_min = f64::INFINITY;
    let mut checked = 0usize;
    for (i, n) in points.iter().enumerate() {
        if !grid.window().is_interior(n) {
            continue;
        }
        checked += 1;
        let mut samples: Vec<(f64, f64)> = Vec::new();
        for (j, m) in points.iter().enumerate() {
            let overlap = vectors[i][j].norm();
            let dist = m.sub(n).l1_norm() as f64;
            let cap = c_n[i] * (-rate_bound * dist).exp();
            if cap > 0.0 {
                worst = worst.max(overlap / cap);
            }
            if dist >= 1.0 && overlap > 1e-280 {
                samples.push((dist, overlap.ln()));
            }
        }
        let distinct: std::collections::BTreeSet<u64> =
            samples.iter().map(|(d, _)| *d as u64).collect();
        let rate = if distinct.len() < 2 {
            f64::INFINITY
        } else {
            let n_s = samples.len() as f64;
            let mean_x = samples.iter().map(|(x, _)| x).sum::<f64>() / n_s;
            let mean_y = samples.iter().map(|(_, y)| y).sum::<f64>() / n_s;
            let sxy: f64 = samples
                .iter()
                .map(|(x, y)| (x - mean_x) * (y - mean_y))
                .sum();
            let sxx: f64 = samples.iter().map(|(x, _)| (x - mean_x).powi(2)).sum();
            -(sxy / sxx)
        };
        fitted_min = fitted_min.min(rate);
    }
    LocReport {
        rate_bound,
        worst_margin: worst,
        all_pass: worst <= 1.0 + 1e-10,
        fitted_rate_min: fitted_min,
        checked_sites: checked,
    }
}
