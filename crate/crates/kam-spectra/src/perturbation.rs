//! Builders for admissible perturbations: the discrete Laplacian, shaped
//! profiles V_{m,m+k} = f_k(lambda_m), and explicit diagonal data, plus the
//! decay-norm verifier and the self-adjointness check.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::band::BandOperator;
use crate::error::{KamError, Result};
use crate::lattice::{MultiIndex, WindowGrid};
use crate::sequence::TSequence;
use crate::spectrum::{AssumptionId, AssumptionReport, SpectrumModel};

/// Declarative profile functions evaluated at eigenvalues. The small fixed
/// set keeps experiment configs reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileExpr {
    /// c_0 + c_1 x + c_2 x^2 + ...
    Poly {
        coeffs: Vec<f64>,
    },
    Sin {
        amp: f64,
        freq: f64,
        phase: f64,
    },
    Cos {
        amp: f64,
        freq: f64,
        phase: f64,
    },
    Tanh {
        amp: f64,
        freq: f64,
    },
    /// p(x) / q(x) with polynomial numerator and denominator.
    Rational {
        num: Vec<f64>,
        den: Vec<f64>,
    },
}

fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

impl ProfileExpr {
    pub fn eval(&self, x: f64) -> Result<f64> {
        let v = match self {
            ProfileExpr::Poly { coeffs } => poly_eval(coeffs, x),
            ProfileExpr::Sin { amp, freq, phase } => amp * (freq * x + phase).sin(),
            ProfileExpr::Cos { amp, freq, phase } => amp * (freq * x + phase).cos(),
            ProfileExpr::Tanh { amp, freq } => amp * (freq * x).tanh(),
            ProfileExpr::Rational { num, den } => {
                let d = poly_eval(den, x);
                if d.abs() < 1e-300 {
                    return Err(KamError::Profile(format!(
                        "rational profile denominator vanishes at x = {x}"
                    )));
                }
                poly_eval(num, x) / d
            }
        };
        if !v.is_finite() {
            return Err(KamError::Profile(format!(
                "profile evaluated to a non-finite value at x = {x}"
            )));
        }
        Ok(v)
    }
}

/// One profile diagonal: V_{m,m+offset} = scale * expr(lambda_m).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub offset: MultiIndex,
    #[serde(default = "default_scale")]
    pub scale_re: f64,
    #[serde(default)]
    pub scale_im: f64,
    pub expr: ProfileExpr,
}

fn default_scale() -> f64 {
    1.0
}

impl ProfileEntry {
    pub fn scale(&self) -> Complex64 {
        Complex64::new(self.scale_re, self.scale_im)
    }
}

#[derive(Clone, Debug)]
pub enum PerturbationKind {
    Laplacian,
    Profile(Vec<ProfileEntry>),
    Explicit(Vec<(MultiIndex, Vec<(MultiIndex, Complex64)>)>),
}

#[derive(Clone, Debug)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    /// Declared decay rate this perturbation is built to carry.
    pub alpha: f64,
    /// Request the self-adjoint completion of a profile family.
    pub hermitian: bool,
}

/// True when the first nonzero coordinate is positive; together with zero
/// these offsets form the independent half of a self-adjoint family.
fn canonical_half(k: &MultiIndex) -> bool {
    for &c in k.coords() {
        if c > 0 {
            return true;
        }
        if c < 0 {
            return false;
        }
    }
    false
}

fn full_diagonal(
    grid: &Arc<WindowGrid>,
    spectrum: &Arc<SpectrumModel>,
    k: &MultiIndex,
    mut value: impl FnMut(&MultiIndex) -> Result<Complex64>,
) -> Result<Option<TSequence>> {
    let mut entries = Vec::new();
    for n in grid.points() {
        if grid.flat(&n.add(k)).is_some() {
            entries.push((n.clone(), value(n)?));
        }
    }
    if entries.is_empty() {
        return Ok(None);
    }
    Ok(Some(TSequence::from_entries(grid, spectrum, entries)?))
}

/// Assemble the banded representation of a perturbation on the window.
pub fn build_perturbation(
    spec: &PerturbationSpec,
    model: &Arc<SpectrumModel>,
    grid: &Arc<WindowGrid>,
) -> Result<BandOperator> {
    if spec.alpha <= 0.0 {
        return Err(KamError::Domain(format!(
            "perturbation decay rate must be positive, got {}",
            spec.alpha
        )));
    }
    let d = grid.window().dim();
    let mut op = BandOperator::zero(grid, model);
    op.set_alpha_hint(spec.alpha);
    match &spec.kind {
        PerturbationKind::Laplacian => {
            for axis in 0..d {
                for sign in [-1i64, 1] {
                    let k = MultiIndex::unit(d, axis, sign);
                    if let Some(seq) = full_diagonal(grid, model, &k, |_| Ok(Complex64::ONE))? {
                        op.insert_diagonal(k, seq)?;
                    }
                }
            }
        }
        PerturbationKind::Profile(entries) => {
            if spec.hermitian {
                for e in entries {
                    if !(e.offset.is_zero() || canonical_half(&e.offset)) {
                        return Err(KamError::Profile(format!(
                            "hermitian profiles take offsets from the canonical half only, got {}",
                            e.offset
                        )));
                    }
                    if e.offset.is_zero() && e.scale_im != 0.0 {
                        return Err(KamError::Profile(
                            "the diagonal profile of a hermitian family must be real".into(),
                        ));
                    }
                }
            }
            for e in entries {
                let k = e.offset.clone();
                let scale = e.scale();
                if let Some(seq) = full_diagonal(grid, model, &k, |m| {
                    Ok(scale * e.expr.eval(model.eigenvalue(m)?)?)
                })? {
                    op.insert_diagonal(k.clone(), seq)?;
                }
                if spec.hermitian && !k.is_zero() {
                    // V_{m,m-k} = conj(V_{m-k,m}) = conj(f_k(lambda_{m-k}))
                    let neg = k.neg();
                    if let Some(seq) = full_diagonal(grid, model, &neg, |m| {
                        let src = m.sub(&k);
                        Ok((scale * e.expr.eval(model.eigenvalue(&src)?)?).conj())
                    })? {
                        op.insert_diagonal(neg, seq)?;
                    }
                }
            }
        }
        PerturbationKind::Explicit(diagonals) => {
            for (k, entries) in diagonals {
                let seq = TSequence::from_entries(grid, model, entries.iter().cloned())?;
                op.insert_diagonal(k.clone(), seq)?;
            }
        }
    }
    Ok(op)
}

/// Per-diagonal breakdown of the decay norm.
#[derive(Clone, Debug, Serialize)]
pub struct A4Row {
    pub offset: MultiIndex,
    pub t_norm: f64,
    pub weighted: f64,
}

/// |V|_alpha = sup_k e^{alpha |k|} |V_k|_T, with the per-offset breakdown.
pub fn verify_assumption_a4(
    v: &BandOperator,
    alpha: f64,
    kmax: Option<u64>,
) -> Result<(f64, Vec<A4Row>, AssumptionReport)> {
    if alpha <= 0.0 {
        return Err(KamError::Domain(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let mut rows = Vec::new();
    let mut norm = 0.0_f64;
    let mut witness = Vec::new();
    for k in v.offsets() {
        if let Some(km) = kmax {
            if k.l1_norm() > km {
                continue;
            }
        }
        let t = v.diagonal(k).unwrap().t_norm()?;
        let weighted = if t == 0.0 {
            0.0
        } else {
            (alpha * k.l1_norm() as f64 + t.ln()).exp()
        };
        if weighted > norm {
            norm = weighted;
            witness = vec![k.clone()];
        }
        rows.push(A4Row {
            offset: k.clone(),
            t_norm: t,
            weighted,
        });
    }
    let report = AssumptionReport {
        id: AssumptionId::A4,
        worst_constant: norm,
        worst_witness: witness,
        passed: norm.is_finite(),
        compared_to: None,
    };
    Ok((norm, rows, report))
}

/// Worst deviation from self-adjointness, and whether it stays below
/// 1e-12 of the entry scale.
pub fn hermitian_check(v: &BandOperator) -> (bool, f64) {
    let worst = v.hermitian_violation();
    let scale = v.max_abs_entry().max(1.0);
    (worst <= 1e-12 * scale, worst)
}

/// Grid estimate of (1 + 1/a) sup_k e^{alpha |k|} |f_k o h|_{C1}, the
/// analytic majorant of the decay norm for profile perturbations.
pub fn profile_c1_bound(
    entries: &[ProfileEntry],
    model: &SpectrumModel,
    alpha: f64,
    grid_points: usize,
) -> Result<f64> {
    let transform = model.transform();
    let a = transform.inf_derivative();
    let m = grid_points.max(64);
    let (lo, hi) = if transform.is_periodic() {
        (-0.499, 0.499)
    } else {
        (-4.0, 4.0)
    };
    let step = (hi - lo) / m as f64;
    let mut sup = 0.0_f64;
    for e in entries {
        let mut c0 = 0.0_f64;
        let mut c1 = 0.0_f64;
        for i in 0..=m {
            let x = lo + i as f64 * step;
            let fx = e.expr.eval(transform.apply(x))? * e.scale().norm();
            c0 = c0.max(fx.abs());
            if i > 0 {
                let prev = e.expr.eval(transform.apply(x - step))? * e.scale().norm();
                c1 = c1.max(((fx - prev) / step).abs());
            }
        }
        let weighted = (alpha * e.offset.l1_norm() as f64).exp() * (c0 + c1);
        sup = sup.max(weighted);
    }
    Ok((1.0 + 1.0 / a) * sup)
}
