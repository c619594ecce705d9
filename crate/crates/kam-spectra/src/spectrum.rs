//! Unperturbed eigenvalue models lambda_n = h(omega . n) and numerical
//! verifiers for the gap conditions they must satisfy.
//!
//! Gaps lambda_{n+k} - lambda_n are evaluated through per-transform closed
//! forms that avoid the catastrophic cancellation of naive subtraction:
//! the linear model returns omega . k exactly, the tangent model uses
//! tan A - tan B = sin(A - B) / (cos A cos B), the cubic model factors out
//! omega . k, and the sawtooth keeps its integer jumps exact. Small
//! denominators are the whole subject here, so this matters.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::lattice::{MultiIndex, Window, WindowGrid};

/// Margin around the poles of tan(pi x) below which model construction fails.
pub const POLE_MARGIN: f64 = 1e-8;

/// Relative factor defining the degenerate-gap floor.
pub const DENOM_FLOOR_REL: f64 = 1e-12;

/// Safety factor applied to scanned constants when certifying c.
pub const CERTIFY_SAFETY: f64 = 1.05;

/// The map h applied to omega . n.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// h(x) = x + beta x^3, beta >= 0.
    Cubic {
        beta: f64,
    },
    /// h(x) = tan(pi x), 1-periodic with poles on Z + 1/2.
    TanPi,
    /// h(x) = x + j_x, the unique shift of x into (-1/2, 1/2].
    Sawtooth,
}

/// Reduce x to r = x - round(x) in [-1/2, 1/2] together with the parity of
/// the removed integer. sin(pi x) = s * sin(pi r), cos(pi x) = s * cos(pi r).
fn reduce_half(x: f64) -> (f64, f64) {
    let m = x.round();
    let r = x - m;
    let sign = if (m as i64) % 2 == 0 { 1.0 } else { -1.0 };
    (r, sign)
}

fn sin_pi(x: f64) -> f64 {
    let (r, s) = reduce_half(x);
    s * (PI * r).sin()
}

fn cos_pi(x: f64) -> f64 {
    let (r, s) = reduce_half(x);
    s * (PI * r).cos()
}

/// Integer shift of x into (-1/2, 1/2].
fn saw_shift(x: f64) -> f64 {
    (0.5 - x).floor()
}

impl Transform {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Cubic { beta } => x + beta * x * x * x,
            Transform::TanPi => {
                let (r, _) = reduce_half(x);
                (PI * r).tan()
            }
            Transform::Sawtooth => x + saw_shift(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Cubic { beta } => 1.0 + 3.0 * beta * x * x,
            Transform::TanPi => {
                let c = cos_pi(x);
                PI / (c * c)
            }
            Transform::Sawtooth => 1.0,
        }
    }

    /// inf |h'| over the relevant domain, known in closed form for all four
    /// families (attained at x = 0 in each case).
    pub fn inf_derivative(&self) -> f64 {
        match self {
            Transform::Identity | Transform::Cubic { .. } | Transform::Sawtooth => 1.0,
            Transform::TanPi => PI,
        }
    }

    /// True for the 1-periodic families of the second construction.
    pub fn is_periodic(&self) -> bool {
        matches!(self, Transform::TanPi | Transform::Sawtooth)
    }
}

/// Generator of the unperturbed eigenvalues lambda_n = h(omega . n), with the
/// gap metadata (c, gamma) the thresholds are computed from.
#[derive(Clone, Debug)]
pub struct SpectrumModel {
    dim: usize,
    omega: Vec<f64>,
    transform: Transform,
    gamma: f64,
    c: Option<f64>,
    base_point: MultiIndex,
    denom_floor: f64,
    scale: f64,
    cache_radius: i64,
    cache_side: i64,
    base_gap_cache: Arc<Vec<f64>>,
}

/// Construction parameters for [`SpectrumModel`].
#[derive(Clone, Debug)]
pub struct SpectrumParams {
    pub dim: usize,
    pub omega: Vec<f64>,
    pub transform: Transform,
    pub gamma: f64,
    pub c: Option<f64>,
    pub base_point: Option<MultiIndex>,
}

impl SpectrumModel {
    /// Build and validate a model against a working window: eigenvalues must
    /// be finite, away from poles, and pairwise distinct above the floor.
    /// Also precomputes the base-point gap table over offsets up to 2R.
    pub fn build(params: SpectrumParams, window: &Window) -> Result<Arc<Self>> {
        if params.dim == 0 || params.omega.len() != params.dim {
            return Err(KamError::DimensionMismatch {
                expected: params.dim.max(1),
                got: params.omega.len(),
            });
        }
        if params.gamma <= 0.0 {
            return Err(KamError::Domain("gamma must be positive".into()));
        }
        if let Some(c) = params.c {
            if c < 1.0 {
                return Err(KamError::Domain(format!("c must be >= 1, got {c}")));
            }
        }
        let base_point = params
            .base_point
            .clone()
            .unwrap_or_else(|| MultiIndex::zero(params.dim));
        if base_point.dim() != params.dim {
            return Err(KamError::DimensionMismatch {
                expected: params.dim,
                got: base_point.dim(),
            });
        }

        let mut model = SpectrumModel {
            dim: params.dim,
            omega: params.omega,
            transform: params.transform,
            gamma: params.gamma,
            c: params.c,
            base_point,
            denom_floor: DENOM_FLOOR_REL,
            scale: 1.0,
            cache_radius: 0,
            cache_side: 1,
            base_gap_cache: Arc::new(Vec::new()),
        };

        let grid = WindowGrid::new(*window);
        let mut values = Vec::with_capacity(grid.point_count());
        for n in grid.points() {
            values.push(model.eigenvalue(n)?);
        }
        let scale = values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        model.scale = scale;
        model.denom_floor = DENOM_FLOOR_REL * scale;

        // pairwise distinctness: min gap over the window equals the min
        // adjacent difference of the sorted values
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in sorted.windows(2) {
            let gap = pair[1] - pair[0];
            if gap.abs() < model.denom_floor {
                return Err(KamError::DegenerateSpectrum {
                    gap: gap.abs(),
                    floor: model.denom_floor,
                    witness: format!("values {} and {}", pair[0], pair[1]),
                });
            }
        }

        // base-point gap table over the difference range of the window
        let cache_radius = 2 * window.radius();
        let cache_side = 2 * cache_radius + 1;
        let cells = (cache_side as usize).pow(model.dim as u32);
        let mut cache = vec![f64::NAN; cells];
        let mut cur = vec![-cache_radius; model.dim];
        for slot in cache.iter_mut() {
            let j = MultiIndex::new(cur.clone());
            *slot = model.gap(&model.base_point.clone(), &j)?;
            let mut axis = model.dim;
            while axis > 0 {
                axis -= 1;
                if cur[axis] < cache_radius {
                    cur[axis] += 1;
                    for c in cur.iter_mut().skip(axis + 1) {
                        *c = -cache_radius;
                    }
                    break;
                }
            }
        }
        model.cache_radius = cache_radius;
        model.cache_side = cache_side;
        model.base_gap_cache = Arc::new(cache);

        Ok(Arc::new(model))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn c(&self) -> Option<f64> {
        self.c
    }

    pub fn base_point(&self) -> &MultiIndex {
        &self.base_point
    }

    pub fn denom_floor(&self) -> f64 {
        self.denom_floor
    }

    pub fn spectral_scale(&self) -> f64 {
        self.scale
    }

    /// Copy of the model carrying a (certified or declared) constant c.
    pub fn with_c(&self, c: f64) -> Arc<Self> {
        let mut m = self.clone();
        m.c = Some(c);
        Arc::new(m)
    }

    pub fn mu(&self, n: &MultiIndex) -> f64 {
        n.coords()
            .iter()
            .zip(&self.omega)
            .map(|(&c, &w)| c as f64 * w)
            .sum()
    }

    pub fn eigenvalue(&self, n: &MultiIndex) -> Result<f64> {
        let x = self.mu(n);
        if let Transform::TanPi = self.transform {
            let (r, _) = reduce_half(x);
            if (r.abs() - 0.5).abs() < POLE_MARGIN {
                return Err(KamError::PoleProximity(n.to_string()));
            }
        }
        let v = self.transform.apply(x);
        if !v.is_finite() {
            return Err(KamError::PoleProximity(n.to_string()));
        }
        Ok(v)
    }

    /// lambda_{n+k} - lambda_n in cancellation-free form.
    pub fn gap(&self, n: &MultiIndex, k: &MultiIndex) -> Result<f64> {
        let mu_k = self.mu(k);
        let g = match self.transform {
            Transform::Identity => mu_k,
            Transform::Cubic { beta } => {
                let x = self.mu(&n.add(k));
                let y = self.mu(n);
                mu_k * (1.0 + beta * (x * x + x * y + y * y))
            }
            Transform::TanPi => {
                let ca = cos_pi(self.mu(&n.add(k)));
                let cb = cos_pi(self.mu(n));
                sin_pi(mu_k) / (ca * cb)
            }
            Transform::Sawtooth => {
                let jn = saw_shift(self.mu(n));
                let jnk = saw_shift(self.mu(&n.add(k)));
                mu_k + (jnk - jn)
            }
        };
        if !g.is_finite() {
            return Err(KamError::PoleProximity(format!("gap at n={n}, k={k}")));
        }
        Ok(g)
    }

    /// lambda_{base+j} - lambda_base, cached over the validation range.
    pub fn base_gap(&self, j: &MultiIndex) -> Result<f64> {
        if j.linf_norm() <= self.cache_radius as u64 {
            let mut flat: i64 = 0;
            for &c in j.coords() {
                flat = flat * self.cache_side + (c + self.cache_radius);
            }
            return Ok(self.base_gap_cache[flat as usize]);
        }
        self.gap(&self.base_point.clone(), j)
    }

    /// |lambda_{base+j} - lambda_base| with the degeneracy floor enforced.
    pub fn base_gap_abs_checked(&self, j: &MultiIndex) -> Result<f64> {
        let g = self.base_gap(j)?.abs();
        if g < self.denom_floor {
            return Err(KamError::DegenerateSpectrum {
                gap: g,
                floor: self.denom_floor,
                witness: format!("base gap at j={j}"),
            });
        }
        Ok(g)
    }

    /// Diophantine precheck for the periodic families: the stored (c, gamma)
    /// must cover the small denominators the window actually exhibits, i.e.
    /// the first gap scan must pass with the stored constant. Resonant
    /// frequencies either degenerate here or blow the scanned constant up.
    /// Scan-certified models pass by construction; the guard bites declared
    /// constants.
    pub fn validate_periodic_diophantine(&self, window: &Window) -> Result<()> {
        let c = self
            .c
            .ok_or_else(|| KamError::Domain("no constant c set on the model".into()))?;
        if !self.transform.is_periodic() {
            return Ok(());
        }
        let grid = WindowGrid::new(*window);
        let report = verify_assumption_a1(self, &grid, (2 * window.radius()) as u64)?;
        if report.worst_constant > c * (1.0 + 1e-9) {
            return Err(KamError::Domain(format!(
                "(omega, 1) fails the Diophantine check on the window: the gap scan needs \
                 c >= {:.6}, model has c = {:.6} (witness {:?})",
                report.worst_constant,
                c,
                report
                    .worst_witness
                    .iter()
                    .map(|w| w.to_string())
                    .collect::<Vec<_>>()
            )));
        }
        Ok(())
    }
}

/// Which gap condition a report refers to.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum AssumptionId {
    A1,
    A2,
    A3,
    A4,
}

/// Outcome of a finite-window scan of one gap condition.
#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub id: AssumptionId,
    pub worst_constant: f64,
    pub worst_witness: Vec<MultiIndex>,
    pub passed: bool,
    pub compared_to: Option<f64>,
}

impl AssumptionReport {
    fn finish(
        id: AssumptionId,
        worst: f64,
        witness: Vec<MultiIndex>,
        declared: Option<f64>,
    ) -> Self {
        let passed = match declared {
            Some(c) => worst <= c * (1.0 + 1e-12),
            None => true,
        };
        AssumptionReport {
            id,
            worst_constant: worst,
            worst_witness: witness,
            passed,
            compared_to: declared,
        }
    }
}

/// Nonzero offsets with l1 norm <= kmax that admit a nonempty shifted domain.
pub fn offsets_up_to(grid: &WindowGrid, kmax: u64) -> Vec<MultiIndex> {
    let reach = (2 * grid.window().radius()).min(kmax as i64);
    let d = grid.window().dim();
    let mut out = Vec::new();
    let mut cur = vec![-reach; d];
    loop {
        let k = MultiIndex::new(cur.clone());
        if !k.is_zero() && k.l1_norm() <= kmax {
            out.push(k);
        }
        let mut axis = d;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            if cur[axis] < reach {
                cur[axis] += 1;
                for c in cur.iter_mut().skip(axis + 1) {
                    *c = -reach;
                }
                break;
            }
        }
    }
}

/// Reciprocal-gap table: for each offset, 1/(lambda_{n+k} - lambda_n) indexed
/// by the flat cell of n. NAN marks cells outside the shifted domain.
struct GapTable {
    offsets: Vec<MultiIndex>,
    recip: Vec<Vec<f64>>,
}

fn gap_table(model: &SpectrumModel, grid: &WindowGrid, kmax: u64) -> Result<GapTable> {
    let offsets = offsets_up_to(grid, kmax);
    let mut recip = Vec::with_capacity(offsets.len());
    for k in &offsets {
        let mut row = vec![f64::NAN; grid.cell_count()];
        for n in grid.points() {
            let flat = grid.flat(n).unwrap();
            if grid.flat(&n.add(k)).is_none() {
                continue;
            }
            let g = model.gap(n, k)?;
            if g.abs() < model.denom_floor() {
                return Err(KamError::DegenerateSpectrum {
                    gap: g.abs(),
                    floor: model.denom_floor(),
                    witness: format!("n={n}, k={k}"),
                });
            }
            row[flat] = 1.0 / g;
        }
        recip.push(row);
    }
    Ok(GapTable { offsets, recip })
}

/// sup_n 1/|lambda_{n+k} - lambda_n| <= c |k|^gamma, scanned over the window.
pub fn verify_assumption_a1(
    model: &SpectrumModel,
    grid: &WindowGrid,
    kmax: u64,
) -> Result<AssumptionReport> {
    let table = gap_table(model, grid, kmax)?;
    let mut worst = 0.0_f64;
    let mut witness = Vec::new();
    for (k, row) in table.offsets.iter().zip(&table.recip) {
        let pow = (k.l1_norm() as f64).powf(model.gamma());
        for n in grid.points() {
            let r = row[grid.flat(n).unwrap()];
            if r.is_nan() {
                continue;
            }
            let ratio = r.abs() / pow;
            if ratio > worst {
                worst = ratio;
                witness = vec![k.clone(), n.clone()];
            }
        }
    }
    Ok(AssumptionReport::finish(
        AssumptionId::A1,
        worst,
        witness,
        model.c(),
    ))
}

/// sup_n 1/|lambda_{n+k} - lambda_n| <= c (1 + 1/|lambda_k - lambda_0|).
pub fn verify_assumption_a2(
    model: &SpectrumModel,
    grid: &WindowGrid,
    kmax: u64,
) -> Result<AssumptionReport> {
    let table = gap_table(model, grid, kmax)?;
    let mut worst = 0.0_f64;
    let mut witness = Vec::new();
    for (k, row) in table.offsets.iter().zip(&table.recip) {
        let bound = 1.0 + 1.0 / model.base_gap_abs_checked(k)?;
        for n in grid.points() {
            let r = row[grid.flat(n).unwrap()];
            if r.is_nan() {
                continue;
            }
            let ratio = r.abs() / bound;
            if ratio > worst {
                worst = ratio;
                witness = vec![k.clone(), n.clone()];
            }
        }
    }
    Ok(AssumptionReport::finish(
        AssumptionId::A2,
        worst,
        witness,
        model.c(),
    ))
}

/// Triple scan of the divided-difference condition on reciprocal gaps.
pub fn verify_assumption_a3(
    model: &SpectrumModel,
    grid: &WindowGrid,
    kmax: u64,
    jmax: u64,
) -> Result<AssumptionReport> {
    let ktable = gap_table(model, grid, kmax)?;
    let joffsets = offsets_up_to(grid, jmax);
    let mut worst = 0.0_f64;
    let mut witness = Vec::new();
    for (k, row) in ktable.offsets.iter().zip(&ktable.recip) {
        let bound = 1.0 + 1.0 / model.base_gap_abs_checked(k)?;
        for j in &joffsets {
            let dj = model.base_gap_abs_checked(j)?;
            for n in grid.points() {
                let flat_n = grid.flat(n).unwrap();
                let r_n = row[flat_n];
                if r_n.is_nan() {
                    continue;
                }
                let Some(flat_nj) = grid.flat_shifted(flat_n, j) else {
                    continue;
                };
                let r_nj = row[flat_nj];
                if r_nj.is_nan() {
                    continue;
                }
                let ratio = ((r_nj - r_n).abs() / dj) / bound;
                if ratio > worst {
                    worst = ratio;
                    witness = vec![k.clone(), j.clone(), n.clone()];
                }
            }
        }
    }
    Ok(AssumptionReport::finish(
        AssumptionId::A3,
        worst,
        witness,
        model.c(),
    ))
}

/// Scan A1-A3 and certify c = max(1, worst constants) * safety factor.
pub fn certify_constants(
    model: &SpectrumModel,
    grid: &WindowGrid,
    kmax: u64,
    jmax: u64,
) -> Result<(f64, [AssumptionReport; 3])> {
    let a1 = verify_assumption_a1(model, grid, kmax)?;
    let a2 = verify_assumption_a2(model, grid, kmax)?;
    let a3 = verify_assumption_a3(model, grid, kmax, jmax)?;
    let worst = a1
        .worst_constant
        .max(a2.worst_constant)
        .max(a3.worst_constant)
        .max(1.0);
    Ok((worst * CERTIFY_SAFETY, [a1, a2, a3]))
}

/// Result of a frequency Diophantine scan.
#[derive(Clone, Debug, Serialize)]
pub struct DioScan {
    pub c_est: f64,
    pub witness: MultiIndex,
    pub periodic: bool,
    pub gamma: f64,
    pub kmax: u64,
}

/// C_est = max over 0 < |k| <= kmax of 1/(|omega.k| |k|^gamma), or the
/// periodic variant with min_j |omega.k + j|.
pub fn diophantine_scan(omega: &[f64], kmax: u64, gamma: f64, periodic: bool) -> Result<DioScan> {
    let d = omega.len();
    if d == 0 {
        return Err(KamError::Domain("empty frequency vector".into()));
    }
    let reach = kmax as i64;
    let mut worst = 0.0_f64;
    let mut witness = MultiIndex::zero(d);
    let mut cur = vec![-reach; d];
    loop {
        let k = MultiIndex::new(cur.clone());
        if !k.is_zero() && k.l1_norm() <= kmax {
            let dot: f64 = k
                .coords()
                .iter()
                .zip(omega)
                .map(|(&c, &w)| c as f64 * w)
                .sum();
            let val = if periodic {
                (dot - dot.round()).abs()
            } else {
                dot.abs()
            };
            if val == 0.0 {
                return Err(KamError::Resonance(k.to_string()));
            }
            let ratio = 1.0 / (val * (k.l1_norm() as f64).powf(gamma));
            if ratio > worst {
                worst = ratio;
                witness = k.clone();
            }
        }
        let mut axis = d;
        loop {
            if axis == 0 {
                return Ok(DioScan {
                    c_est: worst,
                    witness,
                    periodic,
                    gamma,
                    kmax,
                });
            }
            axis -= 1;
            if cur[axis] < reach {
                cur[axis] += 1;
                for c in cur.iter_mut().skip(axis + 1) {
                    *c = -reach;
                }
                break;
            }
        }
    }
}

/// Grid estimates of the transform regularity constants and the derived c.
#[derive(Clone, Debug, Serialize)]
pub struct HConditionReport {
    pub a: f64,
    pub b: f64,
    pub max_h_prime_unit: f64,
    pub periodic_case: bool,
    /// max{1/delta_1, max_{|x|<=delta_1} |h'|} for the periodic case.
    pub a_delta1: Option<f64>,
    pub delta1: Option<f64>,
    pub c_derived: f64,
}

fn derivative_of_reciprocal_gap(t: Transform, x: f64, y: f64) -> f64 {
    let num = t.derivative(x + y) - t.derivative(x);
    let den = t.apply(x + y) - t.apply(x);
    -num / (den * den)
}

/// Numerically estimate a = inf |h'| and the divided-difference derivative
/// bound b on a grid, then derive c from them.
///
/// For the injective families the derived constant is
/// (1 + b + C)/a * (2 + max_{|x|<=1} |h'|); for the periodic families it is
/// the max of the four window constants built from a, b, a_delta and the
/// grid-searched threshold delta_1.
pub fn check_h_conditions(
    transform: Transform,
    dio_c: f64,
    grid_points: usize,
) -> Result<HConditionReport> {
    let a = transform.inf_derivative();
    if a < 1e-12 {
        return Err(KamError::FlatTransform(a));
    }
    let m = grid_points.max(16);

    if !transform.is_periodic() {
        // grid over a symmetric range; the cubic's worst ratio sits at small y
        let range = 3.0;
        let mut b = 0.0_f64;
        for i in 0..m {
            let x = -range + 2.0 * range * (i as f64 + 0.5) / m as f64;
            for jj in 0..m {
                let y = -range + 2.0 * range * (jj as f64 + 0.5) / m as f64;
                if y.abs() < 1e-6 {
                    continue;
                }
                let v = derivative_of_reciprocal_gap(transform, x, y).abs();
                b = b.max(v / (1.0 + 1.0 / y.abs()));
            }
        }
        let mut max_h1 = 0.0_f64;
        for i in 0..=m {
            let x = -1.0 + 2.0 * i as f64 / m as f64;
            max_h1 = max_h1.max(transform.derivative(x).abs());
        }
        let c = (1.0 + b + dio_c) / a * (2.0 + max_h1);
        return Ok(HConditionReport {
            a,
            b,
            max_h_prime_unit: max_h1,
            periodic_case: false,
            a_delta1: None,
            delta1: None,
            c_derived: c,
        });
    }

    // periodic case: estimates restricted to the open interval (-1/2, 1/2),
    // skipping the excluded set Z + 1/2
    let edge = 1e-4;
    let sample = |i: usize, count: usize| -> f64 {
        -0.5 + edge + (1.0 - 2.0 * edge) * (i as f64 + 0.5) / count as f64
    };
    let near_excluded = |u: f64| -> bool {
        let (r, _) = reduce_half(u);
        (r.abs() - 0.5).abs() < 2.0 * edge
    };
    let mut b = 0.0_f64;
    for i in 0..m {
        let x = sample(i, m);
        for jj in 0..m {
            let y = sample(jj, m);
            if y.abs() < 1e-6 || near_excluded(x + y) {
                continue;
            }
            let v = derivative_of_reciprocal_gap(transform, x, y).abs();
            b = b.max(v / (1.0 + 1.0 / y.abs()));
        }
    }
    // sawtooth has h' constant, so b estimates to zero; keep a positive
    // stand-in so the derived constant stays meaningful
    if b == 0.0 {
        b = 1e-6;
    }
    let mut max_h1 = 0.0_f64;
    for i in 0..m {
        max_h1 = max_h1.max(transform.derivative(sample(i, m)).abs());
    }

    // grid search for the largest delta_1 such that |G(x, y, z)| stays below
    // (b/a)(1 + 1/|z|) whenever |y| <= delta_1
    let coarse = (m / 6).max(12);
    let g_ok = |delta: f64| -> bool {
        for iy in 0..coarse {
            let y = -delta + 2.0 * delta * (iy as f64 + 0.5) / coarse as f64;
            if y.abs() < 1e-9 {
                continue;
            }
            let hy = transform.apply(y) - transform.apply(0.0);
            for ix in 0..coarse {
                let x = sample(ix, coarse);
                if near_excluded(x + y) {
                    continue;
                }
                for iz in 0..coarse {
                    let z = sample(iz, coarse);
                    if z.abs() < 1e-6 || near_excluded(x + z) || near_excluded(x + y + z) {
                        continue;
                    }
                    let inner = 1.0 / (transform.apply(x + y + z) - transform.apply(x + y))
                        - 1.0 / (transform.apply(x + z) - transform.apply(x));
                    let g = (inner / hy).abs();
                    if g > (b / a) * (1.0 + 1.0 / z.abs()) * (1.0 + 1e-9) {
                        return false;
                    }
                }
            }
        }
        true
    };
    let candidates = [0.45, 0.4, 0.35, 0.3, 0.25, 0.2, 0.15, 0.1, 0.05, 0.02, 0.01];
    let delta1 = candidates.iter().copied().find(|&d| g_ok(d));

    let (a_d1, c) = match delta1 {
        Some(d1) => {
            let mut a_delta = 0.0_f64;
            for i in 0..m {
                let x = -d1 + 2.0 * d1 * (i as f64 + 0.5) / m as f64;
                a_delta = a_delta.max(transform.derivative(x).abs());
            }
            let a_d1 = (1.0 / d1).max(a_delta);
            let c = (a_d1 / a)
                .max(b * (a_d1 + 1.0) / a)
                .max(2.0 * a_d1 / (d1 * a * a))
                .max(dio_c / a);
            (Some(a_d1), c)
        }
        // no threshold found on the grid: fall back to the scanned route
        None => (None, dio_c / a),
    };

    Ok(HConditionReport {
        a,
        b,
        max_h_prime_unit: max_h1,
        periodic_case: true,
        a_delta1: a_d1,
        delta1,
        c_derived: c,
    })
}

/// (sqrt(5) - 1) / 2, the golden-mean frequency used across the test suite.
pub fn golden_mean() -> f64 {
    (5.0_f64.sqrt() - 1.0) / 2.0
}
