//! Operators stored by diagonals.
//!
//! A [`BandOperator`] keeps, for each offset k, the diagonal sequence
//! (A_{n,n+k})_n as a [`TSequence`]. The weighted norm
//! |A|_alpha = sup_k e^{alpha |k|} |A_k|_T measures off-diagonal decay.
//!
//! Composition follows the convolution (XY)_k = sum_l X_l Theta_l Y_{k-l},
//! with each output diagonal restricted to the indices where every
//! contributing term is defined. Points where only part of the convolution
//! is known are dropped rather than zero-filled: partial sums near the
//! truncation boundary would otherwise pollute the divided differences of
//! the norm. Dense agreement with matrix products therefore holds on
//! interior rows only, which is the regime all reports are restricted to.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;

use crate::dense::{DenseMatrix, DENSE_SIDE_MAX};
use crate::error::{KamError, Result};
use crate::lattice::{MultiIndex, WindowGrid};
use crate::sequence::TSequence;
use crate::spectrum::SpectrumModel;

/// Relative floor below which composed diagonals are dropped.
pub const PRUNE_FLOOR_REL: f64 = 1e-16;

/// Relative stopping tolerance of the Neumann series.
pub const SERIES_TOL_REL: f64 = 1e-15;

/// Hard cap on Neumann series length.
pub const SERIES_MAX_TERMS: usize = 200;

#[derive(Clone, Debug)]
pub struct BandOperator {
    grid: Arc<WindowGrid>,
    spectrum: Arc<SpectrumModel>,
    diagonals: BTreeMap<MultiIndex, TSequence>,
    alpha_hint: f64,
}

impl BandOperator {
    /// The zero operator.
    pub fn zero(grid: &Arc<WindowGrid>, spectrum: &Arc<SpectrumModel>) -> Self {
        BandOperator {
            grid: grid.clone(),
            spectrum: spectrum.clone(),
            diagonals: BTreeMap::new(),
            alpha_hint: f64::INFINITY,
        }
    }

    pub fn identity(grid: &Arc<WindowGrid>, spectrum: &Arc<SpectrumModel>) -> Self {
        let mut op = Self::zero(grid, spectrum);
        let one = TSequence::constant(grid, spectrum, Complex64::ONE).expect("window is nonempty");
        op.diagonals
            .insert(MultiIndex::zero(grid.window().dim()), one);
        op
    }

    /// Insert diagonal k. The domain must sit inside the shifted domain
    /// {n : n and n+k in the window}.
    pub fn insert_diagonal(&mut self, k: MultiIndex, seq: TSequence) -> Result<()> {
        if k.dim() != self.grid.window().dim() {
            return Err(KamError::DimensionMismatch {
                expected: self.grid.window().dim(),
                got: k.dim(),
            });
        }
        for (n, _) in seq.iter() {
            if self.grid.flat(&n.add(&k)).is_none() {
                return Err(KamError::Domain(format!(
                    "diagonal {k} entry at {n} leaves the window"
                )));
            }
        }
        self.diagonals.insert(k, seq);
        Ok(())
    }

    pub fn grid(&self) -> &Arc<WindowGrid> {
        &self.grid
    }

    pub fn spectrum(&self) -> &Arc<SpectrumModel> {
        &self.spectrum
    }

    pub fn offsets(&self) -> impl Iterator<Item = &MultiIndex> {
        self.diagonals.keys()
    }

    pub fn diagonal(&self, k: &MultiIndex) -> Option<&TSequence> {
        self.diagonals.get(k)
    }

    pub fn diagonal_count(&self) -> usize {
        self.diagonals.len()
    }

    pub fn alpha_hint(&self) -> f64 {
        self.alpha_hint
    }

    pub fn set_alpha_hint(&mut self, hint: f64) {
        self.alpha_hint = hint;
    }

    /// Matrix entry A_{n,m}, zero when not stored.
    pub fn entry(&self, n: &MultiIndex, m: &MultiIndex) -> Complex64 {
        let k = m.sub(n);
        self.diagonals
            .get(&k)
            .and_then(|d| d.get(n))
            .unwrap_or(Complex64::ZERO)
    }

    /// sup over stored diagonals of e^{alpha |k|} |A_k|_T.
    ///
    /// `alpha` may be infinite for diagonal operators, where the norm
    /// collapses to |A_0|_T.
    pub fn alpha_norm(&self, alpha: f64) -> Result<f64> {
        if alpha.is_infinite() {
            return self.alpha_norm_inf();
        }
        if alpha <= 0.0 {
            return Err(KamError::Domain(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        let mut worst = 0.0_f64;
        for (k, seq) in &self.diagonals {
            let t = seq.t_norm()?;
            if t == 0.0 {
                continue;
            }
            let weighted = (alpha * k.l1_norm() as f64 + t.ln()).exp();
            worst = worst.max(weighted);
        }
        Ok(worst)
    }

    /// |A_0|_T for diagonal operators.
    pub fn alpha_norm_inf(&self) -> Result<f64> {
        let zero = MultiIndex::zero(self.grid.window().dim());
        for (k, seq) in &self.diagonals {
            if !k.is_zero() && seq.t_norm()? > 0.0 {
                return Err(KamError::NotDiagonal);
            }
        }
        match self.diagonals.get(&zero) {
            Some(d) => d.t_norm(),
            None => Ok(0.0),
        }
    }

    /// ln of the alpha norm, usable when the norm itself would over- or
    /// underflow (deep iteration steps).
    pub fn log_alpha_norm(&self, alpha: f64) -> Result<f64> {
        let mut worst = f64::NEG_INFINITY;
        for (k, seq) in &self.diagonals {
            let t = seq.t_norm()?;
            if t == 0.0 {
                continue;
            }
            worst = worst.max(alpha * k.l1_norm() as f64 + t.ln());
        }
        Ok(worst)
    }

    /// Projection onto the main diagonal.
    pub fn diagonal_part(&self) -> BandOperator {
        let zero = MultiIndex::zero(self.grid.window().dim());
        let mut out = Self::zero(&self.grid, &self.spectrum);
        if let Some(d) = self.diagonals.get(&zero) {
            out.diagonals.insert(zero, d.clone());
        }
        out
    }

    /// A - [A].
    pub fn off_diagonal_part(&self) -> BandOperator {
        let mut out = self.clone();
        out.diagonals
            .remove(&MultiIndex::zero(self.grid.window().dim()));
        out
    }

    pub fn scale(&self, factor: Complex64) -> BandOperator {
        let mut out = Self::zero(&self.grid, &self.spectrum);
        out.alpha_hint = self.alpha_hint;
        for (k, seq) in &self.diagonals {
            out.diagonals.insert(k.clone(), seq.scale(factor));
        }
        out
    }

    /// Entrywise sum; diagonals present on one side only are taken as-is.
    pub fn add(&self, other: &BandOperator) -> Result<BandOperator> {
        let mut out = self.clone();
        for (k, seq) in &other.diagonals {
            match out.diagonals.get(k) {
                Some(mine) => {
                    let merged = merge_sum(mine, seq)?;
                    out.diagonals.insert(k.clone(), merged);
                }
                None => {
                    out.diagonals.insert(k.clone(), seq.clone());
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &BandOperator) -> Result<BandOperator> {
        self.add(&other.scale(-Complex64::ONE))
    }

    fn shift_main_diagonal(&self, offset: Complex64) -> Result<BandOperator> {
        let zero = MultiIndex::zero(self.grid.window().dim());
        let mut out = self.clone();
        match out.diagonals.get(&zero) {
            // respect the stored domain: entries outside it are unknown,
            // not zero, so the unit cannot be grafted onto them
            Some(d0) => {
                let shifted = TSequence::from_entries(
                    &self.grid,
                    &self.spectrum,
                    d0.iter().map(|(n, v)| (n.clone(), v + offset)),
                )?;
                out.diagonals.insert(zero, shifted);
            }
            None => {
                let seq = TSequence::constant(&self.grid, &self.spectrum, offset)?;
                out.diagonals.insert(zero, seq);
            }
        }
        Ok(out)
    }

    /// A - I on the main-diagonal domain.
    pub fn minus_identity(&self) -> Result<BandOperator> {
        self.shift_main_diagonal(-Complex64::ONE)
    }

    /// A + I on the main-diagonal domain.
    pub fn plus_identity(&self) -> Result<BandOperator> {
        self.shift_main_diagonal(Complex64::ONE)
    }

    /// Composition X Y with the loss bookkeeping of the product estimate:
    /// X is measured at alpha - delta, Y at alpha.
    pub fn compose(&self, other: &BandOperator, alpha: f64, delta: f64) -> Result<BandOperator> {
        if !(delta > 0.0 && delta < alpha) {
            return Err(KamError::InvalidLoss { delta, alpha });
        }
        self.compose_raw(other, alpha - delta)
    }

    /// Composition with diagonals pruned at decay level `prune_alpha`.
    pub fn compose_raw(&self, other: &BandOperator, prune_alpha: f64) -> Result<BandOperator> {
        #[derive(Clone)]
        struct Acc {
            vals: Vec<Complex64>,
            cnt: Vec<u16>,
            terms: u16,
        }
        let cells = self.grid.cell_count();
        let mut acc: BTreeMap<MultiIndex, Acc> = BTreeMap::new();
        for (l, xs) in &self.diagonals {
            for (m, ys) in &other.diagonals {
                let k = l.add(m);
                let slot = acc.entry(k).or_insert_with(|| Acc {
                    vals: vec![Complex64::ZERO; cells],
                    cnt: vec![0; cells],
                    terms: 0,
                });
                slot.terms += 1;
                for &f in xs.present_flats() {
                    let f = f as usize;
                    let Some(f2) = self.grid.flat_shifted(f, l) else {
                        continue;
                    };
                    if let Some(yv) = ys.get_flat(f2) {
                        slot.vals[f] += xs.get_flat(f).unwrap() * yv;
                        slot.cnt[f] += 1;
                    }
                }
            }
        }

        let mut out = Self::zero(&self.grid, &self.spectrum);
        out.alpha_hint = self.alpha_hint.min(other.alpha_hint);
        for (k, slot) in acc {
            let entries: Vec<(MultiIndex, Complex64)> = slot
                .cnt
                .iter()
                .enumerate()
                .filter(|(_, &c)| c == slot.terms)
                .map(|(f, _)| (self.grid.index_of(f).clone(), slot.vals[f]))
                .collect();
            if entries.is_empty() {
                continue;
            }
            let seq = TSequence::from_entries(&self.grid, &self.spectrum, entries)?;
            out.diagonals.insert(k, seq);
        }
        out.prune(prune_alpha)?;
        Ok(out)
    }

    /// The plain truncated-window matrix product: entries outside a stored
    /// domain count as zero, and every output diagonal carries its full
    /// shifted domain. This is bit-faithful to multiplying the dense
    /// exports, which is what the exact-algebra checks (Neumann residuals)
    /// need; `compose` with its intersection domains is the right tool when
    /// norm estimates are at stake.
    pub fn window_product(&self, other: &BandOperator) -> Result<BandOperator> {
        let cells = self.grid.cell_count();
        let mut acc: BTreeMap<MultiIndex, Vec<Complex64>> = BTreeMap::new();
        for (l, xs) in &self.diagonals {
            for (m, ys) in &other.diagonals {
                let k = l.add(m);
                let slot = acc.entry(k).or_insert_with(|| vec![Complex64::ZERO; cells]);
                for &f in xs.present_flats() {
                    let f = f as usize;
                    let Some(f2) = self.grid.flat_shifted(f, l) else {
                        continue;
                    };
                    if let Some(yv) = ys.get_flat(f2) {
                        slot[f] += xs.get_flat(f).unwrap() * yv;
                    }
                }
            }
        }
        let mut out = Self::zero(&self.grid, &self.spectrum);
        out.alpha_hint = self.alpha_hint.min(other.alpha_hint);
        for (k, vals) in acc {
            let entries: Vec<(MultiIndex, Complex64)> = self
                .grid
                .points()
                .iter()
                .filter(|n| self.grid.flat(&n.add(&k)).is_some())
                .map(|n| (n.clone(), vals[self.grid.flat(n).unwrap()]))
                .collect();
            if entries.is_empty() {
                continue;
            }
            let seq = TSequence::from_entries(&self.grid, &self.spectrum, entries)?;
            out.diagonals.insert(k, seq);
        }
        Ok(out)
    }

    /// Drop diagonals whose weighted norm falls below the relative floor.
    fn prune(&mut self, alpha: f64) -> Result<()> {
        if self.diagonals.is_empty() {
            return Ok(());
        }
        let mut weights: Vec<(MultiIndex, f64)> = Vec::with_capacity(self.diagonals.len());
        let mut scale = 0.0_f64;
        for (k, seq) in &self.diagonals {
            let t = seq.t_norm()?;
            let w = if t == 0.0 {
                0.0
            } else {
                (alpha * k.l1_norm() as f64 + t.ln()).exp()
            };
            scale = scale.max(w);
            weights.push((k.clone(), w));
        }
        let floor = PRUNE_FLOOR_REL * scale;
        for (k, w) in weights {
            if w == 0.0 || w < floor {
                self.diagonals.remove(&k);
            }
        }
        Ok(())
    }

    /// Inverse by the Neumann series sum_l (I - X)^l, requiring the
    /// contraction precondition |X - I|_alpha < (delta/3)^d.
    pub fn neumann_inverse(&self, alpha: f64, delta: f64) -> Result<BandOperator> {
        if !(delta > 0.0 && delta < alpha && delta <= 1.0) {
            return Err(KamError::InvalidLoss { delta, alpha });
        }
        let d = self.grid.window().dim() as i32;
        let threshold = (delta / 3.0).powi(d);
        let n_norm = self.minus_identity()?.alpha_norm(alpha)?;
        if n_norm >= threshold {
            return Err(KamError::NotInvertibleByNeumann {
                norm: n_norm,
                threshold,
            });
        }
        self.neumann_series(alpha - delta)
    }

    /// The raw series with contraction monitoring only; used by the
    /// empirical mode where the sufficient condition is allowed to fail.
    ///
    /// Powers are window matrix products, so the accumulated sum is the
    /// truncated section inverse and X X^-1 - I stays at the series
    /// tolerance everywhere on the window.
    pub fn neumann_series(&self, prune_alpha: f64) -> Result<BandOperator> {
        let n_op = self.scale(-Complex64::ONE).plus_identity()?;
        let mut sum = Self::identity(&self.grid, &self.spectrum);
        let mut term = n_op.clone();
        let first = term.alpha_norm(prune_alpha.max(1e-6))?;
        if first == 0.0 {
            return Ok(sum);
        }
        let tol = SERIES_TOL_REL * first;
        let mut prev = f64::INFINITY;
        for iter in 0..SERIES_MAX_TERMS {
            let norm = term.alpha_norm(prune_alpha.max(1e-6))?;
            if norm <= tol || term.diagonal_count() == 0 {
                return Ok(sum);
            }
            if norm > prev && iter > 2 {
                return Err(KamError::SeriesDivergence { terms: iter });
            }
            prev = norm;
            sum = sum.add(&term)?;
            term = term.window_product(&n_op)?;
            term.prune(prune_alpha)?;
        }
        Err(KamError::SeriesDivergence {
            terms: SERIES_MAX_TERMS,
        })
    }

    /// Upper bound for the l2 operator norm:
    /// ((1 + e^-alpha)/(1 - e^-alpha))^d * |A|_alpha.
    pub fn operator_norm_bound(&self, alpha: f64) -> Result<f64> {
        let d = self.grid.window().dim() as i32;
        if alpha.is_infinite() {
            return self.alpha_norm_inf();
        }
        let e = (-alpha).exp();
        let q = ((1.0 + e) / (1.0 - e)).powi(d);
        Ok(q * self.alpha_norm(alpha)?)
    }

    /// (A v)_n = sum_k A_{n,n+k} v_{n+k}, vectors indexed in window
    /// enumeration order.
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.grid.point_count());
        let mut out = vec![Complex64::ZERO; v.len()];
        for (k, seq) in &self.diagonals {
            for &f in seq.present_flats() {
                let f = f as usize;
                let Some(f2) = self.grid.flat_shifted(f, k) else {
                    continue;
                };
                out[self.grid.ordinal_of(f)] +=
                    seq.get_flat(f).unwrap() * v[self.grid.ordinal_of(f2)];
            }
        }
        out
    }

    /// Column U e_n as a dense vector in enumeration order.
    pub fn column(&self, n: &MultiIndex) -> Vec<Complex64> {
        let mut out = vec![Complex64::ZERO; self.grid.point_count()];
        for (k, seq) in &self.diagonals {
            // entry (j, n) lives on diagonal n - j at row j
            let j = n.sub(k);
            if let Some(fj) = self.grid.flat(&j) {
                if let Some(v) = seq.get_flat(fj) {
                    out[self.grid.ordinal_of(fj)] = v;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Result<DenseMatrix> {
        let n = self.grid.point_count();
        if n > DENSE_SIDE_MAX {
            return Err(KamError::DenseTooLarge {
                side: n,
                max: DENSE_SIDE_MAX,
            });
        }
        let mut m = DenseMatrix::zeros(n);
        for (k, seq) in &self.diagonals {
            for &f in seq.present_flats() {
                let f = f as usize;
                if let Some(f2) = self.grid.flat_shifted(f, k) {
                    m[(self.grid.ordinal_of(f), self.grid.ordinal_of(f2))] =
                        seq.get_flat(f).unwrap();
                }
            }
        }
        Ok(m)
    }

    /// Rebuild diagonals from a dense matrix. Diagonals that are entirely
    /// zero are not stored; stored ones carry the full shifted domain.
    pub fn from_dense(
        dense: &DenseMatrix,
        grid: &Arc<WindowGrid>,
        spectrum: &Arc<SpectrumModel>,
    ) -> Result<BandOperator> {
        if dense.side() != grid.point_count() {
            return Err(KamError::DimensionMismatch {
                expected: grid.point_count(),
                got: dense.side(),
            });
        }
        let mut per_offset: BTreeMap<MultiIndex, Vec<(MultiIndex, Complex64)>> = BTreeMap::new();
        let points = grid.points();
        for (i, n) in points.iter().enumerate() {
            for (j, m) in points.iter().enumerate() {
                let k = m.sub(n);
                per_offset
                    .entry(k)
                    .or_default()
                    .push((n.clone(), dense[(i, j)]));
            }
        }
        let mut out = Self::zero(grid, spectrum);
        for (k, entries) in per_offset {
            if entries.iter().all(|(_, v)| *v == Complex64::ZERO) {
                continue;
            }
            let seq = TSequence::from_entries(grid, spectrum, entries)?;
            out.diagonals.insert(k, seq);
        }
        Ok(out)
    }

    /// Worst deviation from self-adjointness over stored entries.
    pub fn hermitian_violation(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (k, seq) in &self.diagonals {
            let neg_k = k.neg();
            for (n, v) in seq.iter() {
                let mirrored = self
                    .diagonals
                    .get(&neg_k)
                    .and_then(|d| d.get(&n.add(k)))
                    .unwrap_or(Complex64::ZERO);
                worst = worst.max((v - mirrored.conj()).norm());
            }
        }
        worst
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.diagonals
            .values()
            .map(|s| s.sup_abs())
            .fold(0.0, f64::max)
    }
}

fn merge_sum(a: &TSequence, b: &TSequence) -> Result<TSequence> {
    let grid = a.grid().clone();
    let mut entries: BTreeMap<MultiIndex, Complex64> = BTreeMap::new();
    for (n, v) in a.iter() {
        entries.insert(n.clone(), v);
    }
    for (n, v) in b.iter() {
        *entries.entry(n.clone()).or_insert(Complex64::ZERO) += v;
    }
    TSequence::from_entries(&grid, a.spectrum(), entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Window, WindowShape};
    use crate::spectrum::{SpectrumModel, SpectrumParams, Transform};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn linear_setup(radius: i64) -> (Arc<SpectrumModel>, Arc<WindowGrid>) {
        let window = Window::box_1d(radius);
        let model = SpectrumModel::build(
            SpectrumParams {
                dim: 1,
                omega: vec![1.0],
                transform: Transform::Identity,
                gamma: 1.0,
                c: None,
                base_point: None,
            },
            &window,
        )
        .unwrap();
        (model, WindowGrid::new(window))
    }

    fn laplacian(grid: &Arc<WindowGrid>, spectrum: &Arc<SpectrumModel>) -> BandOperator {
        let d = grid.window().dim();
        let mut op = BandOperator::zero(grid, spectrum);
        for axis in 0..d {
            for sign in [-1i64, 1] {
                let k = MultiIndex::unit(d, axis, sign);
                let entries: Vec<(MultiIndex, Complex64)> = grid
                    .points()
                    .iter()
                    .filter(|n| grid.flat(&n.add(&k)).is_some())
                    .map(|n| (n.clone(), Complex64::ONE))
                    .collect();
                let seq = TSequence::from_entries(grid, spectrum, entries).unwrap();
                op.insert_diagonal(k, seq).unwrap();
            }
        }
        op
    }

    fn random_band(
        grid: &Arc<WindowGrid>,
        spectrum: &Arc<SpectrumModel>,
        max_offset: i64,
        rng: &mut ChaCha8Rng,
    ) -> BandOperator {
        let d = grid.window().dim();
        let mut op = BandOperator::zero(grid, spectrum);
        let offsets = crate::spectrum::offsets_up_to(grid, max_offset as u64);
        let mut all = vec![MultiIndex::zero(d)];
        all.extend(offsets);
        for k in all {
            if rng.random_bool(0.3) {
                continue;
            }
            let damp = (-(k.l1_norm() as f64)).exp();
            let entries: Vec<(MultiIndex, Complex64)> = grid
                .points()
                .iter()
                .filter(|n| grid.flat(&n.add(&k)).is_some())
                .map(|n| {
                    (
                        n.clone(),
                        Complex64::new(
                            damp * rng.random_range(-1.0..1.0),
                            damp * rng.random_range(-1.0..1.0),
                        ),
                    )
                })
                .collect();
            if entries.is_empty() {
                continue;
            }
            let seq = TSequence::from_entries(grid, spectrum, entries).unwrap();
            op.insert_diagonal(k, seq).unwrap();
        }
        op
    }

    #[test]
    fn identity_norm_is_one() {
        let (model, grid) = linear_setup(5);
        let i = BandOperator::identity(&grid, &model);
        for alpha in [0.5, 1.0, 2.0, f64::INFINITY] {
            assert_eq!(i.alpha_norm(alpha).unwrap(), 1.0);
        }
    }

    #[test]
    fn laplacian_alpha_norm_is_exp_alpha() {
        let (model, grid) = linear_setup(5);
        let lap = laplacian(&grid, &model);
        assert_relative_eq!(
            lap.alpha_norm(1.0).unwrap(),
            1f64.exp(),
            max_relative = 1e-15
        );
        assert!(lap.alpha_norm(f64::INFINITY).is_err());
    }

    #[test]
    fn diagonal_norm_independent_of_alpha() {
        let (model, grid) = linear_setup(5);
        let seq = TSequence::from_fn(&grid, &model, |n| {
            Complex64::new((n.coords()[0] as f64).cos(), 0.0)
        })
        .unwrap();
        let mut b = BandOperator::zero(&grid, &model);
        b.insert_diagonal(MultiIndex::zero(1), seq).unwrap();
        let inf = b.alpha_norm_inf().unwrap();
        for alpha in [0.3, 1.0, 4.0] {
            assert_eq!(b.alpha_norm(alpha).unwrap(), inf);
        }
    }

    #[test]
    fn alpha_norm_monotone_in_alpha() {
        let (model, grid) = linear_setup(6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let op = random_band(&grid, &model, 3, &mut rng);
            let lo = op.alpha_norm(0.5).unwrap();
            let hi = op.alpha_norm(1.5).unwrap();
            assert!(hi >= lo);
        }
    }

    #[test]
    fn diagonal_projection_properties() {
        let (model, grid) = linear_setup(5);
        let lap = laplacian(&grid, &model);
        assert_eq!(lap.diagonal_part().diagonal_count(), 0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let op = random_band(&grid, &model, 3, &mut rng);
        let diag = op.diagonal_part();
        let dd = diag.diagonal_part();
        assert_eq!(diag.diagonal_count(), dd.diagonal_count());
        // [A - [A]] = 0
        assert_eq!(op.off_diagonal_part().diagonal_part().diagonal_count(), 0);
        // projection contracts
        let alpha = 1.0;
        assert!(diag.alpha_norm_inf().unwrap() <= op.alpha_norm(alpha).unwrap() + 1e-12);
        assert!(
            op.off_diagonal_part().alpha_norm(alpha).unwrap()
                <= op.alpha_norm(alpha).unwrap() + 1e-12
        );
    }

    #[test]
    fn compose_with_identity() {
        let (model, grid) = linear_setup(5);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = random_band(&grid, &model, 2, &mut rng);
        let i = BandOperator::identity(&grid, &model);
        let xi = x.compose(&i, 1.0, 0.5).unwrap();
        for (k, seq) in &x.diagonals {
            let got = xi.diagonal(k).expect("diagonal survives");
            for (n, v) in seq.iter() {
                assert_eq!(got.get(n), Some(v));
            }
        }
    }

    #[test]
    fn laplacian_squared_diagonals() {
        let (model, grid) = linear_setup(6);
        let lap = laplacian(&grid, &model);
        let sq = lap.compose(&lap, 1.0, 0.5).unwrap();
        // (Delta^2)_0 = 2, (Delta^2)_{+-2} = 1, no odd diagonals
        let d0 = sq.diagonal(&MultiIndex::new(vec![0])).unwrap();
        for (_, v) in d0.iter() {
            assert_eq!(v, Complex64::new(2.0, 0.0));
        }
        let d2 = sq.diagonal(&MultiIndex::new(vec![2])).unwrap();
        for (_, v) in d2.iter() {
            assert_eq!(v, Complex64::ONE);
        }
        assert!(sq.diagonal(&MultiIndex::new(vec![1])).is_none());
        assert!(sq.diagonal(&MultiIndex::new(vec![-1])).is_none());
    }

    #[test]
    fn composition_bound_random() {
        let (model, grid) = linear_setup(7);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let (alpha, delta) = (1.0, 0.5);
        let q = (1.0 + f64::exp(-delta)) / (1.0 - f64::exp(-delta));
        for _ in 0..40 {
            let x = random_band(&grid, &model, 2, &mut rng);
            let y = random_band(&grid, &model, 2, &mut rng);
            if x.diagonal_count() == 0 || y.diagonal_count() == 0 {
                continue;
            }
            let xy = x.compose(&y, alpha, delta).unwrap();
            let lhs = xy.alpha_norm(alpha - delta).unwrap();
            let rhs = q * x.alpha_norm(alpha - delta).unwrap() * y.alpha_norm(alpha).unwrap();
            assert!(
                lhs <= rhs * (1.0 + 1e-12) + 1e-300,
                "product bound violated: {lhs} > {rhs}"
            );
        }
        assert!(q < 6.0); // q(1/2) in d = 1 stays below (3/delta)^d
        assert_abs_diff_eq!(q, 4.0830, epsilon = 1e-3);
    }

    #[test]
    fn neumann_identity_is_identity() {
        let (model, grid) = linear_setup(5);
        let i = BandOperator::identity(&grid, &model);
        let inv = i.neumann_inverse(1.0, 0.5).unwrap();
        assert_eq!(inv.diagonal_count(), 1);
        assert_eq!(
            inv.diagonal(&MultiIndex::zero(1))
                .unwrap()
                .get(&MultiIndex::zero(1)),
            Some(Complex64::ONE)
        );
    }

    #[test]
    fn neumann_single_shift_geometric_series() {
        let (model, grid) = linear_setup(8);
        let c0 = 0.05;
        let entries: Vec<(MultiIndex, Complex64)> = grid
            .points()
            .iter()
            .filter(|n| grid.flat(&n.add(&MultiIndex::new(vec![1]))).is_some())
            .map(|n| (n.clone(), Complex64::new(c0, 0.0)))
            .collect();
        let seq = TSequence::from_entries(&grid, &model, entries).unwrap();
        let mut x = BandOperator::identity(&grid, &model);
        x.insert_diagonal(MultiIndex::new(vec![1]), seq).unwrap();
        let inv = x.neumann_inverse(1.0, 0.5).unwrap();
        // inverse diagonals carry (-c0)^k; oracle is the exact dense inverse
        // of the truncated upper-triangular Toeplitz matrix
        for k in 0..=3i64 {
            let diag = inv.diagonal(&MultiIndex::new(vec![k])).unwrap();
            for (_, v) in diag.iter() {
                assert_relative_eq!(v.re, (-c0).powi(k as i32), max_relative = 1e-12);
                assert_eq!(v.im, 0.0);
            }
        }
        // residual in the weighted norm
        let resid = x.window_product(&inv).unwrap().minus_identity().unwrap();
        assert!(resid.alpha_norm(0.5).unwrap() <= 1e-10);
    }

    #[test]
    fn neumann_bound_and_residual_random() {
        let (model, grid) = linear_setup(6);
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let (alpha, delta) = (1.0, 0.5);
        let threshold = delta / 3.0;
        for _ in 0..30 {
            let raw = random_band(&grid, &model, 2, &mut rng);
            if raw.diagonal_count() == 0 {
                continue;
            }
            let norm = raw.alpha_norm(alpha).unwrap();
            let n_op = raw.scale(Complex64::new(0.6 * threshold / norm.max(1e-12), 0.0));
            let x = n_op.scale(-Complex64::ONE).plus_identity().unwrap();
            let n_norm = x.minus_identity().unwrap().alpha_norm(alpha).unwrap();
            let inv = x.neumann_inverse(alpha, delta).unwrap();
            let lhs = inv
                .minus_identity()
                .unwrap()
                .alpha_norm(alpha - delta)
                .unwrap();
            let rhs = n_norm / (1.0 - (3.0 / delta) * n_norm);
            assert!(
                lhs <= rhs * (1.0 + 1e-10),
                "inverse bound violated: {lhs} > {rhs}"
            );
            let resid = x.window_product(&inv).unwrap().minus_identity().unwrap();
            let rn = resid.alpha_norm(alpha - delta).unwrap();
            assert!(rn <= 1e-10, "residual {rn}");
        }
    }

    #[test]
    fn neumann_series_divergence_detected() {
        let (model, grid) = linear_setup(5);
        let lap = laplacian(&grid, &model);
        // I + 2 Delta is far outside the contraction regime
        let x = lap.scale(Complex64::new(2.0, 0.0)).plus_identity().unwrap();
        assert!(matches!(
            x.neumann_series(0.5),
            Err(KamError::SeriesDivergence { .. })
        ));
    }

    #[test]
    fn neumann_precondition_enforced() {
        let (model, grid) = linear_setup(5);
        let lap = laplacian(&grid, &model);
        let x = lap.plus_identity().unwrap();
        assert!(matches!(
            x.neumann_inverse(1.0, 0.5),
            Err(KamError::NotInvertibleByNeumann { .. })
        ));
    }

    #[test]
    fn operator_norm_bound_values() {
        let (model, grid) = linear_setup(10);
        let i = BandOperator::identity(&grid, &model);
        let b = i.operator_norm_bound(1.0).unwrap();
        let expected = (1.0 + (-1.0f64).exp()) / (1.0 - (-1.0f64).exp());
        assert_relative_eq!(b, expected, max_relative = 1e-12);
        assert_abs_diff_eq!(b, 2.1640, epsilon = 1e-4);

        // diagonal operator: bound tends to the sup norm as alpha grows
        let seq = TSequence::from_fn(&grid, &model, |_| Complex64::new(0.7, 0.0)).unwrap();
        let mut diag = BandOperator::zero(&grid, &model);
        diag.insert_diagonal(MultiIndex::zero(1), seq).unwrap();
        let inf_bound = diag.operator_norm_bound(f64::INFINITY).unwrap();
        assert_relative_eq!(inf_bound, 0.7, max_relative = 1e-12);
        assert!(diag.operator_norm_bound(8.0).unwrap() <= 0.7 * 1.002);
    }

    #[test]
    fn laplacian_two_norm_under_bound() {
        let (model, grid) = linear_setup(10);
        let lap = laplacian(&grid, &model);
        // power iteration on the dense export
        let dense = lap.to_dense().unwrap();
        let n = dense.side();
        let mut v: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(((i * 37 + 11) % 101) as f64 / 101.0 + 0.1, 0.0))
            .collect();
        let mut norm_est = 0.0;
        for _ in 0..300 {
            let w = dense.mul_vec(&v);
            norm_est = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / norm_est;
            }
        }
        assert!(norm_est <= 2.0 + 1e-9);
        assert!(norm_est <= lap.operator_norm_bound(1.0).unwrap());
    }

    #[test]
    fn apply_examples() {
        let (model, grid) = linear_setup(4);
        let i = BandOperator::identity(&grid, &model);
        let v: Vec<Complex64> = (0..grid.point_count())
            .map(|j| Complex64::new(j as f64, -(j as f64)))
            .collect();
        assert_eq!(i.apply(&v), v);

        let lap = laplacian(&grid, &model);
        let mut e0 = vec![Complex64::ZERO; grid.point_count()];
        let mid = grid.ordinal_of(grid.flat(&MultiIndex::zero(1)).unwrap());
        e0[mid] = Complex64::ONE;
        let out = lap.apply(&e0);
        for (j, val) in out.iter().enumerate() {
            let expected = if j == mid - 1 || j == mid + 1 {
                1.0
            } else {
                0.0
            };
            assert_eq!(val.re, expected);
        }
    }

    #[test]
    fn apply_respects_operator_bound() {
        let (model, grid) = linear_setup(6);
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..20 {
            let op = random_band(&grid, &model, 2, &mut rng);
            let bound = op.operator_norm_bound(1.0).unwrap();
            let v: Vec<Complex64> = (0..grid.point_count())
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let vn = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let av = op.apply(&v);
            let avn = av.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!(avn <= bound * vn * (1.0 + 1e-12));
        }
    }

    #[test]
    fn dense_roundtrip() {
        let (model, grid) = linear_setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let op = random_band(&grid, &model, 2, &mut rng);
        let dense = op.to_dense().unwrap();
        let back = BandOperator::from_dense(&dense, &grid, &model).unwrap();
        for (k, seq) in &op.diagonals {
            for (n, v) in seq.iter() {
                assert_eq!(back.entry(n, &n.add(k)), v);
            }
        }
        let i = BandOperator::identity(&grid, &model);
        let di = i.to_dense().unwrap();
        assert_eq!(di, DenseMatrix::identity(grid.point_count()));
    }

    #[test]
    fn insert_rejects_out_of_window_domains() {
        let (model, grid) = linear_setup(3);
        let seq = TSequence::constant(&grid, &model, Complex64::ONE).unwrap();
        let mut op = BandOperator::zero(&grid, &model);
        // the full window is not a valid domain for offset 1
        assert!(op.insert_diagonal(MultiIndex::new(vec![1]), seq).is_err());
    }

    #[test]
    fn dense_export_guard() {
        let window = Window::new(1, 10_001, WindowShape::BoxLinf, None).unwrap();
        let model = SpectrumModel::build(
            SpectrumParams {
                dim: 1,
                omega: vec![1.0],
                transform: Transform::Identity,
                gamma: 1.0,
                c: None,
                base_point: None,
            },
            &window,
        )
        .unwrap();
        let grid = WindowGrid::new(window);
        let i = BandOperator::identity(&grid, &model);
        assert!(matches!(i.to_dense(), Err(KamError::DenseTooLarge { .. })));
    }

    #[test]
    fn dense_agreement_on_interior() {
        let window = Window::new(1, 8, WindowShape::BoxLinf, Some(4)).unwrap();
        let model = SpectrumModel::build(
            SpectrumParams {
                dim: 1,
                omega: vec![1.0],
                transform: Transform::Identity,
                gamma: 1.0,
                c: None,
                base_point: None,
            },
            &window,
        )
        .unwrap();
        let grid = WindowGrid::new(window);
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        for _ in 0..10 {
            let x = random_band(&grid, &model, 2, &mut rng);
            let y = random_band(&grid, &model, 2, &mut rng);
            let xy = x.compose_raw(&y, 0.5).unwrap();
            let dense_prod = x.to_dense().unwrap().mul(&y.to_dense().unwrap());
            let dense_band = xy.to_dense().unwrap();
            for (i, n) in grid.points().iter().enumerate() {
                for (j, m) in grid.points().iter().enumerate() {
                    if !grid.window().is_interior(n) || !grid.window().is_interior(m) {
                        continue;
                    }
                    let diff = (dense_prod[(i, j)] - dense_band[(i, j)]).norm();
                    assert!(diff <= 1e-10, "interior mismatch at ({n}, {m}): {diff}");
                }
            }
        }
    }

    #[test]
    fn hermitian_violation_detects_asymmetry() {
        let (model, grid) = linear_setup(4);
        let lap = laplacian(&grid, &model);
        assert_eq!(lap.hermitian_violation(), 0.0);

        let entries: Vec<(MultiIndex, Complex64)> = grid
            .points()
            .iter()
            .filter(|n| grid.flat(&n.add(&MultiIndex::new(vec![1]))).is_some())
            .map(|n| (n.clone(), Complex64::ONE))
            .collect();
        let seq = TSequence::from_entries(&grid, &model, entries).unwrap();
        let mut asym = BandOperator::zero(&grid, &model);
        asym.insert_diagonal(MultiIndex::new(vec![1]), seq).unwrap();
        assert!(asym.hermitian_violation() >= 1.0);
    }
}
