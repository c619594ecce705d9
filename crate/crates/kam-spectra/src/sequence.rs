//! The sequence algebra behind every norm in the crate.
//!
//! A [`TSequence`] is a complex sequence on (a subset of) a window, measured
//! against the reference spectrum of the unperturbed operator T:
//!
//! ```text
//! |a|_T = sup_n |a_n| + sup_{n, j != 0} |a_{n+j} - a_n| / |lambda_j - lambda_0|
//! ```
//!
//! Both suprema run exhaustively over in-domain index pairs. That is O(P^2)
//! per sequence, which is the point: the sups are the correctness backbone
//! and windows stay at desk scale.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{KamError, Result};
use crate::lattice::{MultiIndex, WindowGrid};
use crate::spectrum::SpectrumModel;

#[derive(Clone, Debug)]
pub struct TSequence {
    grid: Arc<WindowGrid>,
    spectrum: Arc<SpectrumModel>,
    data: Vec<Option<Complex64>>,
    present: Vec<u32>,
}

impl TSequence {
    fn from_data(
        grid: Arc<WindowGrid>,
        spectrum: Arc<SpectrumModel>,
        data: Vec<Option<Complex64>>,
    ) -> Result<Self> {
        let present: Vec<u32> = (0..data.len() as u32)
            .filter(|&f| data[f as usize].is_some())
            .collect();
        if present.is_empty() {
            return Err(KamError::Domain("empty sequence domain".into()));
        }
        for &f in &present {
            let v = data[f as usize].unwrap();
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(KamError::Domain(format!(
                    "non-finite value at {}",
                    grid.index_of(f as usize)
                )));
            }
        }
        Ok(TSequence {
            grid,
            spectrum,
            data,
            present,
        })
    }

    /// Sequence defined on the full window by a function of the index.
    pub fn from_fn<F>(
        grid: &Arc<WindowGrid>,
        spectrum: &Arc<SpectrumModel>,
        mut f: F,
    ) -> Result<Self>
    where
        F: FnMut(&MultiIndex) -> Complex64,
    {
        let mut data = vec![None; grid.cell_count()];
        for n in grid.points() {
            data[grid.flat(n).unwrap()] = Some(f(n));
        }
        Self::from_data(grid.clone(), spectrum.clone(), data)
    }

    /// Sequence defined on an explicit domain.
    pub fn from_entries<I>(
        grid: &Arc<WindowGrid>,
        spectrum: &Arc<SpectrumModel>,
        entries: I,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (MultiIndex, Complex64)>,
    {
        let mut data = vec![None; grid.cell_count()];
        for (n, v) in entries {
            let flat = grid
                .flat(&n)
                .ok_or_else(|| KamError::Domain(format!("index {n} outside window")))?;
            data[flat] = Some(v);
        }
        Self::from_data(grid.clone(), spectrum.clone(), data)
    }

    /// Constant sequence on the full window.
    pub fn constant(
        grid: &Arc<WindowGrid>,
        spectrum: &Arc<SpectrumModel>,
        value: Complex64,
    ) -> Result<Self> {
        Self::from_fn(grid, spectrum, |_| value)
    }

    pub fn grid(&self) -> &Arc<WindowGrid> {
        &self.grid
    }

    pub fn spectrum(&self) -> &Arc<SpectrumModel> {
        &self.spectrum
    }

    pub fn domain_len(&self) -> usize {
        self.present.len()
    }

    pub fn get(&self, n: &MultiIndex) -> Option<Complex64> {
        self.grid.flat(n).and_then(|f| self.data[f])
    }

    pub(crate) fn get_flat(&self, flat: usize) -> Option<Complex64> {
        self.data[flat]
    }

    pub(crate) fn present_flats(&self) -> &[u32] {
        &self.present
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, Complex64)> + '_ {
        self.present.iter().map(move |&f| {
            (
                self.grid.index_of(f as usize),
                self.data[f as usize].unwrap(),
            )
        })
    }

    pub fn sup_abs(&self) -> f64 {
        self.present
            .iter()
            .map(|&f| self.data[f as usize].unwrap().norm())
            .fold(0.0, f64::max)
    }

    /// The spectrum-weighted norm, exhaustively over in-domain pairs.
    pub fn t_norm(&self) -> Result<f64> {
        let sup = self.sup_abs();
        let mut diff_sup = 0.0_f64;
        for (ai, &fi) in self.present.iter().enumerate() {
            let ni = self.grid.index_of(fi as usize);
            let vi = self.data[fi as usize].unwrap();
            for &fj in self.present.iter().skip(ai + 1) {
                let nj = self.grid.index_of(fj as usize);
                let vj = self.data[fj as usize].unwrap();
                let num = (vj - vi).norm();
                // ordered pairs (n, n+j) and (n+j, n) share the numerator but
                // see different denominators
                let j = nj.sub(ni);
                let d_fwd = self.spectrum.base_gap_abs_checked(&j)?;
                let d_bwd = self.spectrum.base_gap_abs_checked(&j.neg())?;
                let q = num / d_fwd.min(d_bwd);
                if q > diff_sup {
                    diff_sup = q;
                }
            }
        }
        Ok(sup + diff_sup)
    }

    /// (Theta_k a)_n = a_{n+k} on {n : n and n+k in the domain}.
    pub fn shift(&self, k: &MultiIndex) -> Result<TSequence> {
        let mut data = vec![None; self.grid.cell_count()];
        let mut any = false;
        for &f in &self.present {
            let n = self.grid.index_of(f as usize);
            if let Some(ft) = self.grid.flat(&n.add(k)) {
                if let Some(v) = self.data[ft] {
                    data[f as usize] = Some(v);
                    any = true;
                }
            }
        }
        if !any {
            return Err(KamError::EmptyShift(k.to_string()));
        }
        Self::from_data(self.grid.clone(), self.spectrum.clone(), data)
    }

    /// Pointwise product on the intersection of domains.
    pub fn pointwise_product(&self, other: &TSequence) -> Result<TSequence> {
        let mut data = vec![None; self.grid.cell_count()];
        let mut any = false;
        for &f in &self.present {
            if let Some(b) = other.data[f as usize] {
                data[f as usize] = Some(self.data[f as usize].unwrap() * b);
                any = true;
            }
        }
        if !any {
            return Err(KamError::EmptyProduct);
        }
        Self::from_data(self.grid.clone(), self.spectrum.clone(), data)
    }

    /// Entrywise sum on the intersection of domains.
    pub fn add(&self, other: &TSequence) -> Result<TSequence> {
        let mut data = vec![None; self.grid.cell_count()];
        let mut any = false;
        for &f in &self.present {
            if let Some(b) = other.data[f as usize] {
                data[f as usize] = Some(self.data[f as usize].unwrap() + b);
                any = true;
            }
        }
        if !any {
            return Err(KamError::EmptyProduct);
        }
        Self::from_data(self.grid.clone(), self.spectrum.clone(), data)
    }

    /// Add `other` into `self` wherever `other` is defined, keeping the
    /// domain of `self`. Used to accumulate diagonal corrections.
    pub fn add_assign_where(&mut self, other: &TSequence) {
        for &f in &other.present {
            if let Some(v) = self.data[f as usize].as_mut() {
                *v += other.data[f as usize].unwrap();
            }
        }
    }

    pub fn scale(&self, factor: Complex64) -> TSequence {
        let data = self.data.iter().map(|o| o.map(|v| v * factor)).collect();
        TSequence {
            grid: self.grid.clone(),
            spectrum: self.spectrum.clone(),
            data,
            present: self.present.clone(),
        }
    }

    /// Restriction to the indices satisfying `keep`.
    pub fn restrict<F>(&self, keep: F) -> Result<TSequence>
    where
        F: Fn(&MultiIndex) -> bool,
    {
        let mut data = vec![None; self.grid.cell_count()];
        for &f in &self.present {
            let n = self.grid.index_of(f as usize);
            if keep(n) {
                data[f as usize] = self.data[f as usize];
            }
        }
        Self::from_data(self.grid.clone(), self.spectrum.clone(), data)
    }
}

/// The sequence 1/(lambda_{n+k} + v_{n+k} - lambda_n - v_n) on the window,
/// with the unperturbed part of each denominator in stable closed form.
pub fn reciprocal_difference(
    spectrum: &Arc<SpectrumModel>,
    grid: &Arc<WindowGrid>,
    k: &MultiIndex,
    correction: Option<&TSequence>,
) -> Result<TSequence> {
    if k.is_zero() {
        return Err(KamError::InvalidOffset("k = 0".into()));
    }
    let floor = spectrum.denom_floor();
    let mut data = vec![None; grid.cell_count()];
    let mut any = false;
    for n in grid.points() {
        let flat = grid.flat(n).unwrap();
        let Some(flat_k) = grid.flat_shifted(flat, k) else {
            continue;
        };
        let base = spectrum.gap(n, k)?;
        let denom = match correction {
            Some(v) => {
                let (Some(vk), Some(vn)) = (v.get_flat(flat_k), v.get_flat(flat)) else {
                    continue;
                };
                Complex64::new(base, 0.0) + (vk - vn)
            }
            None => Complex64::new(base, 0.0),
        };
        if denom.norm() < floor {
            return Err(KamError::DegenerateSpectrum {
                gap: denom.norm(),
                floor,
                witness: format!("n={n}, k={k}"),
            });
        }
        data[flat] = Some(denom.inv());
        any = true;
    }
    if !any {
        return Err(KamError::EmptyShift(k.to_string()));
    }
    TSequence::from_data(grid.clone(), spectrum.clone(), data)
}
