//! Multi-index arithmetic and finite truncation windows of Z^d.
//!
//! Every supremum and sum in the crate is evaluated over index pairs drawn
//! from a [`Window`], the finite box (or l1 ball) that stands in for the
//! infinite lattice. Enumeration order is lexicographic and stable, so all
//! downstream reports are reproducible.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};

/// A point of Z^d.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex {
    coords: Vec<i64>,
}

impl MultiIndex {
    pub fn new(coords: Vec<i64>) -> Self {
        MultiIndex { coords }
    }

    pub fn zero(dim: usize) -> Self {
        MultiIndex {
            coords: vec![0; dim],
        }
    }

    /// Signed unit vector along `axis`.
    pub fn unit(dim: usize, axis: usize, sign: i64) -> Self {
        let mut coords = vec![0; dim];
        coords[axis] = sign.signum();
        MultiIndex { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.coords
    }

    /// |k| = |k_1| + ... + |k_d|.
    pub fn l1_norm(&self) -> u64 {
        self.coords.iter().map(|c| c.unsigned_abs()).sum()
    }

    pub fn linf_norm(&self) -> u64 {
        self.coords
            .iter()
            .map(|c| c.unsigned_abs())
            .max()
            .unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|&c| c == 0)
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.dim(), other.dim());
        MultiIndex {
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.dim(), other.dim());
        MultiIndex {
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn neg(&self) -> MultiIndex {
        MultiIndex {
            coords: self.coords.iter().map(|c| -c).collect(),
        }
    }

    /// Parse the CSV form "1;-2".
    pub fn parse(s: &str) -> Result<Self> {
        let coords = s
            .split(';')
            .map(|p| {
                p.trim()
                    .parse::<i64>()
                    .map_err(|e| KamError::Domain(format!("bad index component {p:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if coords.is_empty() {
            return Err(KamError::Domain("empty multi-index".into()));
        }
        Ok(MultiIndex { coords })
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ";")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowShape {
    /// l-infinity box: all |n_i| <= R. Count (2R+1)^d.
    BoxLinf,
    /// l1 ball: |n_1| + ... + |n_d| <= R.
    BallL1,
}

/// Finite truncation of Z^d, symmetric under negation and containing zero.
///
/// `interior_radius` marks the sub-window on which infinite-lattice claims
/// are asserted; the buffer `radius - interior_radius` absorbs truncation
/// effects.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Window {
    dim: usize,
    radius: i64,
    shape: WindowShape,
    interior_radius: i64,
}

impl Window {
    pub fn new(
        dim: usize,
        radius: i64,
        shape: WindowShape,
        interior_radius: Option<i64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(KamError::InvalidWindow("dimension must be >= 1".into()));
        }
        if radius < 0 {
            return Err(KamError::InvalidWindow(format!(
                "radius must be >= 0, got {radius}"
            )));
        }
        let interior = interior_radius.unwrap_or(radius);
        if interior < 0 || interior > radius {
            return Err(KamError::InvalidWindow(format!(
                "interior radius {interior} must lie in [0, {radius}]"
            )));
        }
        Ok(Window {
            dim,
            radius,
            shape,
            interior_radius: interior,
        })
    }

    /// 1-d box, the workhorse of the test suite.
    pub fn box_1d(radius: i64) -> Self {
        Window::new(1, radius, WindowShape::BoxLinf, None).expect("valid 1-d window")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> i64 {
        self.radius
    }

    pub fn shape(&self) -> WindowShape {
        self.shape
    }

    pub fn interior_radius(&self) -> i64 {
        self.interior_radius
    }

    pub fn buffer(&self) -> i64 {
        self.radius - self.interior_radius
    }

    fn within(&self, n: &MultiIndex, radius: i64) -> bool {
        if n.dim() != self.dim {
            return false;
        }
        match self.shape {
            WindowShape::BoxLinf => n.coords().iter().all(|c| c.abs() <= radius),
            WindowShape::BallL1 => n.l1_norm() <= radius as u64,
        }
    }

    pub fn contains(&self, n: &MultiIndex) -> bool {
        self.within(n, self.radius)
    }

    pub fn is_interior(&self, n: &MultiIndex) -> bool {
        self.within(n, self.interior_radius)
    }
}

/// Deterministic lexicographic enumeration of the window.
pub fn enumerate_window(window: &Window) -> Vec<MultiIndex> {
    let d = window.dim();
    let r = window.radius();
    let mut out = Vec::new();
    let mut cur = vec![-r; d];
    loop {
        let idx = MultiIndex::new(cur.clone());
        if window.contains(&idx) {
            out.push(idx);
        }
        // odometer increment, last coordinate fastest
        let mut axis = d;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            if cur[axis] < r {
                cur[axis] += 1;
                for c in cur.iter_mut().skip(axis + 1) {
                    *c = -r;
                }
                break;
            }
        }
    }
}

/// {n in W : n + k in W}. Empty when the shift exceeds the window.
pub fn shifted_domain(window: &Window, k: &MultiIndex) -> Vec<MultiIndex> {
    enumerate_window(window)
        .into_iter()
        .filter(|n| window.contains(&n.add(k)))
        .collect()
}

/// Default interior radius: keep a buffer of ceil(4 / alpha_eff) sites so the
/// exponential tails reaching the boundary stay below reporting tolerances.
pub fn default_interior_radius(radius: i64, alpha_eff: f64) -> i64 {
    if alpha_eff <= 0.0 {
        return 0;
    }
    let buffer = (4.0 / alpha_eff).ceil() as i64;
    (radius - buffer).max(0)
}

/// A window together with flat-index bookkeeping for O(1) lookups.
///
/// Cells are addressed inside the bounding box [-R, R]^d; for l1 balls the
/// corner cells are simply unused. `points` lists the in-shape cells in
/// enumeration order, which is also ascending flat order.
#[derive(Debug)]
pub struct WindowGrid {
    window: Window,
    side: i64,
    cells: usize,
    points: Vec<MultiIndex>,
    cell_index: Vec<MultiIndex>,
    in_shape: Vec<bool>,
    ordinal: Vec<u32>,
}

impl WindowGrid {
    pub fn new(window: Window) -> Arc<Self> {
        let d = window.dim();
        let side = 2 * window.radius() + 1;
        let cells = (side as usize).pow(d as u32);
        let mut cell_index = Vec::with_capacity(cells);
        let mut in_shape = vec![false; cells];
        let mut ordinal = vec![u32::MAX; cells];
        let mut points = Vec::new();
        let r = window.radius();
        let mut cur = vec![-r; d];
        for flat in 0..cells {
            let idx = MultiIndex::new(cur.clone());
            if window.contains(&idx) {
                in_shape[flat] = true;
                ordinal[flat] = points.len() as u32;
                points.push(idx.clone());
            }
            cell_index.push(idx);
            let mut axis = d;
            while axis > 0 {
                axis -= 1;
                if cur[axis] < r {
                    cur[axis] += 1;
                    for c in cur.iter_mut().skip(axis + 1) {
                        *c = -r;
                    }
                    break;
                }
            }
        }
        Arc::new(WindowGrid {
            window,
            side,
            cells,
            points,
            cell_index,
            in_shape,
            ordinal,
        })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn cell_count(&self) -> usize {
        self.cells
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    /// In-shape points in enumeration order.
    pub fn points(&self) -> &[MultiIndex] {
        &self.points
    }

    /// Flat cell index of `n`, or None when `n` falls outside the window.
    pub fn flat(&self, n: &MultiIndex) -> Option<usize> {
        if n.dim() != self.window.dim() {
            return None;
        }
        let r = self.window.radius();
        let mut flat: i64 = 0;
        for &c in n.coords() {
            if c.abs() > r {
                return None;
            }
            flat = flat * self.side + (c + r);
        }
        let flat = flat as usize;
        if self.in_shape[flat] {
            Some(flat)
        } else {
            None
        }
    }

    /// Multi-index of a flat cell (valid for any cell of the bounding box).
    pub fn index_of(&self, flat: usize) -> &MultiIndex {
        &self.cell_index[flat]
    }

    /// Position of an in-shape cell within `points()`.
    pub fn ordinal_of(&self, flat: usize) -> usize {
        debug_assert!(self.in_shape[flat]);
        self.ordinal[flat] as usize
    }

    /// Flat index of `n + k` when still inside the window.
    pub fn flat_shifted(&self, flat: usize, k: &MultiIndex) -> Option<usize> {
        self.flat(&self.cell_index[flat].add(k))
    }

    pub fn is_interior_flat(&self, flat: usize) -> bool {
        self.window.is_interior(&self.cell_index[flat])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn enumerate_1d_box() {
        let w = Window::box_1d(2);
        let pts = enumerate_window(&w);
        let coords: Vec<i64> = pts.iter().map(|p| p.coords()[0]).collect();
        assert_eq!(coords, vec![-2, -1, 0, 1, 2]);
        assert_eq!(pts.len(), 5);
    }

    #[test]
    fn enumerate_2d_box_count() {
        let w = Window::new(2, 1, WindowShape::BoxLinf, None).unwrap();
        assert_eq!(enumerate_window(&w).len(), 9);
    }

    #[test]
    fn enumerate_2d_l1_ball_count() {
        // exhaustive count of {|k1| + |k2| <= 2}
        let w = Window::new(2, 2, WindowShape::BallL1, None).unwrap();
        let pts = enumerate_window(&w);
        assert_eq!(pts.len(), 13);
        assert!(pts.iter().all(|p| p.l1_norm() <= 2));
    }

    #[test]
    fn invalid_windows_rejected() {
        assert!(Window::new(0, 3, WindowShape::BoxLinf, None).is_err());
        assert!(Window::new(1, -1, WindowShape::BoxLinf, None).is_err());
        assert!(Window::new(1, 3, WindowShape::BoxLinf, Some(4)).is_err());
    }

    #[test]
    fn l1_norm_values() {
        assert_eq!(MultiIndex::new(vec![0, 0]).l1_norm(), 0);
        assert_eq!(MultiIndex::new(vec![1, -1]).l1_norm(), 2);
        assert_eq!(MultiIndex::new(vec![3, -2, 0]).l1_norm(), 5);
    }

    #[test]
    fn l1_triangle_inequality_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..500 {
            let d = rng.random_range(1..=4);
            let j = MultiIndex::new((0..d).map(|_| rng.random_range(-9..=9)).collect());
            let k = MultiIndex::new((0..d).map(|_| rng.random_range(-9..=9)).collect());
            assert!(j.add(&k).l1_norm() <= j.l1_norm() + k.l1_norm());
        }
    }

    #[test]
    fn shifted_domain_cases() {
        let w = Window::box_1d(2);
        let full = shifted_domain(&w, &MultiIndex::new(vec![0]));
        assert_eq!(full.len(), 5);

        let one = shifted_domain(&w, &MultiIndex::new(vec![1]));
        let coords: Vec<i64> = one.iter().map(|p| p.coords()[0]).collect();
        assert_eq!(coords, vec![-2, -1, 0, 1]);

        assert!(shifted_domain(&w, &MultiIndex::new(vec![5])).is_empty());
    }

    #[test]
    fn shifted_domain_symmetric_size() {
        let w = Window::new(2, 3, WindowShape::BallL1, None).unwrap();
        for k in enumerate_window(&Window::new(2, 2, WindowShape::BoxLinf, None).unwrap()) {
            let plus = shifted_domain(&w, &k).len();
            let minus = shifted_domain(&w, &k.neg()).len();
            assert_eq!(plus, minus, "asymmetry at k = {k}");
        }
    }

    #[test]
    fn enumeration_is_stable() {
        let w = Window::new(2, 2, WindowShape::BoxLinf, None).unwrap();
        assert_eq!(enumerate_window(&w), enumerate_window(&w));
    }

    #[test]
    fn grid_flat_roundtrip() {
        let w = Window::new(2, 3, WindowShape::BallL1, Some(1)).unwrap();
        let grid = WindowGrid::new(w);
        for (ord, p) in grid.points().iter().enumerate() {
            let flat = grid.flat(p).expect("in shape");
            assert_eq!(grid.index_of(flat), p);
            assert_eq!(grid.ordinal_of(flat), ord);
        }
        // corner of the bounding box is outside the l1 ball
        assert!(grid.flat(&MultiIndex::new(vec![3, 3])).is_none());
        assert!(grid.window().is_interior(&MultiIndex::new(vec![1, 0])));
        assert!(!grid.window().is_interior(&MultiIndex::new(vec![2, 0])));
    }

    #[test]
    fn interior_default() {
        assert_eq!(default_interior_radius(40, 1.0), 36);
        assert_eq!(default_interior_radius(3, 0.5), 0);
    }

    #[test]
    fn index_display_parse() {
        let k = MultiIndex::new(vec![1, -2]);
        assert_eq!(k.to_string(), "1;-2");
        assert_eq!(MultiIndex::parse("1;-2").unwrap(), k);
    }
}
