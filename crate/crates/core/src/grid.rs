//! Discretized joint distributions over named parameter axes.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::numeric::{compensated_sum, CompensatedSum};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("axis `{0}` needs at least two ascending, finite points")]
    BadAxis(String),
    #[error("duplicate axis name `{0}`")]
    DuplicateAxis(String),
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("weights must be finite and non-negative")]
    NegativeWeight,
    #[error("grid has zero total mass")]
    ZeroMass,
    #[error("unknown axis `{0}`")]
    UnknownAxis(String),
    #[error("grids have different axes or points")]
    AxisMismatch,
}

/// One grid axis: cell representative points inside `bounds`.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub points: Vec<f64>,
    pub bounds: (f64, f64),
}

impl Axis {
    /// Midpoints of `cells` equal cells spanning `[lo, hi]`.
    pub fn uniform(name: impl Into<String>, lo: f64, hi: f64, cells: usize) -> Self {
        let h = (hi - lo) / cells as f64;
        Self {
            name: name.into(),
            points: (0..cells).map(|i| lo + (i as f64 + 0.5) * h).collect(),
            bounds: (lo, hi),
        }
    }

    pub fn from_points(name: impl Into<String>, points: Vec<f64>) -> Result<Self, GridError> {
        let name = name.into();
        let ok = points.len() >= 2
            && points.iter().all(|p| p.is_finite())
            && points.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(GridError::BadAxis(name));
        }
        let n = points.len();
        let lo = points[0] - 0.5 * (points[1] - points[0]);
        let hi = points[n - 1] + 0.5 * (points[n - 1] - points[n - 2]);
        Ok(Self {
            name,
            points,
            bounds: (lo, hi),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Cell boundaries: midway between neighbouring points, clamped to the
    /// axis bounds at either end.
    pub fn edges(&self) -> Vec<f64> {
        let n = self.points.len();
        let mut e = Vec::with_capacity(n + 1);
        e.push(self.bounds.0);
        for w in self.points.windows(2) {
            e.push(0.5 * (w[0] + w[1]));
        }
        e.push(self.bounds.1);
        e
    }

    /// Mass of each cell under a CDF, renormalized over the axis.
    pub fn cell_masses(&self, cdf: impl Fn(f64) -> f64) -> Vec<f64> {
        let edges = self.edges();
        let cdfs: Vec<f64> = edges.iter().map(|&x| cdf(x)).collect();
        let mut m: Vec<f64> = cdfs.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
        let total = compensated_sum(&m);
        if total > 0.0 {
            for v in &mut m {
                *v /= total;
            }
        }
        m
    }
}

/// A dense, row-major grid of non-negative weights over named axes.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrid {
    axes: Vec<Axis>,
    weights: Vec<f64>,
}

impl ParamGrid {
    pub fn new(axes: Vec<Axis>, weights: Vec<f64>) -> Result<Self, GridError> {
        let mut names = BTreeSet::new();
        for a in &axes {
            if a.len() < 2 {
                return Err(GridError::BadAxis(a.name.clone()));
            }
            if !names.insert(a.name.as_str()) {
                return Err(GridError::DuplicateAxis(a.name.clone()));
            }
        }
        let expected: usize = axes.iter().map(Axis::len).product();
        if weights.len() != expected {
            return Err(GridError::WeightCount {
                expected,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(GridError::NegativeWeight);
        }
        Ok(Self { axes, weights })
    }

    /// Tensor product of per-axis masses, normalized.
    pub fn product(axes: Vec<Axis>, masses: &[Vec<f64>]) -> Result<Self, GridError> {
        let mut weights = vec![1.0];
        for m in masses {
            let mut next = Vec::with_capacity(weights.len() * m.len());
            for &w in &weights {
                next.extend(m.iter().map(|&x| w * x));
            }
            weights = next;
        }
        let mut g = Self::new(axes, weights)?;
        g.normalize()?;
        Ok(g)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn axis(&self, name: &str) -> Option<&Axis> {
        self.axes.iter().find(|a| a.name == name)
    }

    pub fn axis_index(&self, name: &str) -> Result<usize, GridError> {
        self.axes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| GridError::UnknownAxis(name.to_string()))
    }

    pub fn total(&self) -> f64 {
        compensated_sum(&self.weights)
    }

    pub fn normalize(&mut self) -> Result<(), GridError> {
        let total = self.total();
        if !(total > 0.0) || !total.is_finite() {
            return Err(GridError::ZeroMass);
        }
        for w in &mut self.weights {
            *w /= total;
        }
        Ok(())
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.axes.len()];
        for i in (0..self.axes.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.axes[i + 1].len();
        }
        s
    }

    /// Sums out every axis not in `keep`; kept axes retain grid order.
    pub fn marginal(&self, keep: &[&str]) -> Result<ParamGrid, GridError> {
        for k in keep {
            self.axis_index(k)?;
        }
        let kept: Vec<usize> = (0..self.axes.len())
            .filter(|&i| keep.contains(&self.axes[i].name.as_str()))
            .collect();
        if kept.len() == self.axes.len() {
            return Ok(self.clone());
        }
        let strides = self.strides();
        let out_axes: Vec<Axis> = kept.iter().map(|&i| self.axes[i].clone()).collect();
        let out_len: usize = out_axes.iter().map(Axis::len).product();
        let mut out_strides = vec![1; kept.len()];
        for i in (0..kept.len().saturating_sub(1)).rev() {
            out_strides[i] = out_strides[i + 1] * out_axes[i + 1].len();
        }
        let mut acc = vec![CompensatedSum::new(); out_len];
        for (cell, &w) in self.weights.iter().enumerate() {
            let mut target = 0;
            for (k, &axis) in kept.iter().enumerate() {
                let idx = (cell / strides[axis]) % self.axes[axis].len();
                target += idx * out_strides[k];
            }
            acc[target].add(w);
        }
        let mut g = ParamGrid::new(out_axes, acc.iter().map(CompensatedSum::value).collect())?;
        g.normalize()?;
        Ok(g)
    }

    /// Posterior moments of one axis: `(mean, variance)`.
    pub fn moments(&self, name: &str) -> Result<(f64, f64), GridError> {
        let m = if self.axes.len() == 1 {
            self.clone()
        } else {
            self.marginal(&[name])?
        };
        let idx = m.axis_index(name)?;
        let pts = &m.axes[idx].points;
        let total = m.total();
        let mut s1 = CompensatedSum::new();
        for (w, x) in m.weights.iter().zip(pts) {
            s1.add(w * x);
        }
        let mean = s1.value() / total;
        let mut s2 = CompensatedSum::new();
        for (w, x) in m.weights.iter().zip(pts) {
            s2.add(w * (x - mean) * (x - mean));
        }
        Ok((mean, s2.value() / total))
    }

    pub fn mean(&self, name: &str) -> Result<f64, GridError> {
        Ok(self.moments(name)?.0)
    }

    pub fn same_support(&self, other: &ParamGrid) -> bool {
        self.axes.len() == other.axes.len()
            && self
                .axes
                .iter()
                .zip(&other.axes)
                .all(|(a, b)| a.name == b.name && a.points == b.points)
    }

    pub fn l1_distance(&self, other: &ParamGrid) -> Result<f64, GridError> {
        if !self.same_support(other) {
            return Err(GridError::AxisMismatch);
        }
        let mut acc = CompensatedSum::new();
        for (a, b) in self.weights.iter().zip(&other.weights) {
            acc.add((a - b).abs());
        }
        Ok(acc.value())
    }

    /// Renames the single axis of a one-axis grid.
    pub fn renamed(mut self, name: &str) -> Self {
        if self.axes.len() == 1 {
            self.axes[0].name = name.to_string();
        }
        self
    }

    /// Area-preserving rebinning of a one-axis grid onto at most `max`
    /// equal cells over the same bounds.
    pub fn rebinned(&self, max: usize) -> Result<ParamGrid, GridError> {
        if self.axes.len() != 1 {
            return Err(GridError::AxisMismatch);
        }
        let axis = &self.axes[0];
        if axis.len() <= max {
            return Ok(self.clone());
        }
        let (lo, hi) = axis.bounds;
        let coarse = Axis::uniform(axis.name.clone(), lo, hi, max);
        let h = (hi - lo) / max as f64;
        let edges = axis.edges();
        let mut out = vec![CompensatedSum::new(); max];
        for (i, &w) in self.weights.iter().enumerate() {
            let (a, b) = (edges[i], edges[i + 1]);
            let width = b - a;
            if width <= 0.0 {
                out[(((a - lo) / h) as usize).min(max - 1)].add(w);
                continue;
            }
            let first = (((a - lo) / h).floor().max(0.0) as usize).min(max - 1);
            let last = ((((b - lo) / h).ceil() as usize).max(first + 1)).min(max);
            for (j, cell) in out.iter_mut().enumerate().take(last).skip(first) {
                let cl = lo + j as f64 * h;
                let overlap = (b.min(cl + h) - a.max(cl)).max(0.0);
                if overlap > 0.0 {
                    cell.add(w * overlap / width);
                }
            }
        }
        ParamGrid::new(vec![coarse], out.iter().map(CompensatedSum::value).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_grid() -> ParamGrid {
        let x = Axis::from_points("x", vec![0.2, 0.5, 0.8]).unwrap();
        let y = Axis::from_points("y", vec![0.1, 0.4, 0.9]).unwrap();
        #[rustfmt::skip]
        let w = vec![
            0.05, 0.10, 0.05,
            0.20, 0.10, 0.10,
            0.15, 0.05, 0.20,
        ];
        ParamGrid::new(vec![x, y], w).unwrap()
    }

    #[test]
    fn hand_enumerated_marginals() {
        let g = hand_grid();
        let mx = g.marginal(&["x"]).unwrap();
        let expect_x = [0.20, 0.40, 0.40];
        for (a, b) in mx.weights().iter().zip(expect_x) {
            assert!((a - b).abs() < 1e-15);
        }
        let my = g.marginal(&["y"]).unwrap();
        let expect_y = [0.40, 0.25, 0.35];
        for (a, b) in my.weights().iter().zip(expect_y) {
            assert!((a - b).abs() < 1e-15);
        }
        // mean of x: 0.2*0.2 + 0.5*0.4 + 0.8*0.4
        assert!((g.mean("x").unwrap() - 0.56).abs() < 1e-15);
    }

    #[test]
    fn keeping_all_axes_is_identity() {
        let g = hand_grid();
        assert_eq!(g.marginal(&["x", "y"]).unwrap(), g);
        assert!(matches!(g.marginal(&["z"]), Err(GridError::UnknownAxis(_))));
    }

    #[test]
    fn product_marginal_is_the_factor() {
        let a = Axis::uniform("a", 0.0, 1.0, 4);
        let b = Axis::uniform("b", 0.0, 1.0, 3);
        let ma = vec![0.1, 0.2, 0.3, 0.4];
        let mb = vec![0.5, 0.25, 0.25];
        let g = ParamGrid::product(vec![a, b], &[ma.clone(), mb.clone()]).unwrap();
        let m = g.marginal(&["b"]).unwrap();
        for (x, y) in m.weights().iter().zip(&mb) {
            assert!((x - y).abs() < 1e-15);
        }
        let m = g.marginal(&["a"]).unwrap();
        for (x, y) in m.weights().iter().zip(&ma) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn invariants_enforced() {
        let a = Axis::uniform("a", 0.0, 1.0, 2);
        assert!(ParamGrid::new(vec![a.clone()], vec![0.5, -0.1]).is_err());
        assert!(ParamGrid::new(vec![a.clone(), a.clone()], vec![0.25; 4]).is_err());
        assert!(ParamGrid::new(vec![a.clone()], vec![0.5]).is_err());
        assert!(Axis::from_points("p", vec![0.5]).is_err());
        assert!(Axis::from_points("p", vec![0.5, 0.4]).is_err());
        let mut z = ParamGrid::new(vec![a], vec![0.0, 0.0]).unwrap();
        assert_eq!(z.normalize(), Err(GridError::ZeroMass));
    }

    #[test]
    fn uniform_edges_are_cell_boundaries() {
        let a = Axis::uniform("a", 0.0, 1.0, 4);
        let e = a.edges();
        for (x, y) in e.iter().zip([0.0, 0.25, 0.5, 0.75, 1.0]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn rebinning_preserves_mass_and_mean() {
        let a = Axis::uniform("a", 0.0, 1.0, 401);
        let masses = a.cell_masses(|x| crate::numeric::beta_cdf(41.0, 61.0, x));
        let g = ParamGrid::new(vec![a], masses).unwrap();
        let r = g.rebinned(101).unwrap();
        assert_eq!(r.axes()[0].len(), 101);
        assert!((r.total() - 1.0).abs() < 1e-12);
        assert!((r.mean("a").unwrap() - g.mean("a").unwrap()).abs() < 1e-4);
    }
}
