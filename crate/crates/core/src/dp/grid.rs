use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest supported grid dimension; interpolation visits `2^dim` corners.
pub const MAX_DIM: usize = 8;

const HULL_TOL: f64 = 1e-9;

/// Rectangular tensor grid with strictly increasing levels per axis.
///
/// Nodes are numbered with the last axis varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<S> {
    axes: Vec<Vec<S>>,
    strides: Vec<usize>,
    len: usize,
}

impl<S: Scalar> Grid<S> {
    pub fn new(axes: Vec<Vec<S>>) -> Result<Self> {
        if axes.len() > MAX_DIM {
            return Err(Error::Dimension(format!(
                "grid of dimension {} exceeds {MAX_DIM}",
                axes.len()
            )));
        }
        for (d, axis) in axes.iter().enumerate() {
            if axis.is_empty() {
                return Err(Error::Invalid(format!("grid axis {d} has no levels")));
            }
            if axis.iter().any(|v| !v.is_finite()) || axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Invalid(format!(
                    "grid axis {d} levels must be finite and strictly increasing"
                )));
            }
        }
        let mut strides = vec![0; axes.len()];
        let mut len = 1;
        for d in (0..axes.len()).rev() {
            strides[d] = len;
            len *= axes[d].len();
        }
        Ok(Self { axes, strides, len })
    }

    /// `counts[d]` evenly spaced levels on `[lower[d], upper[d]]`.
    ///
    /// A degenerate interval (`lower == upper`) yields a single level.
    pub fn uniform(lower: &[S], upper: &[S], counts: &[usize]) -> Result<Self> {
        let axes = lower
            .iter()
            .zip(upper)
            .zip(counts)
            .map(|((&lo, &hi), &n)| uniform_levels(lo, hi, n))
            .collect::<Result<Vec<_>>>()?;
        Self::new(axes)
    }

    /// Grid of dimension zero: a single node.
    pub fn point() -> Self {
        Self {
            axes: Vec::new(),
            strides: Vec::new(),
            len: 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn axis(&self, d: usize) -> &[S] {
        &self.axes[d]
    }

    pub fn axes(&self) -> &[Vec<S>] {
        &self.axes
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for d in 0..self.dim() {
            idx[d] = flat / self.strides[d];
            flat %= self.strides[d];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn node(&self, flat: usize) -> Vec<S> {
        let mut out = vec![S::zero(); self.dim()];
        self.node_into(flat, &mut out);
        out
    }

    pub fn node_into(&self, mut flat: usize, out: &mut [S]) {
        for d in 0..self.dim() {
            let i = flat / self.strides[d];
            flat %= self.strides[d];
            out[d] = self.axes[d][i];
        }
    }

    /// True when the grid hull contains the box `[lower, upper]`.
    pub fn covers(&self, lower: &[S], upper: &[S]) -> bool {
        self.axes
            .iter()
            .zip(lower.iter().zip(upper))
            .all(|(axis, (&lo, &hi))| axis[0] <= lo && *axis.last().unwrap() >= hi)
    }

    /// Cell lower index and weight of the upper neighbour along each axis.
    ///
    /// Points within a small tolerance outside the hull snap onto it; points
    /// further out return the offending axis.
    #[inline]
    fn locate(
        &self,
        x: &[S],
        cell: &mut [usize; MAX_DIM],
        weight: &mut [S; MAX_DIM],
    ) -> Result<(), usize> {
        for (d, axis) in self.axes.iter().enumerate() {
            let v = x[d];
            let n = axis.len();
            let (lo, hi) = (axis[0], axis[n - 1]);
            let tol = S::of(HULL_TOL) * (hi - lo).max(S::one());
            if !(v >= lo - tol && v <= hi + tol) {
                return Err(d);
            }
            if n == 1 {
                cell[d] = 0;
                weight[d] = S::zero();
                continue;
            }
            let v = v.max(lo).min(hi);
            let k = axis.partition_point(|&l| l <= v);
            let i = k.saturating_sub(1).min(n - 2);
            cell[d] = i;
            let w = (v - axis[i]) / (axis[i + 1] - axis[i]);
            weight[d] = w.max(S::zero()).min(S::one());
        }
        Ok(())
    }

    /// Multilinear interpolation of nodal `values` at `x`.
    ///
    /// Corners with zero weight are skipped; any participating `+inf`
    /// node makes the result `+inf`.
    pub fn interpolate(&self, values: &[S], x: &[S]) -> Result<S, usize> {
        let mut cell = [0usize; MAX_DIM];
        let mut weight = [S::zero(); MAX_DIM];
        self.locate(x, &mut cell, &mut weight)?;
        let dim = self.dim();
        let mut acc = S::zero();
        for mask in 0..(1usize << dim) {
            let mut w = S::one();
            let mut flat = 0;
            for d in 0..dim {
                if mask >> d & 1 == 1 {
                    w *= weight[d];
                    flat += (cell[d] + 1) * self.strides[d];
                } else {
                    w *= S::one() - weight[d];
                    flat += cell[d] * self.strides[d];
                }
            }
            if w == S::zero() {
                continue;
            }
            let v = values[flat];
            if v == S::infinity() {
                return Ok(S::infinity());
            }
            acc += w * v;
        }
        Ok(acc)
    }
}

pub(crate) fn uniform_levels<S: Scalar>(lo: S, hi: S, n: usize) -> Result<Vec<S>> {
    if !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(Error::Invalid(format!(
            "cannot grid the interval [{lo}, {hi}]"
        )));
    }
    if lo == hi {
        return Ok(vec![lo]);
    }
    if n < 2 {
        return Err(Error::Invalid(format!(
            "an interval [{lo}, {hi}] needs at least 2 levels"
        )));
    }
    let step = (hi - lo) / S::of((n - 1) as f64);
    Ok((0..n)
        .map(|k| {
            if k == n - 1 {
                hi
            } else {
                lo + step * S::of(k as f64)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_values_are_reproduced_exactly() {
        let g = Grid::uniform(&[0.0, -1.0], &[4.0, 1.0], &[5, 3]).unwrap();
        let values: Vec<f64> = (0..g.len()).map(|k| (k as f64).sin()).collect();
        for k in 0..g.len() {
            assert_eq!(g.interpolate(&values, &g.node(k)).unwrap(), values[k]);
        }
    }

    #[test]
    fn midpoint_is_the_average() {
        let g = Grid::new(vec![vec![0.0, 1.0]]).unwrap();
        assert_eq!(g.interpolate(&[2.0, 4.0], &[0.5]).unwrap(), 3.0);
    }

    #[test]
    fn infinity_only_when_it_participates() {
        let g = Grid::new(vec![vec![0.0, 1.0, 2.0]]).unwrap();
        let v = [1.0, 2.0, f64::INFINITY];
        assert_eq!(g.interpolate(&v, &[1.0]).unwrap(), 2.0);
        assert_eq!(g.interpolate(&v, &[1.5]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn outside_hull_is_an_error() {
        let g = Grid::new(vec![vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(g.interpolate(&[0.0; 4], &[0.5, 1.5]), Err(1));
        // within tolerance snaps
        assert!(g.interpolate(&[0.0; 4], &[1.0 + 1e-12, 0.0]).is_ok());
    }

    #[test]
    fn rejects_non_increasing_levels() {
        assert!(Grid::<f64>::new(vec![vec![0.0, 0.0]]).is_err());
        assert!(Grid::<f64>::new(vec![vec![]]).is_err());
    }

    #[test]
    fn zero_dimensional_grid_has_one_node() {
        let g = Grid::<f64>::point();
        assert_eq!(g.len(), 1);
        assert_eq!(g.interpolate(&[7.0], &[]).unwrap(), 7.0);
    }

    #[test]
    fn multi_index_round_trips() {
        let g = Grid::uniform(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], &[2, 3, 4]).unwrap();
        for k in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(k)), k);
        }
        assert_eq!(g.multi_index(5), vec![0, 1, 1]);
    }
}
