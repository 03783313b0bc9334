//! Bounded boxes and their uniform hypercube partitions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Snap tolerance, in units of one cell width, used when a point or an
/// extent lands within rounding error of a cell boundary.
const SNAP: f64 = 1e-9;

/// Axis-aligned box `[lower, upper]` with the max-norm metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxSpec", into = "BoxSpec")]
pub struct BoxSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BoxSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<BoxSpec> for BoxSpace {
    type Error = Error;
    fn try_from(s: BoxSpec) -> Result<Self> {
        BoxSpace::new(s.lower, s.upper)
    }
}

impl From<BoxSpace> for BoxSpec {
    fn from(b: BoxSpace) -> Self {
        BoxSpec {
            lower: b.lower,
            upper: b.upper,
        }
    }
}

impl BoxSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidSpace("a box needs at least one dimension".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::Dimension(format!(
                "lower has {} entries, upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidSpace(format!(
                    "dimension {k}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(BoxSpace { lower, upper })
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn extent(&self, k: usize) -> f64 {
        self.upper[k] - self.lower[k]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dims()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    pub fn check_dims(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims() {
            return Err(Error::Dimension(format!(
                "point has {} coordinates, space has {}",
                x.len(),
                self.dims()
            )));
        }
        Ok(())
    }
}

/// Max-norm distance between two points.
pub fn chebyshev(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// A cell of a [`GridPartition`], addressed both ways. `flat` is the
/// row-major position (last dimension fastest).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub flat: usize,
    pub multi: Vec<usize>,
}

/// Uniform partition of a [`BoxSpace`] into half-open cells. The topmost
/// cell along each dimension is closed, and is shorter than the others
/// when the extent is not a multiple of the width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct GridPartition {
    space: BoxSpace,
    widths: Vec<f64>,
    counts: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
}

/// JSON form of a grid: `{lower, upper, widths}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub widths: Vec<f64>,
}

impl TryFrom<GridSpec> for GridPartition {
    type Error = Error;
    fn try_from(s: GridSpec) -> Result<Self> {
        GridPartition::new(BoxSpace::new(s.lower, s.upper)?, s.widths)
    }
}

impl From<GridPartition> for GridSpec {
    fn from(g: GridPartition) -> Self {
        GridSpec {
            lower: g.space.lower,
            upper: g.space.upper,
            widths: g.widths,
        }
    }
}

impl GridPartition {
    pub fn new(space: BoxSpace, widths: Vec<f64>) -> Result<Self> {
        if widths.len() != space.dims() {
            return Err(Error::Dimension(format!(
                "{} widths for a {}-dimensional space",
                widths.len(),
                space.dims()
            )));
        }
        let mut counts = Vec::with_capacity(widths.len());
        for (k, w) in widths.iter().enumerate() {
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::InvalidSpace(format!(
                    "dimension {k}: cell width must be positive, got {w}"
                )));
            }
            let ratio = space.extent(k) / w;
            let n = (ratio - SNAP).ceil().max(1.0);
            if n > (usize::MAX >> 8) as f64 {
                return Err(Error::InvalidSpace(format!(
                    "dimension {k}: width {w} yields too many cells"
                )));
            }
            counts.push(n as usize);
        }
        let mut strides = vec![1usize; counts.len()];
        for k in (0..counts.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * counts[k + 1];
        }
        let total = counts
            .iter()
            .try_fold(1usize, |acc, c| acc.checked_mul(*c))
            .ok_or_else(|| Error::InvalidSpace("cell count overflows".into()))?;
        Ok(GridPartition {
            space,
            widths,
            counts,
            strides,
            total,
        })
    }

    pub fn space(&self) -> &BoxSpace {
        &self.space
    }

    pub fn dims(&self) -> usize {
        self.space.dims()
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn max_width(&self) -> f64 {
        self.widths.iter().copied().fold(0.0, f64::max)
    }

    /// Same box, every width halved.
    pub fn halved(&self) -> Result<Self> {
        GridPartition::new(self.space.clone(), self.widths.iter().map(|w| w / 2.0).collect())
    }

    pub fn spec(&self) -> GridSpec {
        self.clone().into()
    }

    pub fn index_from_multi(&self, multi: &[usize]) -> Result<CellIndex> {
        if multi.len() != self.dims() {
            return Err(Error::Dimension(format!(
                "multi-index has {} entries, grid has {} dimensions",
                multi.len(),
                self.dims()
            )));
        }
        let mut flat = 0;
        for (k, (m, c)) in multi.iter().zip(&self.counts).enumerate() {
            if m >= c {
                return Err(Error::IndexOutOfRange {
                    index: *m,
                    total: self.counts[k],
                });
            }
            flat += m * self.strides[k];
        }
        Ok(CellIndex {
            flat,
            multi: multi.to_vec(),
        })
    }

    pub fn index_from_flat(&self, flat: usize) -> Result<CellIndex> {
        if flat >= self.total {
            return Err(Error::IndexOutOfRange {
                index: flat,
                total: self.total,
            });
        }
        Ok(CellIndex {
            flat,
            multi: self.multi_of(flat),
        })
    }

    /// Per-dimension indices of a flat index already known to be in range.
    pub(crate) fn multi_of(&self, flat: usize) -> Vec<usize> {
        self.strides
            .iter()
            .zip(&self.counts)
            .map(|(s, c)| (flat / s) % c)
            .collect()
    }

    /// Flat index of an in-range multi-index, without allocating.
    pub(crate) fn flat_of(&self, multi: &[usize]) -> Option<usize> {
        if multi.len() != self.dims() {
            return None;
        }
        let mut flat = 0;
        for ((m, c), s) in multi.iter().zip(&self.counts).zip(&self.strides) {
            if m >= c {
                return None;
            }
            flat += m * s;
        }
        Some(flat)
    }

    /// Cell of the point after clamping it into the box.
    pub(crate) fn locate_clamped(&self, x: &[f64]) -> usize {
        let (lo, hi) = (self.space.lower(), self.space.upper());
        (0..self.dims())
            .map(|k| self.axis_index(k, x[k].clamp(lo[k], hi[k])) * self.strides[k])
            .sum()
    }

    /// Center of an in-range flat cell.
    pub(crate) fn center_unchecked(&self, flat: usize) -> Vec<f64> {
        (0..self.dims())
            .map(|k| {
                let (lo, hi) = self.axis_bounds(k, (flat / self.strides[k]) % self.counts[k]);
                0.5 * (lo + hi)
            })
            .collect()
    }

    fn axis_index(&self, k: usize, v: f64) -> usize {
        let t = (v - self.space.lower()[k]) / self.widths[k];
        let idx = (t + SNAP).floor().max(0.0) as usize;
        idx.min(self.counts[k] - 1)
    }

    /// Containing cell under the half-open tiling rule.
    pub fn cell_of(&self, x: &[f64]) -> Result<CellIndex> {
        Ok(CellIndex {
            flat: self.flat_cell_of(x)?,
            multi: self.multi_cell_of(x)?,
        })
    }

    pub fn flat_cell_of(&self, x: &[f64]) -> Result<usize> {
        self.space.check_dims(x)?;
        if !self.space.contains(x) {
            return Err(Error::OutOfDomain { point: x.to_vec() });
        }
        Ok((0..self.dims())
            .map(|k| self.axis_index(k, x[k]) * self.strides[k])
            .sum())
    }

    fn multi_cell_of(&self, x: &[f64]) -> Result<Vec<usize>> {
        self.space.check_dims(x)?;
        if !self.space.contains(x) {
            return Err(Error::OutOfDomain { point: x.to_vec() });
        }
        Ok((0..self.dims()).map(|k| self.axis_index(k, x[k])).collect())
    }

    /// Lower and upper corner of a cell along dimension `k`.
    pub fn axis_bounds(&self, k: usize, idx: usize) -> (f64, f64) {
        let lo = self.space.lower()[k] + idx as f64 * self.widths[k];
        let hi = if idx + 1 >= self.counts[k] {
            self.space.upper()[k]
        } else {
            self.space.lower()[k] + (idx + 1) as f64 * self.widths[k]
        };
        (lo, hi)
    }

    pub fn cell_bounds(&self, flat: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let idx = self.index_from_flat(flat)?;
        Ok(idx
            .multi
            .iter()
            .enumerate()
            .map(|(k, m)| self.axis_bounds(k, *m))
            .unzip())
    }

    pub fn center_of(&self, i: &CellIndex) -> Result<Vec<f64>> {
        let checked = self.index_from_multi(&i.multi)?;
        if checked.flat != i.flat {
            return Err(Error::Dimension(format!(
                "flat index {} disagrees with multi-index {:?}",
                i.flat, i.multi
            )));
        }
        Ok(self.center_multi(&i.multi))
    }

    pub fn center_of_flat(&self, flat: usize) -> Result<Vec<f64>> {
        if flat >= self.total {
            return Err(Error::IndexOutOfRange {
                index: flat,
                total: self.total,
            });
        }
        Ok(self.center_multi(&self.multi_of(flat)))
    }

    fn center_multi(&self, multi: &[usize]) -> Vec<f64> {
        multi
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let (lo, hi) = self.axis_bounds(k, *m);
                0.5 * (lo + hi)
            })
            .collect()
    }

    /// Lower bound of output bin `k` along dimension `j`.
    pub fn bin_lower(&self, j: usize, k: usize) -> f64 {
        self.axis_bounds(j, k).0
    }

    /// Deterministic probe points inside a cell: the center first, then an
    /// inset lattice of `r` points per axis at fractions `(t + 0.5) / r`,
    /// truncated to `samples` points in total. All probes lie strictly
    /// inside the half-open cell.
    pub fn probe_points(&self, flat: usize, samples: usize) -> Result<Vec<Vec<f64>>> {
        let (lo, hi) = self.cell_bounds(flat)?;
        let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let mut out = vec![center.clone()];
        if samples <= 1 {
            return Ok(out);
        }
        let d = self.dims();
        // An odd lattice contains the center itself.
        let distinct = |r: usize| r.pow(d as u32) + r.is_multiple_of(2) as usize;
        let mut r = 2usize;
        while distinct(r) < samples {
            r += 1;
        }
        let n_lattice = r.pow(d as u32);
        for t in 0..n_lattice {
            if out.len() >= samples {
                break;
            }
            let mut rem = t;
            let mut p = vec![0.0; d];
            for k in (0..d).rev() {
                let q = rem % r;
                rem /= r;
                let frac = (q as f64 + 0.5) / r as f64;
                p[k] = lo[k] + frac * (hi[k] - lo[k]);
            }
            if p != center {
                out.push(p);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mc_input() -> GridPartition {
        GridPartition::new(
            BoxSpace::new(vec![-1.2, -0.07], vec![0.6, 0.07]).unwrap(),
            vec![0.1, 0.01],
        )
        .unwrap()
    }

    fn unit_out() -> GridPartition {
        GridPartition::new(BoxSpace::new(vec![-1.0], vec![1.0]).unwrap(), vec![0.1]).unwrap()
    }

    #[test]
    fn mountain_car_counts() {
        assert_eq!(mc_input().counts(), &[18, 14]);
        assert_eq!(mc_input().total(), 252);
        assert_eq!(unit_out().total(), 20);
    }

    #[test]
    fn cell_of_examples() {
        let g = mc_input();
        let c = g.cell_of(&[-0.5, 0.0]).unwrap();
        assert_eq!(c.multi, vec![7, 7]);
        assert_eq!(c.flat, 7 * 14 + 7);
        assert_eq!(g.cell_of(&[-1.2, -0.07]).unwrap().multi, vec![0, 0]);
        assert_eq!(g.cell_of(&[0.6, 0.07]).unwrap().multi, vec![17, 13]);
    }

    #[test]
    fn cell_of_rejects_outside() {
        let g = mc_input();
        assert!(matches!(
            g.cell_of(&[0.7, 0.0]),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(matches!(g.cell_of(&[0.0]), Err(Error::Dimension(_))));
        assert!(g.cell_of(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn center_examples() {
        let out = unit_out();
        let c0 = out.center_of(&out.index_from_flat(0).unwrap()).unwrap();
        assert_abs_diff_eq!(c0[0], -0.95, epsilon = 1e-12);

        let one = GridPartition::new(BoxSpace::new(vec![2.0], vec![3.0]).unwrap(), vec![5.0])
            .unwrap();
        assert_eq!(one.total(), 1);
        assert_abs_diff_eq!(one.center_of_flat(0).unwrap()[0], 2.5);

        let g = mc_input();
        let c = g.center_of(&g.index_from_multi(&[7, 7]).unwrap()).unwrap();
        assert_abs_diff_eq!(c[0], -0.45, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], 0.005, epsilon = 1e-12);
    }

    #[test]
    fn center_of_rejects_bad_index() {
        let g = mc_input();
        assert!(g.center_of_flat(252).is_err());
        let bad = CellIndex {
            flat: 3,
            multi: vec![0, 0],
        };
        assert!(g.center_of(&bad).is_err());
    }

    #[test]
    fn partial_top_cell() {
        let g = GridPartition::new(BoxSpace::new(vec![0.0], vec![1.0]).unwrap(), vec![0.3])
            .unwrap();
        assert_eq!(g.counts(), &[4]);
        assert_eq!(g.axis_bounds(0, 3), (0.8999999999999999, 1.0));
        assert_eq!(g.cell_of(&[0.95]).unwrap().flat, 3);
    }

    #[test]
    fn flat_multi_roundtrip() {
        let g = GridPartition::new(
            BoxSpace::new(vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0]).unwrap(),
            vec![0.5, 0.5, 1.0],
        )
        .unwrap();
        for flat in 0..g.total() {
            let idx = g.index_from_flat(flat).unwrap();
            assert_eq!(g.index_from_multi(&idx.multi).unwrap().flat, flat);
            let c = g.center_of(&idx).unwrap();
            assert_eq!(g.cell_of(&c).unwrap(), idx);
        }
    }

    #[test]
    fn probe_points_stay_inside() {
        let g = mc_input();
        for flat in [0, 105, 251] {
            let pts = g.probe_points(flat, 25).unwrap();
            assert_eq!(pts.len(), 25);
            assert_eq!(pts[0], g.center_of_flat(flat).unwrap());
            for p in &pts {
                assert_eq!(g.flat_cell_of(p).unwrap(), flat);
            }
        }
        assert_eq!(g.probe_points(3, 4).unwrap().len(), 4);
        let line = GridPartition::new(BoxSpace::new(vec![0.0], vec![1.0]).unwrap(), vec![0.5])
            .unwrap();
        for n in 1..12 {
            assert_eq!(line.probe_points(1, n).unwrap().len(), n);
        }
        assert_eq!(g.probe_points(3, 1).unwrap().len(), 1);
    }

    #[test]
    fn invalid_spaces() {
        assert!(BoxSpace::new(vec![1.0], vec![1.0]).is_err());
        assert!(BoxSpace::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(BoxSpace::new(vec![], vec![]).is_err());
        let b = BoxSpace::new(vec![0.0], vec![1.0]).unwrap();
        assert!(GridPartition::new(b.clone(), vec![0.0]).is_err());
        assert!(GridPartition::new(b, vec![0.1, 0.1]).is_err());
    }

    #[test]
    fn grid_json_contract() {
        let g = mc_input();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"lower":[-1.2,-0.07],"upper":[0.6,0.07],"widths":[0.1,0.01]}"#);
        let back: GridPartition = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<GridPartition>(
            r#"{"lower":[1.0],"upper":[0.0],"widths":[0.1]}"#
        )
        .is_err());
    }
}
