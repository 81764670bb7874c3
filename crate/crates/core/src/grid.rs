//! Regular grids over a [`Space`]: node/cell geometry, multilinear
//! interpolation, and finite-difference gradients.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::Space;

/// Whether grid values live on lattice nodes (including both walls of a box)
/// or at the centres of cells that tile the space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Nodes,
    Cells,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub space: Space,
    pub layout: Layout,
    pub shape: Vec<usize>,
    /// Effective spacing per dimension (the requested spacing rounded so the
    /// grid fits its bounds exactly).
    pub spacing: Vec<f64>,
}

impl GridSpec {
    /// Builds a grid over `space` with approximately `spacing` per dimension.
    ///
    /// On a torus the number of points is `round(2π/spacing)` and the spacing
    /// is adjusted to `2π/n`; on a box the count is `round(width/spacing)`
    /// cells (plus one for nodes).
    pub fn new(space: Space, layout: Layout, spacing: &[f64]) -> Result<Self> {
        if spacing.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: spacing.len(),
            });
        }
        let mut shape = Vec::with_capacity(space.dim());
        let mut eff = Vec::with_capacity(space.dim());
        for (i, &h) in spacing.iter().enumerate() {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidParameter(format!("grid spacing must be positive, got {h}")));
            }
            let (lo, hi) = space.bounds(i);
            let cells = ((hi - lo) / h).round().max(1.0) as usize;
            let n = match (space.is_torus(), layout) {
                (false, Layout::Nodes) => cells + 1,
                _ => cells,
            };
            shape.push(n);
            eff.push((hi - lo) / cells as f64);
        }
        Ok(GridSpec {
            space,
            layout,
            shape,
            spacing: eff,
        })
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn periodic(&self) -> bool {
        self.space.is_torus()
    }

    /// Coordinate of index 0 along dimension `i`.
    pub fn origin(&self, i: usize) -> f64 {
        let (lo, _) = self.space.bounds(i);
        match self.layout {
            Layout::Nodes => lo,
            Layout::Cells => lo + 0.5 * self.spacing[i],
        }
    }

    /// Coordinate of point `j` along dimension `i`.
    pub fn coord(&self, i: usize, j: usize) -> f64 {
        self.origin(i) + j as f64 * self.spacing[i]
    }

    /// All coordinates along dimension `i`.
    pub fn axis(&self, i: usize) -> Vec<f64> {
        (0..self.shape[i]).map(|j| self.coord(i, j)).collect()
    }

    /// Row-major flat index (last dimension fastest).
    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&j, &n)| acc * n + j)
    }

    pub fn unflat(&self, mut k: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for i in (0..self.dim()).rev() {
            idx[i] = k % self.shape[i];
            k /= self.shape[i];
        }
        idx
    }

    /// Coordinates of the point at flat index `k`.
    pub fn point(&self, k: usize) -> Vec<f64> {
        self.unflat(k)
            .iter()
            .enumerate()
            .map(|(i, &j)| self.coord(i, j))
            .collect()
    }

    /// Cell containing `x` for a cell-layout grid. Points outside a box are
    /// clamped to the edge cell; torus coordinates wrap.
    pub fn cell_of(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut idx = Vec::with_capacity(self.dim());
        for (i, &v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite("grid coordinate"));
            }
            let (lo, _) = self.space.bounds(i);
            let n = self.shape[i] as i64;
            let u = ((v - lo) / self.spacing[i]).floor() as i64;
            let j = if self.periodic() {
                u.rem_euclid(n)
            } else {
                u.clamp(0, n - 1)
            };
            idx.push(j as usize);
        }
        Ok(self.flat(&idx))
    }

    /// Lower corner index and fractional offset of `z` along dimension `i`.
    fn locate(&self, i: usize, z: f64) -> Result<(usize, usize, f64)> {
        let n = self.shape[i];
        let h = self.spacing[i];
        if self.periodic() {
            let u = (z - self.origin(i)).rem_euclid(TAU) / h;
            let j0 = (u.floor() as usize).min(n - 1);
            let frac = (u - j0 as f64).clamp(0.0, 1.0);
            Ok((j0, (j0 + 1) % n, frac))
        } else {
            let first = self.origin(i);
            let last = self.coord(i, n - 1);
            let tol = 1e-9 * h;
            if !(z >= first - tol && z <= last + tol) {
                return Err(Error::OutOfBounds { dim: i, value: z });
            }
            if n == 1 {
                return Ok((0, 0, 0.0));
            }
            let u = ((z - first) / h).clamp(0.0, (n - 1) as f64);
            let j0 = (u.floor() as usize).min(n - 2);
            Ok((j0, j0 + 1, u - j0 as f64))
        }
    }

    /// Multilinear interpolation of `values` at `z`.
    pub fn interpolate(&self, values: &[f64], z: &[f64]) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        if values.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "grid has {} points, values have {}",
                self.len(),
                values.len()
            )));
        }
        let d = self.dim();
        let mut corners = Vec::with_capacity(d);
        for (i, &zi) in z.iter().enumerate() {
            corners.push(self.locate(i, zi)?);
        }
        let mut acc = 0.0;
        let mut idx = vec![0usize; d];
        for mask in 0..(1usize << d) {
            let mut weight = 1.0;
            for i in 0..d {
                let (j0, j1, f) = corners[i];
                if mask >> i & 1 == 1 {
                    idx[i] = j1;
                    weight *= f;
                } else {
                    idx[i] = j0;
                    weight *= 1.0 - f;
                }
            }
            if weight != 0.0 {
                acc += weight * values[self.flat(&idx)];
            }
        }
        Ok(acc)
    }

    /// Gradient of the interpolated field at `z` by central differences with
    /// step equal to the grid spacing. Box grids fall back to one-sided
    /// differences within one spacing of a wall.
    pub fn gradient(&self, values: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut grad = Vec::with_capacity(d);
        let mut probe = z.to_vec();
        let centre = self.interpolate(values, z)?;
        for i in 0..d {
            let h = self.spacing[i];
            let zi = z[i];
            let g = if self.periodic() {
                probe[i] = zi + h;
                let up = self.interpolate(values, &probe)?;
                probe[i] = zi - h;
                let down = self.interpolate(values, &probe)?;
                (up - down) / (2.0 * h)
            } else {
                let first = self.origin(i);
                let last = self.coord(i, self.shape[i] - 1);
                let can_up = zi + h <= last;
                let can_down = zi - h >= first;
                match (can_down, can_up) {
                    (true, true) => {
                        probe[i] = zi + h;
                        let up = self.interpolate(values, &probe)?;
                        probe[i] = zi - h;
                        let down = self.interpolate(values, &probe)?;
                        (up - down) / (2.0 * h)
                    }
                    (false, true) => {
                        probe[i] = zi + h;
                        (self.interpolate(values, &probe)? - centre) / h
                    }
                    (true, false) => {
                        probe[i] = zi - h;
                        (centre - self.interpolate(values, &probe)?) / h
                    }
                    (false, false) => 0.0,
                }
            };
            probe[i] = zi;
            grad.push(g);
        }
        Ok(grad)
    }

    /// Quadrature weight of each point along dimension `i`: trapezoid on box
    /// nodes, plain spacing for cells and periodic nodes.
    pub fn weights(&self, i: usize) -> Vec<f64> {
        let n = self.shape[i];
        let h = self.spacing[i];
        let mut w = vec![h; n];
        if self.layout == Layout::Nodes && !self.periodic() && n > 1 {
            w[0] = 0.5 * h;
            w[n - 1] = 0.5 * h;
        }
        w
    }

    /// Product quadrature weight for every point, row-major.
    pub fn volume_weights(&self) -> Vec<f64> {
        let per_dim: Vec<Vec<f64>> = (0..self.dim()).map(|i| self.weights(i)).collect();
        (0..self.len())
            .map(|k| {
                self.unflat(k)
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| per_dim[i][j])
                    .product()
            })
            .collect()
    }

    /// Flat indices of the (up to 2·d, or 3^d − 1 with diagonals) neighbours
    /// of point `k`. Periodic grids wrap; box grids drop out-of-range cells.
    pub fn neighbours(&self, k: usize, diagonal: bool) -> Vec<usize> {
        let idx = self.unflat(k);
        let d = self.dim();
        let mut out = Vec::new();
        let offsets: Vec<Vec<i64>> = if diagonal {
            (0..3usize.pow(d as u32))
                .map(|mut m| {
                    (0..d)
                        .map(|_| {
                            let o = (m % 3) as i64 - 1;
                            m /= 3;
                            o
                        })
                        .collect()
                })
                .filter(|o: &Vec<i64>| o.iter().any(|&v| v != 0))
                .collect()
        } else {
            (0..d)
                .flat_map(|i| {
                    [-1i64, 1].into_iter().map(move |s| {
                        let mut o = vec![0i64; d];
                        o[i] = s;
                        o
                    })
                })
                .collect()
        };
        'next: for o in offsets {
            let mut n_idx = Vec::with_capacity(d);
            for i in 0..d {
                let n = self.shape[i] as i64;
                let j = idx[i] as i64 + o[i];
                if self.periodic() {
                    n_idx.push(j.rem_euclid(n) as usize);
                } else if (0..n).contains(&j) {
                    n_idx.push(j as usize);
                } else {
                    continue 'next;
                }
            }
            let f = self.flat(&n_idx);
            if f != k && !out.contains(&f) {
                out.push(f);
            }
        }
        out
    }
}

/// Evaluates `f` at every point of `spec`, row-major.
pub fn tabulate(spec: &GridSpec, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..spec.len()).map(|k| f(&spec.point(k))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn line_nodes() -> GridSpec {
        GridSpec::new(Space::interval(-5.0, 23.0).unwrap(), Layout::Nodes, &[0.01]).unwrap()
    }

    #[test]
    fn shapes() {
        assert_eq!(line_nodes().shape, vec![2801]);
        let cells = GridSpec::new(Space::interval(-5.0, 23.0).unwrap(), Layout::Cells, &[0.01]).unwrap();
        assert_eq!(cells.shape, vec![2800]);
        let torus = GridSpec::new(Space::torus(2).unwrap(), Layout::Nodes, &[0.1, 0.1]).unwrap();
        assert_eq!(torus.shape, vec![63, 63]);
        assert_abs_diff_eq!(torus.spacing[0], TAU / 63.0, epsilon = 1e-15);
        let grid = GridSpec::new(
            Space::bounded_box(vec![-15.0, -15.0], vec![15.0, 15.0]).unwrap(),
            Layout::Cells,
            &[0.075, 0.075],
        )
        .unwrap();
        assert_eq!(grid.shape, vec![400, 400]);
    }

    #[test]
    fn flat_roundtrip() {
        let g = GridSpec::new(Space::torus(2).unwrap(), Layout::Nodes, &[0.5, 0.25]).unwrap();
        for k in [0, 7, 100, g.len() - 1] {
            assert_eq!(g.flat(&g.unflat(k)), k);
        }
    }

    #[test]
    fn constant_grid_has_zero_gradient() {
        let g = line_nodes();
        let v = vec![3.5; g.len()];
        for z in [-5.0, -4.995, 0.123, 22.999, 23.0] {
            assert_eq!(g.gradient(&v, &[z]).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn ramp_gradient_is_exact() {
        let spec = GridSpec::new(
            Space::bounded_box(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap(),
            Layout::Nodes,
            &[0.1, 0.1],
        )
        .unwrap();
        let v = tabulate(&spec, |p| 2.5 * p[0] + 7.0);
        for z in [[0.0, 0.0], [0.55, 1.37], [1.0, 2.0], [0.05, 0.99]] {
            let g = spec.gradient(&v, &z).unwrap();
            assert_abs_diff_eq!(g[0], 2.5, epsilon = 1e-10);
            assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn sine_gradient_matches_cosine() {
        let g = GridSpec::new(Space::interval(-3.0, 3.0).unwrap(), Layout::Nodes, &[0.01]).unwrap();
        let v = tabulate(&g, |p| p[0].sin());
        let mut z = -2.9;
        while z < 2.9 {
            let d = g.gradient(&v, &[z]).unwrap()[0];
            assert!((d - z.cos()).abs() < 1e-4, "z={z} d={d}");
            z += 0.0137;
        }
    }

    #[test]
    fn periodic_interpolation_wraps() {
        let g = GridSpec::new(Space::torus(1).unwrap(), Layout::Nodes, &[0.1]).unwrap();
        let v = tabulate(&g, |p| p[0].cos());
        // across the seam
        let a = g.interpolate(&v, &[PI - 1e-3]).unwrap();
        assert_abs_diff_eq!(a, -1.0, epsilon = 2e-3);
        let d = g.gradient(&v, &[-PI + 1e-6]).unwrap()[0];
        assert_abs_diff_eq!(d, 0.0, epsilon = 2e-3);
        let d = g.gradient(&v, &[1.0]).unwrap()[0];
        assert_abs_diff_eq!(d, -(1.0f64.sin()), epsilon = 3e-3);
    }

    #[test]
    fn out_of_bounds_on_box() {
        let g = line_nodes();
        let v = vec![0.0; g.len()];
        assert!(matches!(g.gradient(&v, &[23.5]), Err(Error::OutOfBounds { .. })));
        assert!(g.interpolate(&v, &[-5.01]).is_err());
    }

    #[test]
    fn cells_clamp_and_wrap() {
        let b = GridSpec::new(Space::interval(0.0, 1.0).unwrap(), Layout::Cells, &[0.25]).unwrap();
        assert_eq!(b.cell_of(&[-3.0]).unwrap(), 0);
        assert_eq!(b.cell_of(&[0.3]).unwrap(), 1);
        assert_eq!(b.cell_of(&[7.0]).unwrap(), 3);
        let t = GridSpec::new(Space::torus(1).unwrap(), Layout::Cells, &[0.1]).unwrap();
        let hi = t.cell_of(&[PI - 1e-9]).unwrap();
        let lo = t.cell_of(&[-PI]).unwrap();
        assert_eq!(lo, 0);
        assert_eq!(hi, t.len() - 1);
        assert!(t.neighbours(lo, false).contains(&hi));
    }

    #[test]
    fn trapezoid_weights_sum_to_width() {
        let g = line_nodes();
        let s: f64 = g.volume_weights().iter().sum();
        assert_abs_diff_eq!(s, 28.0, epsilon = 1e-9);
    }
}
