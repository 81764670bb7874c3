//! Distribution comparison: empirical histograms, the normalised L1 error,
//! and basin-based mode coverage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Probability masses on a grid, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub spec: GridSpec,
    pub mass: Vec<f64>,
}

impl DensityGrid {
    pub fn from_unnormalized(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::ShapeMismatch(format!(
                "grid has {} points, got {} values",
                spec.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("density values must be finite and non-negative".into()));
        }
        let total: f64 = values.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("density has zero total mass".into()));
        }
        let mass = values.into_iter().map(|v| v / total).collect();
        Ok(DensityGrid { spec, mass })
    }

    /// Total mass of points whose coordinates satisfy `pred`.
    pub fn mass_where(&self, pred: impl Fn(&[f64]) -> bool) -> f64 {
        (0..self.spec.len())
            .filter(|&k| pred(&self.spec.point(k)))
            .map(|k| self.mass[k])
            .sum()
    }
}

/// Normalised histogram of `samples` over the cells of `spec`. Samples outside
/// a box land in the nearest edge cell; torus samples wrap.
pub fn empirical_histogram(samples: &[Vec<f64>], spec: &GridSpec) -> Result<DensityGrid> {
    if samples.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let mut counts = vec![0.0; spec.len()];
    for s in samples {
        counts[spec.cell_of(s)?] += 1.0;
    }
    DensityGrid::from_unnormalized(spec.clone(), counts)
}

/// `½ Σ |p − q|`, in [0, 1] for normalised inputs.
pub fn l1_error(p: &DensityGrid, q: &DensityGrid) -> Result<f64> {
    if p.spec.shape != q.spec.shape || p.spec.space != q.spec.space || p.spec.layout != q.spec.layout {
        return Err(Error::ShapeMismatch("density grids differ".into()));
    }
    Ok(0.5 * p.mass.iter().zip(&q.mass).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// A named basin of attraction: the set of grid points that belong to one mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Basin {
    pub name: String,
    pub cells: Vec<usize>,
}

/// Per basin, whether `hist` has a strict local maximum inside it.
///
/// Neighbours include diagonals and wrap on a torus. A maximum may be a
/// plateau: a connected set of equal cells, every cell bordering it strictly
/// lower. A plateau covering the whole grid is not a maximum.
pub fn mode_coverage(hist: &DensityGrid, basins: &[Basin]) -> Result<Vec<bool>> {
    let maxima = local_maxima(hist);
    basins
        .iter()
        .map(|b| {
            if b.cells.is_empty() {
                return Err(Error::Empty("basin"));
            }
            Ok(b.cells.iter().any(|&k| maxima[k]))
        })
        .collect()
}

/// Flags every cell that belongs to a strict (possibly plateau) local maximum.
pub fn local_maxima(hist: &DensityGrid) -> Vec<bool> {
    let n = hist.mass.len();
    let mut flag = vec![false; n];
    let mut seen = vec![false; n];
    for k in 0..n {
        let v = hist.mass[k];
        if seen[k] || v <= 0.0 {
            continue;
        }
        let nb = hist.spec.neighbours(k, true);
        if nb.iter().any(|&m| hist.mass[m] > v) {
            continue;
        }
        if nb.iter().all(|&m| hist.mass[m] < v) {
            seen[k] = true;
            flag[k] = true;
            continue;
        }
        // flood the plateau of value v through k
        let mut plateau = vec![k];
        let mut stack = vec![k];
        seen[k] = true;
        let mut is_max = true;
        while let Some(c) = stack.pop() {
            for m in hist.spec.neighbours(c, true) {
                let w = hist.mass[m];
                if w > v {
                    is_max = false;
                } else if w == v && !seen[m] {
                    seen[m] = true;
                    plateau.push(m);
                    stack.push(m);
                }
            }
        }
        if is_max && plateau.len() < n {
            for c in plateau {
                flag[c] = true;
            }
        }
    }
    flag
}

/// Partitions the grid into basins of the local minima of `potential` by
/// steepest descent over neighbouring points. Returns one cell list per
/// minimum, ordered by increasing potential at the minimum.
pub fn descent_basins(spec: &GridSpec, potential: &[f64]) -> Vec<(usize, Vec<usize>)> {
    let n = spec.len();
    let next: Vec<usize> = (0..n)
        .map(|k| {
            let mut best = k;
            for m in spec.neighbours(k, true) {
                // ties resolve towards the lower index so plateaus drain to one point
                if potential[m] < potential[best] || (potential[m] == potential[best] && m < best) {
                    best = m;
                }
            }
            best
        })
        .collect();
    let mut sink = vec![usize::MAX; n];
    for k in 0..n {
        let mut path = vec![k];
        let mut c = k;
        while next[c] != c && sink[c] == usize::MAX {
            c = next[c];
            path.push(c);
        }
        let s = if sink[c] == usize::MAX { c } else { sink[c] };
        for p in path {
            sink[p] = s;
        }
    }
    let mut minima: Vec<usize> = (0..n).filter(|&k| next[k] == k).collect();
    minima.sort_by(|&a, &b| potential[a].total_cmp(&potential[b]));
    minima
        .into_iter()
        .map(|m| (m, (0..n).filter(|&k| sink[k] == m).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{tabulate, Layout};
    use crate::manifold::Space;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn spec4() -> GridSpec {
        GridSpec::new(Space::interval(0.0, 4.0).unwrap(), Layout::Cells, &[1.0]).unwrap()
    }

    #[test]
    fn l1_examples() {
        let p = DensityGrid::from_unnormalized(spec4(), vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let q = DensityGrid::from_unnormalized(spec4(), vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(l1_error(&p, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(l1_error(&p, &q).unwrap(), 1.0, epsilon = 1e-15);
        let other = DensityGrid::from_unnormalized(
            GridSpec::new(Space::interval(0.0, 4.0).unwrap(), Layout::Cells, &[0.5]).unwrap(),
            vec![1.0; 8],
        )
        .unwrap();
        assert!(l1_error(&p, &other).is_err());
    }

    #[test]
    fn histogram_single_point() {
        let h = empirical_histogram(&vec![vec![2.5]; 10], &spec4()).unwrap();
        assert_eq!(h.mass, vec![0.0, 0.0, 1.0, 0.0]);
        assert!(empirical_histogram(&[], &spec4()).is_err());
    }

    #[test]
    fn torus_histogram_seam() {
        let spec = GridSpec::new(Space::torus(1).unwrap(), Layout::Cells, &[0.1]).unwrap();
        let a = spec.cell_of(&[PI - 1e-9]).unwrap();
        let b = spec.cell_of(&[-PI]).unwrap();
        assert!(spec.neighbours(a, false).contains(&b));
    }

    #[test]
    fn coverage_examples() {
        let spec = GridSpec::new(Space::interval(0.0, 10.0).unwrap(), Layout::Cells, &[1.0]).unwrap();
        let basins = vec![
            Basin { name: "a".into(), cells: (0..5).collect() },
            Basin { name: "b".into(), cells: (5..10).collect() },
        ];
        let uniform = DensityGrid::from_unnormalized(spec.clone(), vec![1.0; 10]).unwrap();
        assert_eq!(mode_coverage(&uniform, &basins).unwrap(), vec![false, false]);
        let mut spike = vec![0.0; 10];
        spike[7] = 1.0;
        let spike = DensityGrid::from_unnormalized(spec.clone(), spike).unwrap();
        assert_eq!(mode_coverage(&spike, &basins).unwrap(), vec![false, true]);
        let mut twin = vec![0.0; 10];
        twin[2] = 1.0;
        twin[3] = 1.0;
        let twin = DensityGrid::from_unnormalized(spec.clone(), twin).unwrap();
        assert_eq!(mode_coverage(&twin, &basins).unwrap(), vec![true, false]);
        let empty = vec![Basin { name: "x".into(), cells: vec![] }];
        assert!(mode_coverage(&spike, &empty).is_err());
    }

    #[test]
    fn descent_finds_both_wells() {
        let spec = GridSpec::new(Space::torus(1).unwrap(), Layout::Cells, &[0.05]).unwrap();
        let v = tabulate(&spec, |p| (2.0 * p[0]).cos() + 0.1 * p[0].cos());
        let basins = descent_basins(&spec, &v);
        assert_eq!(basins.len(), 2);
        let total: usize = basins.iter().map(|b| b.1.len()).sum();
        assert_eq!(total, spec.len());
        assert!(basins.iter().all(|b| b.1.len() > 30));
    }

    #[test]
    fn histogram_error_shrinks_as_root_n() {
        use crate::rng::{stream, Purpose};
        use rand_distr::{Distribution, Normal};
        let spec = GridSpec::new(Space::interval(-4.0, 4.0).unwrap(), Layout::Cells, &[0.1]).unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let cdf = |x: f64| 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
        let q = DensityGrid::from_unnormalized(
            spec.clone(),
            (0..spec.len())
                .map(|k| {
                    let c = spec.point(k)[0];
                    cdf(c + 0.05) - cdf(c - 0.05)
                })
                .collect(),
        )
        .unwrap();
        let mean_error = |n: usize| -> f64 {
            (0..10u64)
                .map(|seed| {
                    let mut rng = stream(seed, Purpose::Standalone, n as u64);
                    let xs: Vec<Vec<f64>> = (0..n)
                        .map(|_| loop {
                            let x: f64 = normal.sample(&mut rng);
                            if x.abs() < 4.0 {
                                break vec![x];
                            }
                        })
                        .collect();
                    l1_error(&empirical_histogram(&xs, &spec).unwrap(), &q).unwrap()
                })
                .sum::<f64>()
                / 10.0
        };
        let ratio = mean_error(10_000) / mean_error(40_000);
        assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
    }

    fn masses(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_filter("non-zero", |v| v.iter().sum::<f64>() > 1e-6)
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn l1_is_a_bounded_metric(a in masses(6), b in masses(6), c in masses(6)) {
            let spec = GridSpec::new(Space::interval(0.0, 6.0).unwrap(), Layout::Cells, &[1.0]).unwrap();
            let [p, q, r] = [a, b, c].map(|v| DensityGrid::from_unnormalized(spec.clone(), v).unwrap());
            let pq = l1_error(&p, &q).unwrap();
            prop_assert_eq!(pq, l1_error(&q, &p).unwrap());
            prop_assert!((0.0..=1.0 + 1e-12).contains(&pq));
            prop_assert!(pq <= l1_error(&p, &r).unwrap() + l1_error(&r, &q).unwrap() + 1e-12);
        }
    }
}
