//! State spaces and their geometry: wrapping on the torus, reflecting walls on
//! a box, and wrap-aware displacement.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Space {
    /// Axis-aligned box with reflecting walls.
    BoundedBox { lower: Vec<f64>, upper: Vec<f64> },
    /// Flat k-torus with period 2π per coordinate, canonical interval [−π, π).
    Torus { dim: usize },
}

impl Space {
    pub fn bounded_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidParameter(
                "box bounds must be non-empty and of equal length".into(),
            ));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] < upper[i])) {
            return Err(Error::InvalidParameter(format!(
                "box lower[{i}]={} must be below upper[{i}]={}",
                lower[i], upper[i]
            )));
        }
        Ok(Space::BoundedBox { lower, upper })
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Self::bounded_box(vec![lower], vec![upper])
    }

    pub fn torus(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("torus dimension must be positive".into()));
        }
        Ok(Space::Torus { dim })
    }

    pub fn dim(&self) -> usize {
        match self {
            Space::BoundedBox { lower, .. } => lower.len(),
            Space::Torus { dim } => *dim,
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, Space::Torus { .. })
    }

    /// Lower and upper bound of coordinate `i`; the torus spans [−π, π).
    pub fn bounds(&self, i: usize) -> (f64, f64) {
        match self {
            Space::BoundedBox { lower, upper } => (lower[i], upper[i]),
            Space::Torus { .. } => (-PI, PI),
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: n,
            });
        }
        Ok(())
    }

    /// Canonical representative of `x`. Identity on a box.
    pub fn wrap(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(match self {
            Space::BoundedBox { .. } => x.to_vec(),
            Space::Torus { .. } => x.iter().map(|&v| wrap_angle(v)).collect(),
        })
    }

    /// In-place variant of [`Space::wrap`].
    pub fn wrap_in_place(&self, x: &mut [f64]) -> Result<()> {
        self.check_dim(x.len())?;
        if self.is_torus() {
            for v in x.iter_mut() {
                *v = wrap_angle(*v);
            }
        }
        Ok(())
    }

    /// Mirrors coordinates that left the box about the violated wall and
    /// negates the matching momentum components.
    pub fn reflect(&self, x: &mut [f64], p: &mut [f64]) -> Result<()> {
        let Space::BoundedBox { lower, upper } = self else {
            return Err(Error::InvalidParameter("reflect requires a bounded box".into()));
        };
        self.check_dim(x.len())?;
        self.check_dim(p.len())?;
        for i in 0..x.len() {
            let (lo, hi) = (lower[i], upper[i]);
            let width = hi - lo;
            let overshoot = if x[i] < lo {
                lo - x[i]
            } else if x[i] > hi {
                x[i] - hi
            } else {
                continue;
            };
            if !(overshoot < width) {
                return Err(Error::ReflectionOvershoot {
                    dim: i,
                    value: x[i],
                    lower: lo,
                    upper: hi,
                });
            }
            x[i] = if x[i] < lo { 2.0 * lo - x[i] } else { 2.0 * hi - x[i] };
            p[i] = -p[i];
        }
        Ok(())
    }

    /// `b − a`, taking the short way round on the torus.
    pub fn displacement(&self, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(a.len())?;
        self.check_dim(b.len())?;
        Ok(match self {
            Space::BoundedBox { .. } => a.iter().zip(b).map(|(a, b)| b - a).collect(),
            Space::Torus { .. } => a.iter().zip(b).map(|(a, b)| wrap_angle(b - a)).collect(),
        })
    }

    /// True when `x` is canonical (inside the box, or inside [−π, π) per angle).
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(i, &v)| {
                let (lo, hi) = self.bounds(i);
                if self.is_torus() {
                    (lo..hi).contains(&v)
                } else {
                    (lo..=hi).contains(&v)
                }
            })
    }
}

/// Maps an angle onto [−π, π). Already-canonical inputs are returned untouched,
/// which makes the map exactly idempotent.
pub fn wrap_angle(v: f64) -> f64 {
    if (-PI..PI).contains(&v) {
        return v;
    }
    let mut y = (v + PI).rem_euclid(TAU) - PI;
    if y >= PI {
        y -= TAU;
    }
    if y < -PI {
        y = -PI;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn wrap_examples() {
        let t = Space::torus(2).unwrap();
        let w = t.wrap(&[3.5, 0.0]).unwrap();
        // modular oracle: 3.5 - 2π
        assert_abs_diff_eq!(w[0], -2.783185307179586, epsilon = 1e-12);
        assert_eq!(w[1], 0.0);
        assert_eq!(t.wrap(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);

        let b = Space::interval(-5.0, 23.0).unwrap();
        assert_eq!(b.wrap(&[7.0]).unwrap(), vec![7.0]);
        assert!(matches!(
            t.wrap(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn wrap_handles_seam() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        let w = wrap_angle(-PI - 1e-12);
        assert!((-PI..PI).contains(&w));
        assert!(w > 3.14);
    }

    #[test]
    fn reflect_examples() {
        let b = Space::interval(-5.0, 23.0).unwrap();
        let (mut x, mut p) = ([-5.1], [-0.3]);
        b.reflect(&mut x, &mut p).unwrap();
        assert_abs_diff_eq!(x[0], -4.9, epsilon = 1e-12);
        assert_eq!(p[0], 0.3);

        let (mut x, mut p) = ([10.0], [1.0]);
        b.reflect(&mut x, &mut p).unwrap();
        assert_eq!((x[0], p[0]), (10.0, 1.0));

        let (mut x, mut p) = ([23.4], [0.2]);
        b.reflect(&mut x, &mut p).unwrap();
        assert_abs_diff_eq!(x[0], 22.6, epsilon = 1e-12);
        assert_eq!(p[0], -0.2);
    }

    #[test]
    fn reflect_rejects_large_overshoot() {
        let b = Space::interval(0.0, 1.0).unwrap();
        let (mut x, mut p) = ([2.5], [1.0]);
        assert!(matches!(
            b.reflect(&mut x, &mut p),
            Err(Error::ReflectionOvershoot { dim: 0, .. })
        ));
        let t = Space::torus(1).unwrap();
        assert!(t.reflect(&mut [0.0], &mut [0.0]).is_err());
    }

    #[test]
    fn displacement_examples() {
        let t = Space::torus(1).unwrap();
        let d = t.displacement(&[3.0], &[-3.0]).unwrap();
        // minimal-angle oracle: -3 - 3 + 2π
        assert_abs_diff_eq!(d[0], 0.28318530717958623, epsilon = 1e-12);
        assert_eq!(t.displacement(&[0.5], &[0.5]).unwrap(), vec![0.0]);
        let b = Space::interval(-5.0, 23.0).unwrap();
        assert_eq!(b.displacement(&[2.0], &[5.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(Space::interval(1.0, 1.0).is_err());
        assert!(Space::bounded_box(vec![0.0], vec![1.0, 2.0]).is_err());
        assert!(Space::torus(0).is_err());
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent(x in -100.0f64..100.0, y in -100.0f64..100.0) {
            let t = Space::torus(2).unwrap();
            let w = t.wrap(&[x, y]).unwrap();
            prop_assert_eq!(t.wrap(&w).unwrap(), w.clone());
            prop_assert!(t.contains(&w));
        }

        #[test]
        fn displacement_antisymmetric_and_short(
            a in -PI..PI, b in -PI..PI, c in -50.0f64..50.0, d in -50.0f64..50.0
        ) {
            let t = Space::torus(1).unwrap();
            let ab = t.displacement(&[a], &[b]).unwrap()[0];
            let ba = t.displacement(&[b], &[a]).unwrap()[0];
            prop_assume!(ab.abs() < PI - 1e-9);
            prop_assert!((ab + ba).abs() < 1e-12);
            prop_assert!(ab.abs() <= PI);
            let bx = Space::interval(-60.0, 60.0).unwrap();
            let cd = bx.displacement(&[c], &[d]).unwrap()[0];
            let dc = bx.displacement(&[d], &[c]).unwrap()[0];
            prop_assert_eq!(cd, -dc);
        }

        #[test]
        fn reflect_preserves_speed(x in -5.9f64..23.9, p in -3.0f64..3.0) {
            let b = Space::interval(-5.0, 23.0).unwrap();
            let (mut xs, mut ps) = ([x], [p]);
            b.reflect(&mut xs, &mut ps).unwrap();
            prop_assert_eq!(ps[0].abs(), p.abs());
            prop_assert!(b.contains(&xs));
        }
    }
}
