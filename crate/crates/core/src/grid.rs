//! Cell-centered 3-D grids and normalized densities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridBoundary {
    Periodic,
    ZeroFlux,
}

/// Uniform cell-centered grid on a box; cell (i,j,k) has center
/// lo + (i+1/2, j+1/2, k+1/2) * h. Values are stored z-fastest.
#[derive(Clone, Debug)]
pub struct Grid3 {
    pub shape: [usize; 3],
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub bc: [GridBoundary; 3],
    pub h: [f64; 3],
}

impl Grid3 {
    pub fn new(
        shape: [usize; 3],
        lo: [f64; 3],
        hi: [f64; 3],
        bc: [GridBoundary; 3],
    ) -> Result<Self> {
        let mut errs = Vec::new();
        for a in 0..3 {
            if shape[a] < 8 {
                errs.push(format!("axis {a}: need at least 8 nodes, got {}", shape[a]));
            }
            if !(lo[a] < hi[a]) {
                errs.push(format!("axis {a}: bounds [{}, {}] invalid", lo[a], hi[a]));
            }
        }
        if !errs.is_empty() {
            return Err(Error::InvalidConfig(errs));
        }
        let h = [
            (hi[0] - lo[0]) / shape[0] as f64,
            (hi[1] - lo[1]) / shape[1] as f64,
            (hi[2] - lo[2]) / shape[2] as f64,
        ];
        Ok(Grid3 { shape, lo, hi, bc, h })
    }

    pub fn ncells(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    pub fn cell_volume(&self) -> f64 {
        self.h[0] * self.h[1] * self.h[2]
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.shape[1] + j) * self.shape[2] + k
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.lo[0] + (i as f64 + 0.5) * self.h[0],
            self.lo[1] + (j as f64 + 0.5) * self.h[1],
            self.lo[2] + (k as f64 + 0.5) * self.h[2],
        ]
    }

    /// Center of the face normal to `axis` that sits at index `f` along it
    /// (f in 0..=shape[axis]) and cell indices (a, b) on the other axes in
    /// cyclic order.
    pub fn face_center(&self, axis: usize, f: usize, a: usize, b: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
        x[axis] = self.lo[axis] + f as f64 * self.h[axis];
        x[a1] = self.lo[a1] + (a as f64 + 0.5) * self.h[a1];
        x[a2] = self.lo[a2] + (b as f64 + 0.5) * self.h[a2];
        x
    }

    /// Cell containing `x`, or None when outside the box.
    pub fn locate(&self, x: &[f64]) -> Option<[usize; 3]> {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let t = (x[a] - self.lo[a]) / self.h[a];
            if t < 0.0 || x[a] > self.hi[a] {
                return None;
            }
            c[a] = (t as usize).min(self.shape[a] - 1);
        }
        Some(c)
    }
}

/// Non-negative grid function normalized to unit mass.
#[derive(Clone, Debug)]
pub struct DensityField {
    pub grid: Grid3,
    pub values: Vec<f64>,
}

impl DensityField {
    pub fn uniform(grid: Grid3) -> Self {
        let v = 1.0 / (grid.ncells() as f64 * grid.cell_volume());
        let values = vec![v; grid.ncells()];
        DensityField { grid, values }
    }

    /// Sample `f` at cell centers, verify non-negativity, normalize to unit
    /// mass.
    pub fn from_fn(grid: Grid3, f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let mut values = vec![0.0; grid.ncells()];
        for i in 0..grid.shape[0] {
            for j in 0..grid.shape[1] {
                for k in 0..grid.shape[2] {
                    let v = f(grid.center(i, j, k));
                    if v < 0.0 {
                        return Err(Error::NegativeDensity {
                            value: v,
                            cell: [i, j, k],
                        });
                    }
                    values[grid.idx(i, j, k)] = v;
                }
            }
        }
        let mut d = DensityField { grid, values };
        d.normalize()?;
        Ok(d)
    }

    pub fn normalize(&mut self) -> Result<()> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(Error::NonPositiveDensity { min: m });
        }
        for v in self.values.iter_mut() {
            *v /= m;
        }
        Ok(())
    }

    /// Total mass by compensated (Neumaier) summation.
    pub fn mass(&self) -> f64 {
        compensated_sum(self.values.iter().copied()) * self.grid.cell_volume()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// max over cells of |f/reference - 1| after normalizing the reference
    /// to unit mass on the same grid.
    pub fn linf_relative_error(&self, reference: impl Fn([f64; 3]) -> f64) -> f64 {
        let g = &self.grid;
        let mut rvals = vec![0.0; g.ncells()];
        for i in 0..g.shape[0] {
            for j in 0..g.shape[1] {
                for k in 0..g.shape[2] {
                    rvals[g.idx(i, j, k)] = reference(g.center(i, j, k));
                }
            }
        }
        let rm = compensated_sum(rvals.iter().copied()) * g.cell_volume();
        let mut worst = 0.0f64;
        for (v, r) in self.values.iter().zip(rvals.iter()) {
            let rn = r / rm;
            worst = worst.max((v - rn).abs() / rn.abs().max(1e-300));
        }
        worst
    }

    /// Probability per cell column along `axis` (sums to the total mass).
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let g = &self.grid;
        let mut out = vec![0.0; g.shape[axis]];
        for i in 0..g.shape[0] {
            for j in 0..g.shape[1] {
                for k in 0..g.shape[2] {
                    let c = [i, j, k];
                    out[c[axis]] += self.values[g.idx(i, j, k)] * g.cell_volume();
                }
            }
        }
        out
    }
}

/// Neumaier-compensated sum; deterministic for a fixed iteration order.
pub fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> Grid3 {
        Grid3::new(
            [8, 16, 8],
            [0.0, -1.0, 0.0],
            [1.0, 1.0, 2.0],
            [GridBoundary::Periodic, GridBoundary::ZeroFlux, GridBoundary::Periodic],
        )
        .unwrap()
    }

    #[test]
    fn construction_and_geometry() {
        let g = grid();
        assert_eq!(g.ncells(), 1024);
        assert_relative_eq!(g.h[0], 0.125);
        assert_relative_eq!(g.h[1], 0.125);
        assert_relative_eq!(g.h[2], 0.25);
        let c = g.center(0, 0, 0);
        assert_relative_eq!(c[0], 0.0625);
        assert_relative_eq!(c[1], -0.9375);
        let f = g.face_center(1, 0, 2, 3);
        assert_relative_eq!(f[1], -1.0);
        assert!(Grid3::new([4, 8, 8], [0.0; 3], [1.0; 3], [GridBoundary::Periodic; 3]).is_err());
    }

    #[test]
    fn density_normalization_and_mass() {
        let d = DensityField::from_fn(grid(), |x| 1.0 + 0.5 * (x[0] * 6.28).sin()).unwrap();
        assert_relative_eq!(d.mass(), 1.0, epsilon = 1e-13);
        let u = DensityField::uniform(grid());
        assert_relative_eq!(u.mass(), 1.0, epsilon = 1e-13);
        assert_relative_eq!(u.linf_relative_error(|_| 7.0), 0.0, epsilon = 1e-12);
        let marg = u.marginal(1);
        assert_eq!(marg.len(), 16);
        assert_relative_eq!(marg.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(marg[3], 1.0 / 16.0, epsilon = 1e-13);
    }

    #[test]
    fn negative_density_rejected() {
        assert!(matches!(
            DensityField::from_fn(grid(), |x| x[0] - 0.5),
            Err(Error::NegativeDensity { .. })
        ));
    }

    #[test]
    fn locate_cells() {
        let g = grid();
        assert_eq!(g.locate(&[0.01, -0.99, 0.01]), Some([0, 0, 0]));
        assert_eq!(g.locate(&[0.99, 0.99, 1.99]), Some([7, 15, 7]));
        assert_eq!(g.locate(&[1.5, 0.0, 0.0]), None);
    }

    #[test]
    fn compensated_sum_is_accurate() {
        let vals: Vec<f64> = (0..100_000).map(|i| 1e-9 * (i % 7) as f64 + 1.0).collect();
        let exact: f64 = vals.iter().map(|v| *v as f64).sum::<f64>();
        let cs = compensated_sum(vals.iter().copied());
        assert_relative_eq!(cs, exact, max_relative = 1e-12);
    }
}
