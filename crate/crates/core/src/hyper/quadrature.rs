//! Normalized posterior density along one hyperparameter, by trapezoidal
//! quadrature. Used to validate the sampler and the bounding-box search.

use serde::{Deserialize, Serialize};

use super::prior::{log_unnormalized_posterior, HyperPrior};
use crate::error::{Error, Result};
use crate::gp::Dataset;
use crate::kernels::{HyperVector, KernelFamily};

/// Piecewise-linear density on a sorted grid, integrating to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl GridDensity {
    /// Normalizes `values` (unnormalized density) by the trapezoid rule.
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(Error::Input("grid needs at least two points and one value per point".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("grid must be strictly increasing".into()));
        }
        let total: f64 = grid.windows(2).zip(values.windows(2)).map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1])).sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Input("density has no mass on the grid".into()));
        }
        let density = values.into_iter().map(|v| v / total).collect();
        Ok(GridDensity { grid, density })
    }

    /// From log values, shifted by their maximum first.
    pub fn from_log(grid: Vec<f64>, log_values: &[f64]) -> Result<Self> {
        let m = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::Input("log density is -inf everywhere on the grid".into()));
        }
        Self::new(grid, log_values.iter().map(|v| (v - m).exp()).collect())
    }

    pub fn total_mass(&self) -> f64 {
        self.mass(self.grid[0], *self.grid.last().unwrap())
    }

    fn value_at(&self, x: f64) -> f64 {
        let g = &self.grid;
        if x <= g[0] || x >= *g.last().unwrap() {
            return if x == g[0] { self.density[0] } else if x == *g.last().unwrap() { *self.density.last().unwrap() } else { 0.0 };
        }
        let k = g.partition_point(|v| *v <= x) - 1;
        let t = (x - g[k]) / (g[k + 1] - g[k]);
        self.density[k] * (1.0 - t) + self.density[k + 1] * t
    }

    /// Exact integral of the piecewise-linear density over `[a, b]`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let g = &self.grid;
        let a = a.max(g[0]);
        let b = b.min(*g.last().unwrap());
        if b <= a {
            return 0.0;
        }
        let mut pts = vec![a];
        pts.extend(g.iter().copied().filter(|v| *v > a && *v < b));
        pts.push(b);
        pts.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (self.value_at(w[0]) + self.value_at(w[1]))).sum()
    }

    /// CDF at each grid node.
    pub fn cdf_nodes(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = vec![0.0];
        for (g, v) in self.grid.windows(2).zip(self.density.windows(2)) {
            acc += 0.5 * (g[1] - g[0]) * (v[0] + v[1]);
            out.push(acc);
        }
        out
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.mass(self.grid[0], x)
    }

    /// Smallest grid node at which the CDF reaches `q`, linearly interpolated.
    pub fn quantile(&self, q: f64) -> f64 {
        let c = self.cdf_nodes();
        let k = c.partition_point(|v| *v < q);
        if k == 0 {
            return self.grid[0];
        }
        if k >= c.len() {
            return *self.grid.last().unwrap();
        }
        let t = (q - c[k - 1]) / (c[k] - c[k - 1]);
        self.grid[k - 1] + t * (self.grid[k] - self.grid[k - 1])
    }

    pub fn mode(&self) -> f64 {
        let k = (0..self.density.len()).max_by(|&a, &b| self.density[a].total_cmp(&self.density[b])).unwrap();
        self.grid[k]
    }
}

/// Posterior density of hyperparameter `coord` (index into
/// `[ℓ…, σ_f², σ_n²]`) in raw space, with every other coordinate held at its
/// value in `nuisance`.
pub fn quadrature_posterior_1d(
    data: &Dataset,
    family: KernelFamily,
    prior: &HyperPrior,
    nuisance: &HyperVector,
    coord: usize,
    grid: &[f64],
) -> Result<GridDensity> {
    if grid.len() < 2 {
        return Err(Error::Input("quadrature grid needs at least two points".into()));
    }
    if coord >= nuisance.len() {
        return Err(Error::Input(format!("coordinate {coord} out of range")));
    }
    let base = nuisance.as_vec();
    let logs: Vec<f64> = grid
        .iter()
        .map(|&g| {
            let mut v = base.clone();
            v[coord] = g;
            let theta = HyperVector::from_slice(&v);
            let lp = log_unnormalized_posterior(data, family, prior, &theta);
            if lp == f64::NEG_INFINITY {
                lp
            } else {
                lp + prior.raw_space_correction(&theta)
            }
        })
        .collect();
    GridDensity::from_log(grid.to_vec(), &logs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_density_integrates_to_one() {
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let d = GridDensity::new(grid, vec![3.0; 11]).unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
        assert!(d.density.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!((d.mass(0.25, 0.75) - 0.5).abs() < 1e-12);
        assert!((d.quantile(0.3) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn short_or_unsorted_grid_rejected() {
        assert!(GridDensity::new(vec![0.0], vec![1.0]).is_err());
        assert!(GridDensity::new(vec![0.0, 0.0, 1.0], vec![1.0; 3]).is_err());
    }

    #[test]
    fn refinement_changes_interval_mass_little() {
        let f = |x: f64| (-(x - 1.0).powi(2) / 0.1).exp() * x;
        let coarse: Vec<f64> = (0..=400).map(|i| i as f64 * 3.0 / 400.0).collect();
        let fine: Vec<f64> = (0..=800).map(|i| i as f64 * 3.0 / 800.0).collect();
        let a = GridDensity::new(coarse.clone(), coarse.iter().map(|&x| f(x)).collect()).unwrap();
        let b = GridDensity::new(fine.clone(), fine.iter().map(|&x| f(x)).collect()).unwrap();
        for (lo, hi) in [(0.5, 1.0), (0.9, 1.7), (0.0, 0.8)] {
            assert!((a.mass(lo, hi) - b.mass(lo, hi)).abs() < 1e-3);
        }
    }
}
