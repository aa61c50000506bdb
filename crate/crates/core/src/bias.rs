//! Piecewise representation of the biasing force on a 1D bin grid.

use crate::error::{AbfError, Result};
use crate::fields::{ModelProblem, XDomain};

/// How the biasing force is read between bin centres.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BiasLookup {
    #[default]
    PiecewiseConstant,
    /// Linear between bin centres (periodic on the torus, flat past the end
    /// centres on an interval).
    Linear,
}

/// Running estimate of the mean force, one value per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasProfile {
    pub bin_edges: Vec<f64>,
    pub force_values: Vec<f64>,
    /// Particles (or slices) that contributed at the last update.
    pub occupancy: Vec<u64>,
    /// Relaxation time of the update; zero replaces values outright.
    pub tau: f64,
    pub periodic: bool,
}

impl BiasProfile {
    /// `n_bins` equal bins over `[lo, hi]`, all forces zero.
    pub fn uniform(lo: f64, hi: f64, n_bins: usize, periodic: bool, tau: f64) -> Self {
        assert!(n_bins > 0 && hi > lo);
        let h = (hi - lo) / n_bins as f64;
        let mut bin_edges: Vec<f64> = (0..=n_bins).map(|i| lo + i as f64 * h).collect();
        bin_edges[n_bins] = hi;
        Self {
            bin_edges,
            force_values: vec![0.0; n_bins],
            occupancy: vec![0; n_bins],
            tau,
            periodic,
        }
    }

    /// Bins spanning the model's reaction-coordinate range.
    pub fn for_model(model: &ModelProblem, n_bins: usize, tau: f64) -> Self {
        let (lo, hi) = model.x_domain.bounds();
        Self::uniform(lo, hi, n_bins, matches!(model.x_domain, XDomain::Torus), tau)
    }

    pub fn n_bins(&self) -> usize {
        self.force_values.len()
    }

    pub fn lo(&self) -> f64 {
        self.bin_edges[0]
    }

    pub fn hi(&self) -> f64 {
        self.bin_edges[self.n_bins()]
    }

    #[inline]
    pub fn width(&self) -> f64 {
        (self.hi() - self.lo()) / self.n_bins() as f64
    }

    pub fn center(&self, b: usize) -> f64 {
        0.5 * (self.bin_edges[b] + self.bin_edges[b + 1])
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins()).map(|b| self.center(b)).collect()
    }

    /// Bin holding `z`. Out-of-range values wrap on the torus and are
    /// rejected otherwise; the right edge belongs to the last bin.
    #[inline]
    pub fn bin_of(&self, z: f64) -> Option<usize> {
        let (lo, hi) = (self.lo(), self.hi());
        let u = if self.periodic { (z - lo).rem_euclid(hi - lo) } else { z - lo };
        if !(u >= 0.0 && u <= hi - lo) {
            return None;
        }
        Some(((u / self.width()) as usize).min(self.n_bins() - 1))
    }

    /// Biasing force at `z`.
    #[inline]
    pub fn force_at(&self, z: f64, lookup: BiasLookup) -> f64 {
        match lookup {
            BiasLookup::PiecewiseConstant => {
                let b = match self.bin_of(z) {
                    Some(b) => b,
                    None if z < self.lo() => 0,
                    None => self.n_bins() - 1,
                };
                self.force_values[b]
            }
            BiasLookup::Linear => self.interpolate(z),
        }
    }

    /// Linear interpolation between bin centres.
    pub fn interpolate(&self, z: f64) -> f64 {
        let n = self.n_bins();
        if n == 1 {
            return self.force_values[0];
        }
        let w = self.width();
        let (lo, hi) = (self.lo(), self.hi());
        let mut u = (z - lo) / w - 0.5;
        if self.periodic {
            u = u.rem_euclid(n as f64);
            let k = (u.floor() as usize).min(n - 1);
            let t = u - k as f64;
            let next = (k + 1) % n;
            return (1.0 - t) * self.force_values[k] + t * self.force_values[next];
        }
        if z <= lo + 0.5 * w {
            return self.force_values[0];
        }
        if z >= hi - 0.5 * w {
            return self.force_values[n - 1];
        }
        u = u.max(0.0);
        let k = (u.floor() as usize).min(n - 2);
        let t = u - k as f64;
        (1.0 - t) * self.force_values[k] + t * self.force_values[k + 1]
    }

    /// Biasing potential `A_t(z) = int_lo^z A'_t` of the piecewise-constant
    /// profile. On the torus `z` is measured along the unwrapped line.
    pub fn potential_at(&self, z: f64) -> f64 {
        let w = self.width();
        let n = self.n_bins();
        let total: f64 = self.force_values.iter().sum::<f64>() * w;
        let mut acc = 0.0;
        let mut u = z - self.lo();
        if self.periodic {
            let turns = u.div_euclid(self.hi() - self.lo());
            acc += turns * total;
            u -= turns * (self.hi() - self.lo());
        }
        let full = ((u / w).floor().max(0.0) as usize).min(n);
        acc += self.force_values[..full].iter().sum::<f64>() * w;
        if full < n {
            acc += self.force_values[full] * (u - full as f64 * w);
        } else {
            acc += self.force_values[n - 1] * (u - n as f64 * w);
        }
        acc
    }

    /// Apply one update from per-bin conditional means. `None` keeps the
    /// previous value (empty bin). Returns the number of empty bins.
    pub fn relax_towards(&mut self, means: &[Option<f64>], counts: &[u64], dt: f64) -> Result<usize> {
        if means.len() != self.n_bins() || counts.len() != self.n_bins() {
            return Err(AbfError::InvalidArgument("bin count mismatch".into()));
        }
        let mut empty = 0;
        for b in 0..self.n_bins() {
            self.occupancy[b] = counts[b];
            match means[b] {
                Some(m) => {
                    if self.tau > 0.0 {
                        let rate = (dt / self.tau).min(1.0);
                        self.force_values[b] += rate * (m - self.force_values[b]);
                    } else {
                        self.force_values[b] = m;
                    }
                }
                None => empty += 1,
            }
        }
        Ok(empty)
    }

    /// Copy the force values out of another profile with identical bins.
    pub fn set_forces(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_bins() {
            return Err(AbfError::InvalidArgument("bin count mismatch".into()));
        }
        self.force_values.copy_from_slice(values);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_wrap() {
        let mut p = BiasProfile::uniform(0.0, 1.0, 4, true, 0.0);
        p.set_forces(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(p.force_at(0.3, BiasLookup::PiecewiseConstant), 2.0);
        assert_eq!(p.force_at(1.3, BiasLookup::PiecewiseConstant), 2.0);
        assert_eq!(p.force_at(-0.1, BiasLookup::PiecewiseConstant), 4.0);
        // halfway between the last and first centres
        assert!((p.interpolate(0.0) - 2.5).abs() < 1e-15);
        assert!((p.interpolate(0.25) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn potential_integrates_piecewise_constant_force() {
        let mut p = BiasProfile::uniform(0.0, 1.0, 4, true, 0.0);
        p.set_forces(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((p.potential_at(0.5) - 0.75).abs() < 1e-15);
        assert!((p.potential_at(0.6) - (0.75 + 0.3)).abs() < 1e-14);
        assert!((p.potential_at(1.1) - (2.5 + 0.1)).abs() < 1e-14);
    }

    #[test]
    fn relaxation_step_is_bounded() {
        let mut p = BiasProfile::uniform(0.0, 1.0, 2, false, 100.0);
        p.set_forces(&[1.0, -1.0]).unwrap();
        let dt = 0.01;
        p.relax_towards(&[Some(5.0), None], &[3, 0], dt).unwrap();
        assert!((p.force_values[0] - (1.0 + dt / 100.0 * 4.0)).abs() < 1e-15);
        assert_eq!(p.force_values[1], -1.0);
        assert_eq!(p.occupancy, vec![3, 0]);
    }
}
