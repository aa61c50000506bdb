//! Cell-centred grids and the density fields that live on them.

use crate::error::{AbfError, Result};
use crate::fields::{ModelProblem, XDomain};

/// Uniform partition of `[lo, hi]` into `n` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub periodic: bool,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize, periodic: bool) -> Self {
        assert!(n > 0 && hi > lo, "axis needs n > 0 and hi > lo");
        Self { lo, hi, n, periodic }
    }

    #[inline]
    pub fn h(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.h()
    }

    /// Position of face `i` (between cells `i - 1` and `i`).
    #[inline]
    pub fn face(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.h()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.center(i)).collect()
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    /// Cell containing `z`, if any. The right end of a closed axis belongs to
    /// the last cell.
    pub fn cell_of(&self, z: f64) -> Option<usize> {
        if !z.is_finite() {
            return None;
        }
        let u = if self.periodic { (z - self.lo).rem_euclid(self.length()) } else { z - self.lo };
        if u < 0.0 || u > self.length() {
            return None;
        }
        Some(((u / self.h()) as usize).min(self.n - 1))
    }
}

/// Tensor grid: `x` axis (reaction coordinate) times `y` axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2d {
    pub x: Axis,
    pub y: Axis,
}

impl Grid2d {
    pub fn new(x: Axis, y: Axis) -> Self {
        Self { x, y }
    }

    /// `n_x` by `n_y` cells covering the model's domain.
    pub fn for_model(model: &ModelProblem, n_x: usize, n_y: usize) -> Self {
        let (lo, hi) = model.x_domain.bounds();
        let periodic = matches!(model.x_domain, XDomain::Torus);
        Self {
            x: Axis::new(lo, hi, n_x, periodic),
            y: Axis::new(model.y_domain.lo, model.y_domain.hi, n_y, false),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.x.n * self.y.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Storage index; cells sharing an `x` column are contiguous.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.y.n + j
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.x.h() * self.y.h()
    }
}

/// Cell-averaged density on a 2D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: Grid2d,
    pub values: Vec<f64>,
    pub time: f64,
}

impl DensityField {
    pub fn zeros(grid: Grid2d) -> Self {
        Self { grid, values: vec![0.0; grid.len()], time: 0.0 }
    }

    /// Tabulate `f` at cell centres and normalize to unit mass.
    pub fn from_fn(grid: Grid2d, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.x.n {
            let x = grid.x.center(i);
            for j in 0..grid.y.n {
                values.push(f(x, grid.y.center(j)));
            }
        }
        let mut field = Self { grid, values, time: 0.0 };
        field.normalize()?;
        Ok(field)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    /// Values of column `i` (fixed `x`).
    #[inline]
    pub fn column(&self, i: usize) -> &[f64] {
        let ny = self.grid.y.n;
        &self.values[i * ny..(i + 1) * ny]
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let mass = self.mass();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(AbfError::NormalizerUnderflow(format!("field mass {mass:e}")));
        }
        let inv = 1.0 / mass;
        self.values.iter_mut().for_each(|v| *v *= inv);
        Ok(())
    }

    /// Integrate out `y`: the density of the reaction coordinate for `xi = x`.
    pub fn marginal(&self) -> Density1d {
        let hy = self.grid.y.h();
        let values = (0..self.grid.x.n).map(|i| self.column(i).iter().sum::<f64>() * hy).collect();
        Density1d { axis: self.grid.x, values, time: self.time }
    }
}

/// Cell-averaged density on a 1D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Density1d {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub time: f64,
}

impl Density1d {
    pub fn from_fn(axis: Axis, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = axis.centers().into_iter().map(f).collect();
        let mut d = Self { axis, values, time: 0.0 };
        d.normalize()?;
        Ok(d)
    }

    pub fn uniform(axis: Axis) -> Self {
        Self { axis, values: vec![1.0 / axis.length(); axis.n], time: 0.0 }
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.axis.h()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let mass = self.mass();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(AbfError::NormalizerUnderflow(format!("density mass {mass:e}")));
        }
        let inv = 1.0 / mass;
        self.values.iter_mut().for_each(|v| *v *= inv);
        Ok(())
    }

    /// `sum |p - q| h`, the total-variation norm of the difference.
    pub fn l1_distance(&self, other: &Density1d) -> f64 {
        debug_assert_eq!(self.axis.n, other.axis.n);
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.axis.h()
    }

    /// Mean of the cell centres under this density.
    pub fn mean(&self) -> f64 {
        let h = self.axis.h();
        self.values.iter().enumerate().map(|(i, v)| v * self.axis.center(i)).sum::<f64>() * h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_geometry() {
        let a = Axis::new(0.0, 1.0, 4, true);
        assert_eq!(a.h(), 0.25);
        assert_eq!(a.center(0), 0.125);
        assert_eq!(a.cell_of(0.99), Some(3));
        assert_eq!(a.cell_of(1.01), Some(0));
        assert_eq!(a.cell_of(-0.01), Some(3));
        let b = Axis::new(-1.0, 1.0, 4, false);
        assert_eq!(b.cell_of(1.0), Some(3));
        assert_eq!(b.cell_of(1.5), None);
    }

    #[test]
    fn separable_field_marginal_is_the_x_factor() {
        let grid = Grid2d::new(Axis::new(0.0, 1.0, 16, true), Axis::new(-3.0, 3.0, 32, false));
        let f = |x: f64| 1.0 + 0.3 * (2.0 * std::f64::consts::PI * x).cos();
        let g = |y: f64| (-y * y).exp();
        let field = DensityField::from_fn(grid, |x, y| f(x) * g(y)).unwrap();
        let marg = field.marginal();
        let expected = Density1d::from_fn(grid.x, f).unwrap();
        for (a, b) in marg.values.iter().zip(&expected.values) {
            assert!((a - b).abs() < 1e-13);
        }
        assert!((marg.mass() - field.mass()).abs() < 1e-14);
    }
}
