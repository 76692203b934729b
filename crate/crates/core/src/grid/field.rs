use serde::{Deserialize, Serialize};

use super::PeriodicGrid;
use crate::error::{Error, Result};

/// Lattice samples of a tensor-valued field.
///
/// `shape` is the per-site tensor shape (`[m]` for a scalar system, `[m, d]`
/// for gradients and fluxes, `[m, d, d]` for flux correctors).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteField {
    grid: PeriodicGrid,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl DiscreteField {
    pub fn zeros(grid: PeriodicGrid, shape: &[usize]) -> Self {
        let ncomp = shape.iter().product::<usize>();
        Self {
            grid,
            shape: shape.to_vec(),
            values: vec![0.0; grid.num_sites() * ncomp],
        }
    }

    pub fn from_values(grid: PeriodicGrid, shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let ncomp = shape.iter().product::<usize>();
        if ncomp == 0 {
            return Err(Error::shape("non-empty component shape", format!("{shape:?}")));
        }
        if values.len() != grid.num_sites() * ncomp {
            return Err(Error::shape(
                format!("{} values", grid.num_sites() * ncomp),
                format!("{}", values.len()),
            ));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at index {bad}")));
        }
        Ok(Self {
            grid,
            shape: shape.to_vec(),
            values,
        })
    }

    /// Samples `f(x)` at every site, `f` writing the per-site components.
    pub fn from_fn(grid: PeriodicGrid, shape: &[usize], mut f: impl FnMut(&[f64; 3], &mut [f64])) -> Self {
        let mut field = Self::zeros(grid, shape);
        let nc = field.ncomp();
        for s in 0..grid.num_sites() {
            let x = grid.position(s);
            f(&x, &mut field.values[s * nc..(s + 1) * nc]);
        }
        field
    }

    /// Constant field equal to `value` (length = number of components).
    pub fn constant(grid: PeriodicGrid, shape: &[usize], value: &[f64]) -> Self {
        let mut field = Self::zeros(grid, shape);
        let nc = field.ncomp();
        assert_eq!(value.len(), nc, "constant value must match the component count");
        for chunk in field.values.chunks_mut(nc) {
            chunk.copy_from_slice(value);
        }
        field
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ncomp(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, site: usize) -> &[f64] {
        let nc = self.ncomp();
        &self.values[site * nc..(site + 1) * nc]
    }

    /// Per-component site mean.
    pub fn mean(&self) -> Vec<f64> {
        let nc = self.ncomp();
        let mut m = vec![0.0; nc];
        for chunk in self.values.chunks(nc) {
            for (a, v) in m.iter_mut().zip(chunk) {
                *a += v;
            }
        }
        let ns = self.grid.num_sites() as f64;
        m.iter_mut().for_each(|a| *a /= ns);
        m
    }

    /// Euclidean norm of the raw value vector (no quadrature weight).
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Unweighted inner product of raw values.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_same(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    /// Shifts the field by whole lattice sites: `out(x) = self(x - offset h)`.
    pub fn translate(&self, offset: &[isize]) -> Self {
        let nc = self.ncomp();
        let mut out = Self::zeros(self.grid, &self.shape);
        for s in 0..self.grid.num_sites() {
            let c = self.grid.coords(s);
            let mut t = [0isize; 3];
            for a in 0..self.grid.dim() {
                t[a] = c[a] as isize + offset.get(a).copied().unwrap_or(0);
            }
            let dst = self.grid.site(&t);
            out.values[dst * nc..(dst + 1) * nc].copy_from_slice(&self.values[s * nc..(s + 1) * nc]);
        }
        out
    }

    /// Subtracts the per-component mean.
    pub fn centered(&self) -> Self {
        let mean = self.mean();
        let nc = self.ncomp();
        let mut out = self.clone();
        for chunk in out.values.chunks_mut(nc) {
            for (v, m) in chunk.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let mut out = self.clone();
        out.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a -= b);
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.shape != other.shape {
            return Err(Error::shape(
                format!("{:?} on n={}", self.shape, self.grid.n()),
                format!("{:?} on n={}", other.shape, other.grid.n()),
            ));
        }
        Ok(())
    }

    /// Keeps every `factor`-th site along each axis.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.grid.n() % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "subsampling factor {factor} does not divide n = {}",
                self.grid.n()
            )));
        }
        let coarse = self.grid.with_n(self.grid.n() / factor)?;
        let nc = self.ncomp();
        let mut out = Self::zeros(coarse, &self.shape);
        for s in 0..coarse.num_sites() {
            let c = coarse.coords(s);
            let fine = [
                (c[0] * factor) as isize,
                (c[1] * factor) as isize,
                (c[2] * factor) as isize,
            ];
            let fs = self.grid.site(&fine);
            out.values[s * nc..(s + 1) * nc].copy_from_slice(&self.values[fs * nc..(fs + 1) * nc]);
        }
        Ok(out)
    }
}
