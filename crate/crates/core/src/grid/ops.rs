//! Finite-difference operators.
//!
//! `D+` (forward gradient) and `D-.` (backward divergence) are exact negative
//! adjoints of each other; their composition is the standard `2d+1`-point
//! Laplacian. Centered differences are used only for curl-type right-hand
//! sides of the gauge equations.

use super::{DiscreteField, PeriodicGrid};
use crate::error::{Error, Result};

/// Precomputed periodic neighbor tables of a grid.
#[derive(Clone, Debug)]
pub struct Neighbors {
    grid: PeriodicGrid,
    inv_h: f64,
    fwd: Vec<Vec<u32>>,
    bwd: Vec<Vec<u32>>,
}

impl Neighbors {
    pub fn new(grid: &PeriodicGrid) -> Self {
        let ns = grid.num_sites();
        let n = grid.n();
        let mut fwd = Vec::with_capacity(grid.dim());
        let mut bwd = Vec::with_capacity(grid.dim());
        for axis in 0..grid.dim() {
            let st = grid.stride(axis);
            let mut f = Vec::with_capacity(ns);
            let mut b = Vec::with_capacity(ns);
            for s in 0..ns {
                let c = (s / st) % n;
                f.push(if c == n - 1 { s - (n - 1) * st } else { s + st } as u32);
                b.push(if c == 0 { s + (n - 1) * st } else { s - st } as u32);
            }
            fwd.push(f);
            bwd.push(b);
        }
        Self {
            grid: *grid,
            inv_h: 1.0 / grid.spacing(),
            fwd,
            bwd,
        }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    #[inline]
    pub fn forward(&self, axis: usize, site: usize) -> usize {
        self.fwd[axis][site] as usize
    }

    #[inline]
    pub fn backward(&self, axis: usize, site: usize) -> usize {
        self.bwd[axis][site] as usize
    }

    /// `out[s, l, j] = (u[s + e_j, l] - u[s, l]) / h`.
    pub fn gradient(&self, u: &[f64], m: usize, out: &mut [f64]) {
        let d = self.grid.dim();
        let ns = self.grid.num_sites();
        debug_assert_eq!(u.len(), ns * m);
        debug_assert_eq!(out.len(), ns * m * d);
        for s in 0..ns {
            for j in 0..d {
                let t = self.fwd[j][s] as usize;
                for l in 0..m {
                    out[(s * m + l) * d + j] = (u[t * m + l] - u[s * m + l]) * self.inv_h;
                }
            }
        }
    }

    /// `out[s, l] = sum_j (f[s, l, j] - f[s - e_j, l, j]) / h`.
    pub fn divergence(&self, f: &[f64], m: usize, out: &mut [f64]) {
        let d = self.grid.dim();
        let ns = self.grid.num_sites();
        debug_assert_eq!(f.len(), ns * m * d);
        debug_assert_eq!(out.len(), ns * m);
        for s in 0..ns {
            for l in 0..m {
                let mut acc = 0.0;
                for j in 0..d {
                    let b = self.bwd[j][s] as usize;
                    acc += f[(s * m + l) * d + j] - f[(b * m + l) * d + j];
                }
                out[s * m + l] = acc * self.inv_h;
            }
        }
    }

    /// Direct `2d+1`-point stencil, `out = D-.D+ u`.
    pub fn laplacian(&self, u: &[f64], nc: usize, out: &mut [f64]) {
        let d = self.grid.dim();
        let ns = self.grid.num_sites();
        let w = self.inv_h * self.inv_h;
        for s in 0..ns {
            for c in 0..nc {
                let mut acc = -2.0 * d as f64 * u[s * nc + c];
                for j in 0..d {
                    acc += u[self.fwd[j][s] as usize * nc + c] + u[self.bwd[j][s] as usize * nc + c];
                }
                out[s * nc + c] = acc * w;
            }
        }
    }

    /// `out[s, c, j] = (u[s + e_j, c] - u[s - e_j, c]) / 2h`.
    pub fn centered_gradient(&self, u: &[f64], nc: usize, out: &mut [f64]) {
        let d = self.grid.dim();
        let ns = self.grid.num_sites();
        let w = 0.5 * self.inv_h;
        for s in 0..ns {
            for j in 0..d {
                let f = self.fwd[j][s] as usize;
                let b = self.bwd[j][s] as usize;
                for c in 0..nc {
                    out[(s * nc + c) * d + j] = (u[f * nc + c] - u[b * nc + c]) * w;
                }
            }
        }
    }

    /// Centered divergence contracting the last tensor axis (of length d):
    /// `out[s, c] = sum_j (f[s + e_j, c, j] - f[s - e_j, c, j]) / 2h`.
    pub fn centered_divergence(&self, f: &[f64], nc: usize, out: &mut [f64]) {
        let d = self.grid.dim();
        let ns = self.grid.num_sites();
        let w = 0.5 * self.inv_h;
        for s in 0..ns {
            for c in 0..nc {
                let mut acc = 0.0;
                for j in 0..d {
                    let fw = self.fwd[j][s] as usize;
                    let bw = self.bwd[j][s] as usize;
                    acc += f[(fw * nc + c) * d + j] - f[(bw * nc + c) * d + j];
                }
                out[s * nc + c] = acc * w;
            }
        }
    }

    /// `sum_s sum_j (u(s+e_j) - u(s)) (v(s+e_j) - v(s)) / h^2`, i.e. `<D+u, D+v>`.
    pub fn gradient_dot(&self, u: &[f64], v: &[f64], nc: usize) -> f64 {
        let d = self.grid.dim();
        let ns = self.grid.num_sites();
        let mut acc = 0.0;
        for j in 0..d {
            let fw = &self.fwd[j];
            for s in 0..ns {
                let t = fw[s] as usize;
                for c in 0..nc {
                    acc += (u[t * nc + c] - u[s * nc + c]) * (v[t * nc + c] - v[s * nc + c]);
                }
            }
        }
        acc * self.inv_h * self.inv_h
    }
}

fn leading_components(u: &DiscreteField, what: &str) -> Result<usize> {
    let shape = u.shape();
    let d = u.grid().dim();
    if shape.len() < 2 || shape[shape.len() - 1] != d {
        return Err(Error::shape(format!("{what} with trailing axis of length {d}"), format!("{shape:?}")));
    }
    Ok(shape[..shape.len() - 1].iter().product())
}

/// Forward-difference gradient; shape `S` becomes `S x d`.
pub fn apply_gradient(u: &DiscreteField) -> DiscreteField {
    let nb = Neighbors::new(u.grid());
    let mut shape = u.shape().to_vec();
    shape.push(u.grid().dim());
    let mut out = DiscreteField::zeros(*u.grid(), &shape);
    nb.gradient(u.values(), u.ncomp(), out.values_mut());
    out
}

/// Backward-difference divergence contracting the trailing axis.
pub fn apply_divergence(f: &DiscreteField) -> Result<DiscreteField> {
    let m = leading_components(f, "matrix field")?;
    let nb = Neighbors::new(f.grid());
    let shape = &f.shape()[..f.shape().len() - 1];
    let mut out = DiscreteField::zeros(*f.grid(), shape);
    nb.divergence(f.values(), m, out.values_mut());
    Ok(out)
}

/// `2d+1`-point Laplacian, equal to `D-.D+`.
pub fn apply_laplacian(u: &DiscreteField) -> DiscreteField {
    let nb = Neighbors::new(u.grid());
    let mut out = DiscreteField::zeros(*u.grid(), u.shape());
    nb.laplacian(u.values(), u.ncomp(), out.values_mut());
    out
}

/// Centered-difference gradient; shape `S` becomes `S x d`.
pub fn apply_centered_gradient(u: &DiscreteField) -> DiscreteField {
    let nb = Neighbors::new(u.grid());
    let mut shape = u.shape().to_vec();
    shape.push(u.grid().dim());
    let mut out = DiscreteField::zeros(*u.grid(), &shape);
    nb.centered_gradient(u.values(), u.ncomp(), out.values_mut());
    out
}

/// Centered divergence contracting the trailing axis.
pub fn apply_centered_divergence(f: &DiscreteField) -> Result<DiscreteField> {
    let m = leading_components(f, "tensor field")?;
    let nb = Neighbors::new(f.grid());
    let shape = &f.shape()[..f.shape().len() - 1];
    let mut out = DiscreteField::zeros(*f.grid(), shape);
    nb.centered_divergence(f.values(), m, out.values_mut());
    Ok(out)
}
