//! Periodic lattices, lattice fields and the finite-difference calculus on them.
//!
//! Sites are ordered row-major (last axis fastest) and every index operation
//! wraps modulo `n`. Field values are stored site-major: the components of one
//! site are contiguous.

mod field;
pub mod io;
pub mod ops;
pub mod spectral;

pub use field::DiscreteField;
pub use ops::{
    apply_centered_divergence, apply_centered_gradient, apply_divergence, apply_gradient,
    apply_laplacian, Neighbors,
};
pub use spectral::{solve_shifted_poisson, Boundary, SpectralSolver};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The torus `[0, L)^d` sampled with `n` points per side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    dim: usize,
    n: usize,
    length: f64,
}

impl PeriodicGrid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per side must be a power of two >= 4, got {n}"
            )));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::InvalidGrid(format!("period must be positive, got {length}")));
        }
        Ok(Self { dim, n, length })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    /// `h^d`, the quadrature weight of one site.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn num_sites(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    pub fn coords(&self, site: usize) -> [usize; 3] {
        let mut c = [0usize; 3];
        let mut s = site;
        for axis in (0..self.dim).rev() {
            c[axis] = s % self.n;
            s /= self.n;
        }
        c
    }

    /// Site index of (possibly out-of-range) integer coordinates, wrapped.
    pub fn site(&self, coords: &[isize]) -> usize {
        let n = self.n as isize;
        coords
            .iter()
            .take(self.dim)
            .fold(0usize, |acc, &c| acc * self.n + c.rem_euclid(n) as usize)
    }

    pub fn position(&self, site: usize) -> [f64; 3] {
        let c = self.coords(site);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = c[axis] as f64 * h;
        }
        x
    }

    /// The point `(L/2, ..., L/2)`.
    pub fn center(&self) -> [f64; 3] {
        let mut x = [0.0; 3];
        for v in x.iter_mut().take(self.dim) {
            *v = 0.5 * self.length;
        }
        x
    }

    /// Site closest to the torus center.
    pub fn center_site(&self) -> usize {
        let half = (self.n / 2) as isize;
        self.site(&[half, half, half])
    }

    /// Periodic (minimum image) distance between a site and a point.
    pub fn wrap_distance(&self, site: usize, point: &[f64; 3]) -> f64 {
        let x = self.position(site);
        let l = self.length;
        let mut r2 = 0.0;
        for axis in 0..self.dim {
            let mut dx = (x[axis] - point[axis]).rem_euclid(l);
            if dx > 0.5 * l {
                dx -= l;
            }
            r2 += dx * dx;
        }
        r2.sqrt()
    }

    /// Same lattice refined or coarsened to `n` points per side.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(self.dim, n, self.length)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_grid_examples() {
        let g = PeriodicGrid::new(1, 8, 1.0).unwrap();
        assert_eq!(g.spacing(), 0.125);
        let g = PeriodicGrid::new(2, 4, 2.0).unwrap();
        assert_eq!(g.num_sites(), 16);
        assert_eq!(g.spacing(), 0.5);
        assert!(PeriodicGrid::new(3, 3, 1.0).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(PeriodicGrid::new(4, 8, 1.0).is_err());
        assert!(PeriodicGrid::new(1, 2, 1.0).is_err());
        assert!(PeriodicGrid::new(1, 8, 0.0).is_err());
        assert!(PeriodicGrid::new(1, 8, -1.0).is_err());
    }

    #[test]
    fn coordinates_round_trip_and_wrap() {
        let g = PeriodicGrid::new(3, 4, 1.0).unwrap();
        for s in 0..g.num_sites() {
            let c = g.coords(s);
            let ci = [c[0] as isize, c[1] as isize, c[2] as isize];
            assert_eq!(g.site(&ci), s);
            let shifted = [ci[0] + 4, ci[1] - 8, ci[2] + 12];
            assert_eq!(g.site(&shifted), s);
        }
    }

    #[test]
    fn wrap_distance_uses_minimum_image() {
        let g = PeriodicGrid::new(1, 8, 1.0).unwrap();
        let d = g.wrap_distance(7, &[0.0; 3]);
        assert!((d - 0.125).abs() < 1e-15);
    }
}
