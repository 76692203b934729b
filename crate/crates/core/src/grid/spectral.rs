//! Direct spectral solves of `(c (-D-.D+) + mu) u = f`.
//!
//! On the torus the operator is diagonal in the discrete Fourier basis; on a
//! Dirichlet box (sites with any coordinate equal to zero pinned to zero) it is
//! diagonal in the discrete sine basis, realized through odd extension.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{DiscreteField, PeriodicGrid};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Periodic,
    /// Homogeneous Dirichlet data on the hyperplanes `x_a = 0` of the torus,
    /// i.e. the box `(0, L)^d` with `n - 1` interior points per side.
    Dirichlet,
}

impl Boundary {
    /// Whether `site` carries an unknown.
    #[inline]
    pub fn is_interior(&self, grid: &PeriodicGrid, site: usize) -> bool {
        match self {
            Boundary::Periodic => true,
            Boundary::Dirichlet => {
                let c = grid.coords(site);
                (0..grid.dim()).all(|a| c[a] != 0)
            }
        }
    }

    /// Zeroes all boundary values of a site-major array with `nc` components.
    pub fn mask(&self, grid: &PeriodicGrid, values: &mut [f64], nc: usize) {
        if *self == Boundary::Periodic {
            return;
        }
        for s in 0..grid.num_sites() {
            if !self.is_interior(grid, s) {
                values[s * nc..(s + 1) * nc].iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

/// Cached FFT plans for one grid and boundary type.
#[derive(Clone)]
pub struct SpectralSolver {
    grid: PeriodicGrid,
    boundary: Boundary,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    eig1d: Vec<f64>,
}

impl std::fmt::Debug for SpectralSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralSolver")
            .field("grid", &self.grid)
            .field("boundary", &self.boundary)
            .finish()
    }
}

impl SpectralSolver {
    pub fn new(grid: &PeriodicGrid, boundary: Boundary) -> Self {
        let n = grid.n();
        let h = grid.spacing();
        let mut planner = FftPlanner::new();
        let len = match boundary {
            Boundary::Periodic => n,
            Boundary::Dirichlet => 2 * n,
        };
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let eig1d = (0..n)
            .map(|k| {
                let arg = match boundary {
                    Boundary::Periodic => PI * k as f64 / n as f64,
                    Boundary::Dirichlet => PI * k as f64 / (2 * n) as f64,
                };
                4.0 / (h * h) * arg.sin().powi(2)
            })
            .collect();
        Self {
            grid: *grid,
            boundary,
            forward,
            inverse,
            eig1d,
        }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Eigenvalue of `-D-.D+` for the mode with multi-index `k`.
    pub fn symbol(&self, k: &[usize]) -> f64 {
        k.iter().take(self.grid.dim()).map(|&ki| self.eig1d[ki]).sum()
    }

    fn mode_symbol(&self, site: usize) -> f64 {
        let c = self.grid.coords(site);
        (0..self.grid.dim()).map(|a| self.eig1d[c[a]]).sum()
    }

    /// Solves `(coeff (-D-.D+) + mass) u = rhs` componentwise. With
    /// `mass == 0` on the torus the zero mode of the solution is set to zero.
    pub fn solve(&self, rhs: &[f64], nc: usize, coeff: f64, mass: f64, out: &mut [f64]) {
        self.apply_multiplier(rhs, nc, out, |lam| {
            let den = coeff * lam + mass;
            if den == 0.0 {
                0.0
            } else {
                1.0 / den
            }
        });
    }

    /// Applies the Fourier (or sine) multiplier `g(symbol)` to every component.
    pub fn apply_multiplier(&self, rhs: &[f64], nc: usize, out: &mut [f64], g: impl Fn(f64) -> f64) {
        let ns = self.grid.num_sites();
        debug_assert_eq!(rhs.len(), ns * nc);
        debug_assert_eq!(out.len(), ns * nc);
        match self.boundary {
            Boundary::Periodic => {
                let mut buf = vec![Complex64::new(0.0, 0.0); ns];
                let mut scratch = vec![Complex64::new(0.0, 0.0); ns];
                let norm = 1.0 / ns as f64;
                for c in 0..nc {
                    for s in 0..ns {
                        buf[s] = Complex64::new(rhs[s * nc + c], 0.0);
                    }
                    self.fft_nd(&mut buf, &mut scratch, false);
                    for (s, v) in buf.iter_mut().enumerate() {
                        *v *= g(self.mode_symbol(s)) * norm;
                    }
                    self.fft_nd(&mut buf, &mut scratch, true);
                    for s in 0..ns {
                        out[s * nc + c] = buf[s].re;
                    }
                }
            }
            Boundary::Dirichlet => {
                let n = self.grid.n();
                let mut buf = vec![0.0; ns];
                let norm = (2.0 / n as f64).powi(self.grid.dim() as i32);
                for c in 0..nc {
                    for s in 0..ns {
                        buf[s] = if self.boundary.is_interior(&self.grid, s) {
                            rhs[s * nc + c]
                        } else {
                            0.0
                        };
                    }
                    self.dst_nd(&mut buf);
                    for (s, v) in buf.iter_mut().enumerate() {
                        if self.boundary.is_interior(&self.grid, s) {
                            *v *= g(self.mode_symbol(s)) * norm;
                        } else {
                            *v = 0.0;
                        }
                    }
                    self.dst_nd(&mut buf);
                    for s in 0..ns {
                        out[s * nc + c] = buf[s];
                    }
                }
            }
        }
    }

    /// Circular convolution `out = sum_y kernel(x - y) input(y)` of every
    /// component of `input` with a scalar `kernel` (torus only).
    pub fn circular_convolution(&self, kernel: &[f64], input: &[f64], nc: usize, out: &mut [f64]) {
        assert_eq!(self.boundary, Boundary::Periodic, "convolution requires the torus");
        let ns = self.grid.num_sites();
        let mut kb: Vec<Complex64> = kernel.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut buf = vec![Complex64::new(0.0, 0.0); ns];
        let mut scratch = vec![Complex64::new(0.0, 0.0); ns];
        self.fft_nd(&mut kb, &mut scratch, false);
        let norm = 1.0 / ns as f64;
        for c in 0..nc {
            for s in 0..ns {
                buf[s] = Complex64::new(input[s * nc + c], 0.0);
            }
            self.fft_nd(&mut buf, &mut scratch, false);
            for (v, k) in buf.iter_mut().zip(&kb) {
                *v *= k * norm;
            }
            self.fft_nd(&mut buf, &mut scratch, true);
            for s in 0..ns {
                out[s * nc + c] = buf[s].re;
            }
        }
    }

    /// In-place unnormalized n-dimensional FFT.
    fn fft_nd(&self, buf: &mut [Complex64], scratch: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inverse } else { &self.forward };
        let n = self.grid.n();
        let ns = buf.len();
        let d = self.grid.dim();
        for axis in 0..d {
            if axis == d - 1 {
                plan.process(buf);
                continue;
            }
            let st = self.grid.stride(axis);
            let outer = ns / (n * st);
            let mut line = 0;
            for o in 0..outer {
                for i in 0..st {
                    let base = o * n * st + i;
                    for t in 0..n {
                        scratch[line * n + t] = buf[base + t * st];
                    }
                    line += 1;
                }
            }
            plan.process(scratch);
            let mut line = 0;
            for o in 0..outer {
                for i in 0..st {
                    let base = o * n * st + i;
                    for t in 0..n {
                        buf[base + t * st] = scratch[line * n + t];
                    }
                    line += 1;
                }
            }
        }
    }

    /// Unnormalized type-I sine transform along every axis; index 0 of each
    /// line is the (zero) boundary value.
    fn dst_nd(&self, buf: &mut [f64]) {
        let n = self.grid.n();
        let ns = buf.len();
        let d = self.grid.dim();
        let lines = ns / n;
        let mut ext = vec![Complex64::new(0.0, 0.0); lines * 2 * n];
        for axis in 0..d {
            let st = self.grid.stride(axis);
            let outer = ns / (n * st);
            let mut line = 0;
            for o in 0..outer {
                for i in 0..st {
                    let base = o * n * st + i;
                    let y = &mut ext[line * 2 * n..(line + 1) * 2 * n];
                    y[0] = Complex64::new(0.0, 0.0);
                    y[n] = Complex64::new(0.0, 0.0);
                    for t in 1..n {
                        let v = buf[base + t * st];
                        y[t] = Complex64::new(v, 0.0);
                        y[2 * n - t] = Complex64::new(-v, 0.0);
                    }
                    line += 1;
                }
            }
            self.forward.process(&mut ext);
            let mut line = 0;
            for o in 0..outer {
                for i in 0..st {
                    let base = o * n * st + i;
                    let y = &ext[line * 2 * n..(line + 1) * 2 * n];
                    buf[base] = 0.0;
                    for k in 1..n {
                        buf[base + k * st] = -0.5 * y[k].im;
                    }
                    line += 1;
                }
            }
        }
    }
}

/// Solves `(-D-.D+ + massive_coeff) u = rhs` on the torus.
///
/// With `massive_coeff == 0` every component of `rhs` must have zero mean;
/// the returned solution then has zero mean.
pub fn solve_shifted_poisson(rhs: &DiscreteField, massive_coeff: f64) -> Result<DiscreteField> {
    if !(massive_coeff >= 0.0) || !massive_coeff.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "massive coefficient must be finite and >= 0, got {massive_coeff}"
        )));
    }
    if massive_coeff == 0.0 {
        let scale = rhs.max_abs();
        for (component, mean) in rhs.mean().into_iter().enumerate() {
            if mean.abs() > 1e-10 * scale {
                return Err(Error::NotSolvable { component, mean });
            }
        }
    }
    let solver = SpectralSolver::new(rhs.grid(), Boundary::Periodic);
    let mut out = DiscreteField::zeros(*rhs.grid(), rhs.shape());
    solver.solve(rhs.values(), rhs.ncomp(), 1.0, massive_coeff, out.values_mut());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ops::Neighbors;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn apply_operator(nb: &Neighbors, boundary: Boundary, u: &[f64], nc: usize, mass: f64) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        nb.laplacian(u, nc, &mut out);
        for (o, v) in out.iter_mut().zip(u) {
            *o = -*o + mass * v;
        }
        boundary.mask(nb.grid(), &mut out, nc);
        out
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let g = PeriodicGrid::new(2, 8, 1.0).unwrap();
        let u = solve_shifted_poisson(&DiscreteField::zeros(g, &[1]), 0.0).unwrap();
        assert_eq!(u.max_abs(), 0.0);
    }

    #[test]
    fn constant_rhs_with_mass() {
        let g = PeriodicGrid::new(2, 8, 1.0).unwrap();
        let t = 4.0;
        let u = solve_shifted_poisson(&DiscreteField::constant(g, &[1], &[2.5]), 1.0 / t).unwrap();
        for v in u.values() {
            assert!((v - t * 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn single_mode_is_divided_by_its_symbol() {
        let g = PeriodicGrid::new(2, 16, 2.0).unwrap();
        let h = g.spacing();
        let (k1, k2) = (3usize, 5usize);
        let mass = 0.7;
        let rhs = DiscreteField::from_fn(g, &[1], |x, v| {
            v[0] = (2.0 * PI * (k1 as f64 * x[0] + k2 as f64 * x[1]) / g.length()).cos()
        });
        // symbol from the stencil: sum_a (2 - 2 cos(theta_a)) / h^2
        let th1 = 2.0 * PI * k1 as f64 / g.n() as f64;
        let th2 = 2.0 * PI * k2 as f64 / g.n() as f64;
        let sym = ((2.0 - 2.0 * th1.cos()) + (2.0 - 2.0 * th2.cos())) / (h * h);
        let u = solve_shifted_poisson(&rhs, mass).unwrap();
        for s in 0..g.num_sites() {
            assert!((u.at(s)[0] - rhs.at(s)[0] / (sym + mass)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_zero_mean_without_mass() {
        let g = PeriodicGrid::new(1, 8, 1.0).unwrap();
        let rhs = DiscreteField::constant(g, &[1], &[1.0]);
        assert!(matches!(solve_shifted_poisson(&rhs, 0.0), Err(Error::NotSolvable { .. })));
    }

    #[test]
    fn residual_is_at_roundoff() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in 1..=3 {
            let n = if d == 3 { 8 } else { 32 };
            let g = PeriodicGrid::new(d, n, 1.0).unwrap();
            let nb = Neighbors::new(&g);
            let vals: Vec<f64> = (0..g.num_sites() * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rhs = DiscreteField::from_values(g, &[2], vals).unwrap().centered();
            for mass in [0.0, 0.3] {
                let u = solve_shifted_poisson(&rhs, mass).unwrap();
                let back = apply_operator(&nb, Boundary::Periodic, u.values(), 2, mass);
                let err: f64 = back.iter().zip(rhs.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                assert!(err <= 1e-10 * rhs.norm(), "d={d} mass={mass} err={err}");
            }
        }
    }

    #[test]
    fn dirichlet_solve_inverts_the_masked_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in 1..=3 {
            let n = if d == 3 { 8 } else { 16 };
            let g = PeriodicGrid::new(d, n, 1.0).unwrap();
            let nb = Neighbors::new(&g);
            let solver = SpectralSolver::new(&g, Boundary::Dirichlet);
            let mut rhs: Vec<f64> = (0..g.num_sites()).map(|_| rng.random_range(-1.0..1.0)).collect();
            Boundary::Dirichlet.mask(&g, &mut rhs, 1);
            let mut u = vec![0.0; rhs.len()];
            solver.solve(&rhs, 1, 1.0, 0.0, &mut u);
            let back = apply_operator(&nb, Boundary::Dirichlet, &u, 1, 0.0);
            let err = back.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "d={d} err={err}");
        }
    }
}
