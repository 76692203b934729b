//! Correctors, flux correctors, potentials and their linearizations.
//!
//! A corrector with slope `xi` solves
//!
//! ```text
//! -D-.A(omega, xi + D+phi) + phi / T = 0
//! ```
//!
//! on the torus; `T = None` is the periodic cell problem (no mass term,
//! zero-mean `phi`).

mod flux;
pub mod io;
mod linearized;
mod localization;
mod radius;
pub mod solver;

pub use flux::{build_flux_corrector, build_potential, flux_corrector_of, potential_of, IdentityCheck};
pub use linearized::{solve_linearized_corrector, LinearizedCorrector};
pub use localization::{localization_gap, localization_response, LocalizationGap, LocalizationResponse, Perturbation};
pub use radius::{minimal_radius, MinimalRadius, MinimalRadiusConfig};
pub use solver::{solve_monotone_problem, SolveStats, SolverOptions};

use crate::error::{Error, Result};
use crate::grid::{Boundary, DiscreteField, Neighbors, PeriodicGrid};
use crate::material::OperatorFamily;
use crate::randomfield::ParameterField;

/// A solved corrector together with its flux and optional gauge fields.
#[derive(Clone, Debug)]
pub struct CorrectorSet {
    pub xi: Vec<f64>,
    /// Localization parameter; `None` for the periodic cell problem.
    pub t: Option<f64>,
    pub phi: DiscreteField,
    /// `q = A(omega, xi + D+phi)`, shape `[m, d]`.
    pub flux: DiscreteField,
    /// Skew in the last two axes, shape `[m, d, d]`.
    pub sigma: Option<DiscreteField>,
    pub sigma_check: Option<IdentityCheck>,
    /// Shape `[m, d]`.
    pub theta: Option<DiscreteField>,
    pub theta_check: Option<IdentityCheck>,
    pub tol: f64,
    pub residual_norm: f64,
    pub stats: SolveStats,
    pub omega: ParameterField,
    pub family: OperatorFamily,
}

impl CorrectorSet {
    pub fn grid(&self) -> &PeriodicGrid {
        self.phi.grid()
    }

    pub fn m(&self) -> usize {
        self.family.m()
    }

    pub fn mass(&self) -> f64 {
        self.t.map_or(0.0, |t| 1.0 / t)
    }

    /// Site mean of the flux.
    pub fn flux_average(&self) -> Vec<f64> {
        self.flux.mean()
    }

    pub fn gradient(&self) -> DiscreteField {
        crate::grid::apply_gradient(&self.phi)
    }

    /// `avg(|D+phi|^2 + |phi|^2 / T)`.
    pub fn energy(&self) -> f64 {
        let nb = Neighbors::new(self.grid());
        let ns = self.grid().num_sites() as f64;
        let m = self.m();
        let g = nb.gradient_dot(self.phi.values(), self.phi.values(), m);
        let l2 = self.phi.values().iter().map(|v| v * v).sum::<f64>();
        (g + self.mass() * l2) / ns
    }

    /// `energy / |xi|^2`, the constant `C_E` of the energy bound.
    pub fn energy_constant(&self) -> f64 {
        let x2: f64 = self.xi.iter().map(|v| v * v).sum();
        if x2 > 0.0 {
            self.energy() / x2
        } else {
            0.0
        }
    }

    pub fn with_flux_corrector(&self) -> Result<Self> {
        build_flux_corrector(self)
    }

    pub fn with_potential(&self) -> Self {
        build_potential(self)
    }
}

/// Builder for corrector solves.
pub struct CorrectorProblem<'a> {
    omega: &'a ParameterField,
    family: &'a OperatorFamily,
    xi: Vec<f64>,
    t: Option<f64>,
    init: Option<Vec<f64>>,
}

impl<'a> CorrectorProblem<'a> {
    pub fn new(omega: &'a ParameterField, family: &'a OperatorFamily, xi: &[f64]) -> Self {
        Self {
            omega,
            family,
            xi: xi.to_vec(),
            t: None,
            init: None,
        }
    }

    pub fn localized(mut self, t: f64) -> Self {
        self.t = Some(t);
        self
    }

    pub fn initial_guess(mut self, phi: &DiscreteField) -> Self {
        self.init = Some(phi.values().to_vec());
        self
    }

    pub fn solve(self, opts: &SolverOptions) -> Result<CorrectorSet> {
        if !(opts.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", opts.tol)));
        }
        let grid = *self.omega.grid();
        let mass = match self.t {
            None => 0.0,
            Some(t) if t > 0.0 && t.is_finite() => {
                check_localization(self.omega, t);
                1.0 / t
            }
            Some(t) => return Err(Error::InvalidArgument(format!("localization parameter must be positive, got {t}"))),
        };
        let (phi, flux, stats) = solve_monotone_problem(
            self.omega,
            self.family,
            &self.xi,
            mass,
            None,
            Boundary::Periodic,
            self.init.as_deref(),
            opts,
        )?;
        debug_assert_eq!(phi.grid(), &grid);
        Ok(CorrectorSet {
            xi: self.xi,
            t: self.t,
            phi,
            flux,
            sigma: None,
            sigma_check: None,
            theta: None,
            theta_check: None,
            tol: opts.tol,
            residual_norm: stats.residual,
            stats,
            omega: self.omega.clone(),
            family: self.family.clone(),
        })
    }
}

fn check_localization(omega: &ParameterField, t: f64) {
    let l = omega.grid().length();
    if l < 8.0 * t.sqrt() {
        log::warn!(
            "torus period {l} is below 8 sqrt(T) = {}; wrap-around may contaminate the localized corrector",
            8.0 * t.sqrt()
        );
    }
    let eps = omega.epsilon();
    if t < 2.0 * eps * eps {
        log::warn!("T = {t} is below 2 eps^2 = {}", 2.0 * eps * eps);
    }
}

/// Periodic cell problem with zero-mean corrector.
pub fn solve_periodic_corrector(
    omega: &ParameterField,
    family: &OperatorFamily,
    xi: &[f64],
    tol: f64,
) -> Result<CorrectorSet> {
    CorrectorProblem::new(omega, family, xi).solve(&SolverOptions::with_tol(tol))
}

/// Corrector with massive term `phi / T`.
pub fn solve_localized_corrector(
    omega: &ParameterField,
    family: &OperatorFamily,
    xi: &[f64],
    t: f64,
    tol: f64,
) -> Result<CorrectorSet> {
    CorrectorProblem::new(omega, family, xi)
        .localized(t)
        .solve(&SolverOptions::with_tol(tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{make_linear, make_linear_midpoint, make_rational_uhlenbeck};
    use crate::randomfield::{ClampSpec, FieldSpec, KernelShape};

    fn two_phase(n: usize) -> (ParameterField, OperatorFamily) {
        let g = PeriodicGrid::new(1, n, 1.0).unwrap();
        let w = 0.999;
        let vals = (0..n).map(|i| if i < n / 2 { -w } else { w }).collect();
        let omega = ParameterField::from_values(g, 1, vals, 0.25).unwrap();
        let fam = make_linear(
            "two-phase",
            1,
            1,
            1,
            move |o, out| out[0] = 1.5 + 0.5 * o[0] / w,
            move |_, out| out[0] = 0.5 / w,
            (1.0 - 1e-3, 2.0 + 1e-3),
            true,
        )
        .unwrap();
        (omega, fam)
    }

    #[test]
    fn harmonic_mean_two_phase() {
        let (omega, fam) = two_phase(256);
        let set = solve_periodic_corrector(&omega, &fam, &[1.0], 1e-10).unwrap();
        let q = set.flux_average()[0];
        assert!((q - 4.0 / 3.0).abs() < 1e-9, "{q}");
        let grad = set.gradient();
        for s in 0..256 {
            let a = if s < 128 { 1.0 } else { 2.0 };
            assert!((set.flux.at(s)[0] - 4.0 / 3.0).abs() < 1e-8);
            assert!((grad.at(s)[0] - (q / a - 1.0)).abs() < 1e-8);
        }
        assert!(set.phi.mean()[0].abs() < 1e-12);
    }

    #[test]
    fn constant_medium_and_zero_slope() {
        let g = PeriodicGrid::new(2, 16, 1.0).unwrap();
        let omega = ParameterField::constant(g, &[0.3], 0.25).unwrap();
        let fam = make_rational_uhlenbeck(1, 2);
        let set = solve_periodic_corrector(&omega, &fam, &[0.7, -0.2], 1e-9).unwrap();
        assert!(set.phi.max_abs() < 1e-12);
        let a = fam.apply(&[0.3], &[0.7, -0.2]);
        assert!((set.flux_average()[0] - a[0]).abs() < 1e-12);
        let omega = FieldSpec::new(0.25, KernelShape::GaussianBump, ClampSpec::default())
            .sample(&g, 3)
            .unwrap();
        let zero = solve_periodic_corrector(&omega, &fam, &[0.0, 0.0], 1e-9).unwrap();
        assert_eq!(zero.phi.max_abs(), 0.0);
        assert_eq!(zero.flux.max_abs(), 0.0);
    }

    #[test]
    fn energy_identity_and_flux_conservation() {
        let g = PeriodicGrid::new(2, 32, 1.0).unwrap();
        let omega = FieldSpec::new(0.125, KernelShape::GaussianBump, ClampSpec::default())
            .sample(&g, 5)
            .unwrap();
        let fam = make_rational_uhlenbeck(1, 2);
        let set = solve_periodic_corrector(&omega, &fam, &[1.0, 0.0], 1e-10).unwrap();
        let grad = set.gradient();
        let pairing = set.flux.dot(&grad).unwrap() * g.cell_volume();
        assert!(pairing.abs() < 1e-8, "{pairing}");
        let div = crate::grid::apply_divergence(&set.flux).unwrap();
        assert!(div.max_abs() * g.spacing() < 1e-6, "{}", div.max_abs());
        let (l, ll) = fam.constants();
        assert!(set.energy() <= (ll / l).powi(2) * (1.0 + 1e-6));
    }

    #[test]
    fn localized_corrector_vanishes_in_constant_medium() {
        let g = PeriodicGrid::new(1, 64, 8.0).unwrap();
        let omega = ParameterField::constant(g, &[-0.4], 0.5).unwrap();
        let set = solve_localized_corrector(&omega, &make_linear_midpoint(1, 1), &[1.0], 1.0, 1e-9).unwrap();
        assert!(set.phi.max_abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_localization_parameter() {
        let g = PeriodicGrid::new(1, 16, 1.0).unwrap();
        let omega = ParameterField::constant(g, &[0.0], 0.25).unwrap();
        assert!(solve_localized_corrector(&omega, &make_linear_midpoint(1, 1), &[1.0], 0.0, 1e-9).is_err());
        assert!(solve_periodic_corrector(&omega, &make_linear_midpoint(1, 1), &[1.0], 0.0).is_err());
    }
}
