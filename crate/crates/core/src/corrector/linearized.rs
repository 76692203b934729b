use super::flux::{flux_corrector_of, potential_of, IdentityCheck};
use super::solver::{gmres, CoefficientOperator, Discretization, MonotoneProblem, SolverOptions};
use super::CorrectorSet;
use crate::error::{Error, Result};
use crate::grid::{Boundary, DiscreteField};

/// Solution of `-D-.(a (Xi + D+psi)) + psi/T = 0` with
/// `a = d_xi A(omega, xi + D+phi)` (transposed for the adjoint).
#[derive(Clone, Debug)]
pub struct LinearizedCorrector {
    pub xi_dir: Vec<f64>,
    pub adjoint: bool,
    pub t: Option<f64>,
    pub phi: DiscreteField,
    /// `a (Xi + D+psi)`.
    pub flux: DiscreteField,
    pub sigma: Option<DiscreteField>,
    pub sigma_check: Option<IdentityCheck>,
    pub theta: Option<DiscreteField>,
    pub residual_norm: f64,
    pub threshold: f64,
    pub iterations: usize,
    pub preconditioner: String,
}

impl LinearizedCorrector {
    pub fn with_flux_corrector(mut self) -> Result<Self> {
        let (s, c) = flux_corrector_of(&self.flux, self.t)?;
        self.sigma = Some(s);
        self.sigma_check = Some(c);
        Ok(self)
    }

    pub fn with_potential(mut self) -> Self {
        self.theta = Some(potential_of(&self.phi).0);
        self
    }
}

pub fn solve_linearized_corrector(
    set: &CorrectorSet,
    xi_dir: &[f64],
    adjoint: bool,
    tol: f64,
) -> Result<LinearizedCorrector> {
    let fam = &set.family;
    let grid = *set.grid();
    let md = fam.md();
    if xi_dir.len() != md {
        return Err(Error::shape(format!("direction with {md} entries"), format!("{}", xi_dir.len())));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let mass = set.mass();
    let disc = Discretization::new(&grid, Boundary::Periodic, fam.m());
    let problem = MonotoneProblem {
        disc: &disc,
        omega: &set.omega,
        fam,
        background: &set.xi,
        mass,
        rhs: None,
    };
    let coef = problem.jacobian(set.phi.values());
    let op = CoefficientOperator {
        disc: &disc,
        coef: &coef,
        transpose: adjoint,
        mass,
    };
    let ns = grid.num_sites();
    let m = fam.m();
    // b = D-.(a Xi)
    let mut axi = vec![0.0; ns * md];
    op.flux(&vec![0.0; ns * m], xi_dir, &mut axi);
    let mut b = vec![0.0; ns * m];
    disc.nb.divergence(&axi, m, &mut b);
    let (l, ll) = fam.constants();
    let c = (l * ll).sqrt();
    let xn = xi_dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let thr = tol * xn * (ns as f64).sqrt();
    let mut psi = vec![0.0; ns * m];
    let opts = SolverOptions::default();
    let out = if thr > 0.0 {
        gmres(&op, &b, &mut psi, c, thr, opts.restart, opts.max_krylov)
    } else {
        super::solver::KrylovOutcome {
            iterations: 0,
            residual: 0.0,
            converged: true,
        }
    };
    if !out.converged {
        return Err(Error::NotConverged {
            solver: "gmres (fft-preconditioned)",
            iterations: out.iterations,
            residual: out.residual,
            threshold: thr,
            history: vec![out.residual],
        });
    }
    disc.project(&mut psi, mass);
    let mut flux = vec![0.0; ns * md];
    op.flux(&psi, xi_dir, &mut flux);
    Ok(LinearizedCorrector {
        xi_dir: xi_dir.to_vec(),
        adjoint,
        t: set.t,
        phi: DiscreteField::from_values(grid, &[m], psi)?,
        flux: DiscreteField::from_values(grid, &[m, grid.dim()], flux)?,
        sigma: None,
        sigma_check: None,
        theta: None,
        residual_norm: out.residual,
        threshold: thr,
        iterations: out.iterations,
        preconditioner: format!("fft c={c:.6}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrector::{solve_localized_corrector, CorrectorProblem};
    use crate::grid::PeriodicGrid;
    use crate::material::{make_linear_midpoint, make_rational_uhlenbeck};
    use crate::randomfield::{ClampSpec, FieldSpec, KernelShape, ParameterField};

    fn field(d: usize, n: usize, seed: u64) -> ParameterField {
        let g = PeriodicGrid::new(d, n, 1.0).unwrap();
        FieldSpec::new((8.0 / n as f64).min(0.25), KernelShape::GaussianBump, ClampSpec::default())
            .sample(&g, seed)
            .unwrap()
    }

    #[test]
    fn constant_medium_gives_zero() {
        let g = PeriodicGrid::new(2, 8, 1.0).unwrap();
        let omega = ParameterField::constant(g, &[0.1], 0.25).unwrap();
        let fam = make_rational_uhlenbeck(1, 2);
        let set = solve_localized_corrector(&omega, &fam, &[1.0, 0.3], 1.0, 1e-10).unwrap();
        let lin = solve_linearized_corrector(&set, &[0.0, 1.0], false, 1e-10).unwrap();
        assert!(lin.phi.max_abs() < 1e-12);
    }

    #[test]
    fn linear_family_is_slope_independent() {
        let omega = field(2, 16, 7);
        let fam = make_linear_midpoint(1, 2);
        let a = solve_localized_corrector(&omega, &fam, &[1.0, 0.0], 0.05, 1e-11).unwrap();
        let b = solve_localized_corrector(&omega, &fam, &[-0.3, 2.0], 0.05, 1e-11).unwrap();
        let dir = [0.4, -1.0];
        let la = solve_linearized_corrector(&a, &dir, false, 1e-11).unwrap();
        let lb = solve_linearized_corrector(&b, &dir, false, 1e-11).unwrap();
        let direct = solve_localized_corrector(&omega, &fam, &dir, 0.05, 1e-11).unwrap();
        assert!(la.phi.sub(&lb.phi).unwrap().max_abs() < 1e-9);
        assert!(la.phi.sub(&direct.phi).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn finite_difference_quotient_is_first_order() {
        let omega = field(1, 64, 9);
        let fam = make_rational_uhlenbeck(1, 1);
        let t = 0.01;
        let xi = [1.0];
        let dir = [1.0];
        let opts = SolverOptions::with_tol(1e-12);
        let base = CorrectorProblem::new(&omega, &fam, &xi).localized(t).solve(&opts).unwrap();
        let lin = solve_linearized_corrector(&base, &dir, false, 1e-12).unwrap();
        let err = |s: f64| {
            let p = CorrectorProblem::new(&omega, &fam, &[xi[0] + s * dir[0]])
                .localized(t)
                .initial_guess(&base.phi)
                .solve(&opts)
                .unwrap();
            let fd: Vec<f64> = p
                .phi
                .values()
                .iter()
                .zip(base.phi.values())
                .map(|(a, b)| (a - b) / s)
                .collect();
            fd.iter()
                .zip(lin.phi.values())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((1.5..=3.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn adjoint_matches_primal_for_symmetric_coefficients() {
        let omega = field(2, 16, 3);
        let fam = make_rational_uhlenbeck(1, 2);
        let set = solve_localized_corrector(&omega, &fam, &[1.0, 0.5], 0.1, 1e-11).unwrap();
        let p = solve_linearized_corrector(&set, &[1.0, 0.0], false, 1e-11).unwrap();
        let a = solve_linearized_corrector(&set, &[1.0, 0.0], true, 1e-11).unwrap();
        assert!(p.phi.sub(&a.phi).unwrap().max_abs() < 1e-9);
    }
}
