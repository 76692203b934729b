//! How fast localized correctors forget the massive term and far-away
//! perturbations.

use serde::Serialize;

use super::solver::SolverOptions;
use super::{CorrectorProblem, CorrectorSet};
use crate::error::{Error, Result};
use crate::grid::Neighbors;
use crate::harness::fit::{fit_exponential, RateFit};
use crate::material::OperatorFamily;
use crate::randomfield::ParameterField;

/// `avg(|D+(phi^2T - phi^T)|^2 + |phi^2T - phi^T|^2 / T)` and its square root.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LocalizationGap {
    pub t: f64,
    pub gradient_part: f64,
    pub mass_part: f64,
    pub gap: f64,
}

/// Site-wise `|D+ u|^2 + |u|^2 / T`.
fn energy_density(nb: &Neighbors, u: &[f64], m: usize, t: f64) -> Vec<f64> {
    let grid = nb.grid();
    let d = grid.dim();
    let ns = grid.num_sites();
    let mut g = vec![0.0; ns * m * d];
    nb.gradient(u, m, &mut g);
    (0..ns)
        .map(|s| {
            let gs: f64 = g[s * m * d..(s + 1) * m * d].iter().map(|v| v * v).sum();
            let us: f64 = u[s * m..(s + 1) * m].iter().map(|v| v * v).sum();
            gs + us / t
        })
        .collect()
}

fn check_torus(omega: &ParameterField, t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("localization parameter must be positive, got {t}")));
    }
    let l = omega.grid().length();
    if l < 8.0 * (2.0 * t).sqrt() {
        return Err(Error::AssumptionViolated(format!(
            "torus period {l} is below 8 sqrt(2T) = {}",
            8.0 * (2.0 * t).sqrt()
        )));
    }
    Ok(())
}

pub fn localization_gap(
    omega: &ParameterField,
    fam: &OperatorFamily,
    xi: &[f64],
    t: f64,
    tol: f64,
) -> Result<LocalizationGap> {
    check_torus(omega, t)?;
    let opts = SolverOptions::with_tol(tol);
    let a = CorrectorProblem::new(omega, fam, xi).localized(t).solve(&opts)?;
    let b = CorrectorProblem::new(omega, fam, xi)
        .localized(2.0 * t)
        .initial_guess(&a.phi)
        .solve(&opts)?;
    Ok(gap_between(&a, &b, t))
}

fn gap_between(a: &CorrectorSet, b: &CorrectorSet, t: f64) -> LocalizationGap {
    let nb = Neighbors::new(a.grid());
    let m = a.m();
    let d = a.grid().dim();
    let ns = a.grid().num_sites();
    let delta: Vec<f64> = b.phi.values().iter().zip(a.phi.values()).map(|(x, y)| x - y).collect();
    let mut g = vec![0.0; ns * m * d];
    nb.gradient(&delta, m, &mut g);
    let gradient_part = g.iter().map(|v| v * v).sum::<f64>() / ns as f64;
    let mass_part = delta.iter().map(|v| v * v).sum::<f64>() / (ns as f64 * t);
    LocalizationGap {
        t,
        gradient_part,
        mass_part,
        gap: (gradient_part + mass_part).sqrt(),
    }
}

/// Replace `omega` by a constant inside a ball at the torus center.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Perturbation {
    pub radius: f64,
    pub value: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalizationResponse {
    pub t: f64,
    /// Annulus centers.
    pub radii: Vec<f64>,
    /// Annulus averages of `|D+delta|^2 + |delta|^2 / T`.
    pub density: Vec<f64>,
    /// Average of the density over the perturbation ball.
    pub near: f64,
    /// `density(10 sqrt T) / near`, when `10 sqrt T` fits in half a period.
    pub far_ratio: Option<f64>,
    /// Fit of `log density` against the radius.
    pub fit: RateFit,
    /// `-slope sqrt(T) / 2`: decay rate of `|delta|` in units of `1/sqrt(T)`.
    pub gamma_hat: f64,
}

pub fn localization_response(
    omega: &ParameterField,
    fam: &OperatorFamily,
    xi: &[f64],
    t: f64,
    perturbation: &Perturbation,
    tol: f64,
) -> Result<LocalizationResponse> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("localization parameter must be positive, got {t}")));
    }
    if perturbation.value.len() != omega.k() {
        return Err(Error::shape(format!("{} channels", omega.k()), format!("{}", perturbation.value.len())));
    }
    let grid = *omega.grid();
    let center = grid.center();
    let h = grid.spacing();
    let rho = perturbation.radius.max(h);
    let perturbed = omega.map_sites(|s, v| {
        if grid.wrap_distance(s, &center) <= rho {
            v.copy_from_slice(&perturbation.value);
        }
    })?;
    let opts = SolverOptions::with_tol(tol);
    let base = CorrectorProblem::new(omega, fam, xi).localized(t).solve(&opts)?;
    let pert = CorrectorProblem::new(&perturbed, fam, xi)
        .localized(t)
        .initial_guess(&base.phi)
        .solve(&opts)?;
    let delta: Vec<f64> = pert.phi.values().iter().zip(base.phi.values()).map(|(a, b)| a - b).collect();
    let nb = Neighbors::new(&grid);
    let e = energy_density(&nb, &delta, fam.m(), t);

    let width = h.max(0.5 * omega.epsilon());
    let half = 0.5 * grid.length();
    let nbins = (half / width).floor() as usize;
    let mut sums = vec![0.0; nbins];
    let mut counts = vec![0usize; nbins];
    let (mut near_sum, mut near_count) = (0.0, 0usize);
    for (s, &v) in e.iter().enumerate() {
        let r = grid.wrap_distance(s, &center);
        if r <= rho {
            near_sum += v;
            near_count += 1;
        }
        let b = (r / width) as usize;
        if b < nbins {
            sums[b] += v;
            counts[b] += 1;
        }
    }
    let near = near_sum / near_count.max(1) as f64;
    let mut radii = Vec::new();
    let mut density = Vec::new();
    for b in 0..nbins {
        if counts[b] > 0 {
            radii.push((b as f64 + 0.5) * width);
            density.push(sums[b] / counts[b] as f64);
        }
    }
    let far = 10.0 * t.sqrt();
    let far_ratio = if far < half - width {
        let b = (far / width) as usize;
        (counts[b] > 0 && near > 0.0).then(|| sums[b] / counts[b] as f64 / near)
    } else {
        None
    };
    // Fit window: outside the perturbation and its correlation halo, inside
    // ten localization lengths, above the round-off floor.
    let lo = rho + 2.0 * omega.epsilon();
    let hi = far.min(half - width);
    let floor = 1e-24 * near.max(density.iter().cloned().fold(0.0, f64::max));
    let pairs: Vec<(f64, f64)> = radii
        .iter()
        .zip(&density)
        .filter(|(r, v)| **r >= lo && **r <= hi && **v > floor)
        .map(|(r, v)| (*r, *v))
        .collect();
    let fit = fit_exponential(&pairs)?;
    Ok(LocalizationResponse {
        t,
        radii,
        density,
        near,
        far_ratio,
        gamma_hat: -fit.slope * t.sqrt() / 2.0,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrector::solve_periodic_corrector;
    use crate::grid::PeriodicGrid;
    use crate::material::{make_linear_midpoint, make_rational_uhlenbeck};
    use crate::randomfield::{ClampSpec, FieldSpec, KernelShape};

    fn field(d: usize, n: usize, l: f64, eps: f64, seed: u64) -> ParameterField {
        let g = PeriodicGrid::new(d, n, l).unwrap();
        FieldSpec::new(eps, KernelShape::GaussianBump, ClampSpec::default())
            .sample(&g, seed)
            .unwrap()
    }

    #[test]
    fn constant_medium_has_zero_gap() {
        let g = PeriodicGrid::new(1, 64, 16.0).unwrap();
        let omega = ParameterField::constant(g, &[0.4], 1.0).unwrap();
        let gap = localization_gap(&omega, &make_rational_uhlenbeck(1, 1), &[1.0], 1.0, 1e-10).unwrap();
        assert!(gap.gap < 1e-12);
    }

    #[test]
    fn rejects_small_torus() {
        let g = PeriodicGrid::new(1, 64, 4.0).unwrap();
        let omega = ParameterField::constant(g, &[0.4], 1.0).unwrap();
        assert!(matches!(
            localization_gap(&omega, &make_rational_uhlenbeck(1, 1), &[1.0], 1.0, 1e-10),
            Err(Error::AssumptionViolated(_))
        ));
    }

    #[test]
    fn localized_gradient_approaches_periodic() {
        let omega = field(1, 256, 64.0, 1.0, 11);
        let fam = make_rational_uhlenbeck(1, 1);
        let per = solve_periodic_corrector(&omega, &fam, &[1.0], 1e-11).unwrap();
        let gp = per.gradient();
        let errs: Vec<f64> = [1.0, 4.0, 16.0]
            .iter()
            .map(|&t| {
                let set = CorrectorProblem::new(&omega, &fam, &[1.0])
                    .localized(t)
                    .solve(&SolverOptions::with_tol(1e-11))
                    .unwrap();
                set.gradient().sub(&gp).unwrap().norm()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn gap_decreases_with_t() {
        let omega = field(1, 512, 128.0, 1.0, 2);
        let fam = make_rational_uhlenbeck(1, 1);
        let gaps: Vec<f64> = [4.0, 16.0, 64.0]
            .iter()
            .map(|&t| localization_gap(&omega, &fam, &[1.0], t, 1e-11).unwrap().gap)
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn linear_response_decays_exponentially() {
        // Constant linear medium: the response of a point perturbation decays
        // like exp(-r / sqrt(a T)) with a = 1.5 at omega = 0.
        let g = PeriodicGrid::new(1, 1024, 128.0).unwrap();
        let omega = ParameterField::constant(g, &[0.0], 1.0).unwrap();
        let fam = make_linear_midpoint(1, 1);
        let t = 16.0;
        let p = Perturbation {
            radius: 1.0,
            value: vec![0.9],
        };
        let r = localization_response(&omega, &fam, &[1.0], t, &p, 1e-12).unwrap();
        let expect = 1.0 / 1.5f64.sqrt();
        assert!((r.gamma_hat - expect).abs() < 0.1 * expect, "{} vs {expect}", r.gamma_hat);
        assert!(r.fit.r2 > 0.99);
        assert!(r.far_ratio.unwrap() < 1e-6);
    }
}
