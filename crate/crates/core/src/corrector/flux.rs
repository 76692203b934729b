//! Gauge fields: the flux corrector `sigma` and the potential `theta`.

use serde::Serialize;

use super::CorrectorSet;
use crate::error::{Error, Result};
use crate::grid::{Boundary, DiscreteField, Neighbors, SpectralSolver};

/// Size of the defect in a divergence identity `C.X = Y - mean(Y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IdentityCheck {
    /// `|C.X - (Y - mean Y)|_2` with quadrature weight `h^d`.
    pub residual: f64,
    /// `residual / |Y - mean Y|_2`.
    pub relative: f64,
    /// `residual / (h |Y|_{H^1})`.
    pub constant: f64,
}

fn identity_check(nb: &Neighbors, div: &[f64], target: &DiscreteField) -> IdentityCheck {
    let grid = target.grid();
    let hd = grid.cell_volume();
    let centered = target.centered();
    let nc = target.ncomp();
    let residual = (div
        .iter()
        .zip(centered.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        * hd)
        .sqrt();
    let l2 = centered.values().iter().map(|v| v * v).sum::<f64>() * hd;
    let h1 = (l2 + nb.gradient_dot(target.values(), target.values(), nc) * hd).sqrt();
    IdentityCheck {
        residual,
        relative: if l2 > 0.0 { residual / l2.sqrt() } else { 0.0 },
        constant: if h1 > 0.0 { residual / (grid.spacing() * h1) } else { 0.0 },
    }
}

/// `sigma_{l,jk}` solving `-D-.D+ sigma + sigma/T = C_j q_{lk} - C_k q_{lj}`
/// for `j < k`, with `sigma_{l,kj} = -sigma_{l,jk}` and zero diagonal.
pub fn flux_corrector_of(q: &DiscreteField, t: Option<f64>) -> Result<(DiscreteField, IdentityCheck)> {
    let grid = *q.grid();
    let d = grid.dim();
    let shape = q.shape();
    if shape.len() != 2 || shape[1] != d {
        return Err(Error::shape(format!("[m, {d}]"), format!("{shape:?}")));
    }
    let m = shape[0];
    let md = m * d;
    let ns = grid.num_sites();
    let nb = Neighbors::new(&grid);
    let fft = SpectralSolver::new(&grid, Boundary::Periodic);
    let mass = t.map_or(0.0, |t| 1.0 / t);
    // cg[(s, l, k), j] = C_j q_{lk}
    let mut cg = vec![0.0; ns * md * d];
    nb.centered_gradient(q.values(), md, &mut cg);
    let mut sigma = vec![0.0; ns * md * d];
    let mut rhs = vec![0.0; ns];
    let mut sol = vec![0.0; ns];
    for l in 0..m {
        for j in 0..d {
            for k in j + 1..d {
                for s in 0..ns {
                    let cj_qk = cg[(s * md + l * d + k) * d + j];
                    let ck_qj = cg[(s * md + l * d + j) * d + k];
                    rhs[s] = cj_qk - ck_qj;
                }
                fft.solve(&rhs, 1, 1.0, mass, &mut sol);
                for s in 0..ns {
                    sigma[(s * md + l * d + j) * d + k] = sol[s];
                    sigma[(s * md + l * d + k) * d + j] = -sol[s];
                }
            }
        }
    }
    let mut div = vec![0.0; ns * md];
    nb.centered_divergence(&sigma, md, &mut div);
    let check = identity_check(&nb, &div, q);
    Ok((DiscreteField::from_values(grid, &[m, d, d], sigma)?, check))
}

pub fn build_flux_corrector(set: &CorrectorSet) -> Result<CorrectorSet> {
    let (sigma, check) = flux_corrector_of(&set.flux, set.t)?;
    let mut out = set.clone();
    out.sigma = Some(sigma);
    out.sigma_check = Some(check);
    Ok(out)
}

/// `theta_{l,i}` solving `D-.D+ theta_{l,i} = C_i (phi_l - mean phi_l)` with
/// zero mean, so that `C.theta ~ phi - mean phi`.
pub fn potential_of(phi: &DiscreteField) -> (DiscreteField, IdentityCheck) {
    let grid = *phi.grid();
    let d = grid.dim();
    let m = phi.ncomp();
    let ns = grid.num_sites();
    let nb = Neighbors::new(&grid);
    let fft = SpectralSolver::new(&grid, Boundary::Periodic);
    let centered = phi.centered();
    let mut cg = vec![0.0; ns * m * d];
    nb.centered_gradient(centered.values(), m, &mut cg);
    cg.iter_mut().for_each(|v| *v = -*v);
    let mut theta = vec![0.0; ns * m * d];
    fft.solve(&cg, m * d, 1.0, 0.0, &mut theta);
    let mut div = vec![0.0; ns * m];
    nb.centered_divergence(&theta, m, &mut div);
    let check = identity_check(&nb, &div, phi);
    (
        DiscreteField::from_values(grid, &[m, d], theta).expect("spectral solve is finite"),
        check,
    )
}

pub fn build_potential(set: &CorrectorSet) -> CorrectorSet {
    let (theta, check) = potential_of(&set.phi);
    let mut out = set.clone();
    out.theta = Some(theta);
    out.theta_check = Some(check);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PeriodicGrid;
    use std::f64::consts::PI;

    /// `q = (D-_2 psi, -D-_1 psi) + const`, discretely divergence free.
    fn solenoidal(n: usize) -> DiscreteField {
        let g = PeriodicGrid::new(2, n, 1.0).unwrap();
        let psi = DiscreteField::from_fn(g, &[1], |x, v| {
            v[0] = (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos() + 0.3 * (4.0 * PI * x[1]).sin()
        });
        let h = g.spacing();
        let nb = Neighbors::new(&g);
        let p = psi.values();
        let mut q = vec![0.0; g.num_sites() * 2];
        for s in 0..g.num_sites() {
            q[2 * s] = 1.0 + (p[s] - p[nb.backward(1, s)]) / h;
            q[2 * s + 1] = 0.5 - (p[s] - p[nb.backward(0, s)]) / h;
        }
        DiscreteField::from_values(g, &[1, 2], q).unwrap()
    }

    #[test]
    fn constant_flux_has_zero_sigma() {
        let g = PeriodicGrid::new(2, 8, 1.0).unwrap();
        let q = DiscreteField::constant(g, &[1, 2], &[1.0, 2.0]);
        let (sigma, _) = flux_corrector_of(&q, None).unwrap();
        assert!(sigma.max_abs() < 1e-14);
    }

    #[test]
    fn sigma_is_exactly_skew() {
        let q = solenoidal(16);
        let (sigma, _) = flux_corrector_of(&q, Some(4.0)).unwrap();
        let v = sigma.values();
        for s in 0..q.grid().num_sites() {
            for j in 0..2 {
                for k in 0..2 {
                    assert_eq!(v[s * 4 + j * 2 + k], -v[s * 4 + k * 2 + j]);
                }
            }
        }
    }

    #[test]
    fn divergence_identity_is_first_order() {
        let r: Vec<f64> = [32, 64, 128]
            .iter()
            .map(|&n| flux_corrector_of(&solenoidal(n), None).unwrap().1.relative)
            .collect();
        for w in r.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.5..=2.5).contains(&ratio), "{r:?}");
        }
    }

    #[test]
    fn potential_of_constant_vanishes() {
        let g = PeriodicGrid::new(2, 8, 1.0).unwrap();
        let (theta, _) = potential_of(&DiscreteField::constant(g, &[1], &[3.0]));
        assert!(theta.max_abs() < 1e-14);
    }

    #[test]
    fn potential_of_a_fourier_mode() {
        // phi = cos(2 pi k x): theta = -c / a^2 * C phi in symbol form, i.e.
        // theta(x) = sin(2 pi k h)/h / (4 sin^2(pi k h)/h^2) sin(2 pi k x).
        let n = 32;
        let g = PeriodicGrid::new(1, n, 1.0).unwrap();
        let k = 3.0;
        let phi = DiscreteField::from_fn(g, &[1], |x, v| v[0] = (2.0 * PI * k * x[0]).cos());
        let (theta, _) = potential_of(&phi);
        let h = g.spacing();
        let amp = (2.0 * PI * k * h).sin() / h / (4.0 * (PI * k * h).sin().powi(2) / (h * h));
        for s in 0..n {
            let x = g.position(s)[0];
            assert!((theta.at(s)[0] - amp * (2.0 * PI * k * x).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn potential_identity_converges() {
        let errs: Vec<f64> = [32, 64]
            .iter()
            .map(|&n| {
                let g = PeriodicGrid::new(2, n, 1.0).unwrap();
                let phi = DiscreteField::from_fn(g, &[1], |x, v| {
                    v[0] = (2.0 * PI * x[0]).sin() * (2.0 * PI * (x[1] + 0.1)).sin() + (2.0 * PI * x[1]).cos()
                });
                potential_of(&phi).1.relative
            })
            .collect();
        assert!(errs[0] / errs[1] >= 1.8, "{errs:?}");
    }
}
