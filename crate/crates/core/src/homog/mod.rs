//! Effective-law estimators: periodic and localized RVEs, one-dimensional
//! oracles and structural checks.

mod experiments;
mod law;
mod oracle;
mod structure;

pub use experiments::{
    fluctuation_experiment, localized_bias_sweep, systematic_experiment, weight_experiment, EnsembleSpec,
    FluctuationConfig, FluctuationResult, LevelStats, LocalizedBiasRow, ReferenceSpec, SystematicConfig,
    SystematicResult, SystematicRow, WeightConfig, WeightResult,
};
pub use law::EffectiveLaw;
pub use oracle::{constant_flux_1d, mean_inverse_1d, oracle_1d, quadrature_reference, SiteLawReference};
pub use structure::{structure_checks, StructureConfig, StructureReport, SymmetryCheck};

use serde::{Deserialize, Serialize};

use crate::corrector::{solve_linearized_corrector, CorrectorProblem, SolverOptions};
use crate::error::{Error, Result};
use crate::grid::PeriodicGrid;
use crate::material::OperatorFamily;
use crate::randomfield::ParameterField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RveKind {
    Periodic,
    Localized,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RveEstimate {
    pub kind: RveKind,
    pub xi: Vec<f64>,
    /// Flux average (periodic) or the actions on the basis `e_l (x) e_j`
    /// (localized), row-major `m x d`.
    pub value: Vec<f64>,
    pub t: Option<f64>,
    pub d: usize,
    pub n: usize,
    pub l: f64,
    pub epsilon: f64,
    pub seed: Option<u64>,
    pub weight: Option<WeightSpec>,
    pub residual: f64,
    pub newton_iterations: usize,
    pub krylov_iterations: usize,
}

impl RveEstimate {
    pub fn norm(&self) -> f64 {
        self.value.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// One CSV row per component.
    pub fn rows(&self) -> Vec<RveRow> {
        let xi = self
            .xi
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(";");
        self.value
            .iter()
            .enumerate()
            .map(|(c, &v)| RveRow {
                kind: match self.kind {
                    RveKind::Periodic => "periodic".into(),
                    RveKind::Localized => "localized".into(),
                },
                d: self.d,
                n: self.n,
                l: self.l,
                epsilon: self.epsilon,
                t: self.t.unwrap_or(f64::INFINITY),
                xi: xi.clone(),
                component: c,
                seed: self.seed.unwrap_or(0),
                value: v,
                residual: self.residual,
            })
            .collect()
    }
}

/// Flat record for CSV output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RveRow {
    pub kind: String,
    pub d: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub epsilon: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub xi: String,
    pub component: usize,
    pub seed: u64,
    pub value: f64,
    pub residual: f64,
}

fn estimate(kind: RveKind, omega: &ParameterField, xi: &[f64], value: Vec<f64>, t: Option<f64>) -> RveEstimate {
    let g = omega.grid();
    RveEstimate {
        kind,
        xi: xi.to_vec(),
        value,
        t,
        d: g.dim(),
        n: g.n(),
        l: g.length(),
        epsilon: omega.epsilon(),
        seed: omega.seed(),
        weight: None,
        residual: 0.0,
        newton_iterations: 0,
        krylov_iterations: 0,
    }
}

/// Site mean of `A(omega, xi + D+phi)` for the periodic corrector.
pub fn rve_periodic(omega: &ParameterField, fam: &OperatorFamily, xi: &[f64], tol: f64) -> Result<RveEstimate> {
    rve_periodic_with(omega, fam, xi, &SolverOptions::with_tol(tol))
}

pub fn rve_periodic_with(
    omega: &ParameterField,
    fam: &OperatorFamily,
    xi: &[f64],
    opts: &SolverOptions,
) -> Result<RveEstimate> {
    let set = CorrectorProblem::new(omega, fam, xi).solve(opts)?;
    let mut est = estimate(RveKind::Periodic, omega, xi, set.flux_average(), None);
    est.residual = set.residual_norm;
    est.newton_iterations = set.stats.newton_iterations;
    est.krylov_iterations = set.stats.krylov_iterations;
    Ok(est)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightShape {
    /// `exp(-1 / (1 - r^2))`.
    Bump,
    /// `cos^2(pi r / 2)`.
    CosineSquared,
}

/// Radial averaging weight centered on the torus, supported in a ball of
/// radius `radius_fraction * L`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub shape: WeightShape,
    pub radius_fraction: f64,
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self {
            shape: WeightShape::Bump,
            radius_fraction: 0.125,
        }
    }
}

impl WeightSpec {
    pub fn new(shape: WeightShape, radius_fraction: f64) -> Self {
        Self { shape, radius_fraction }
    }

    /// Site values with `h^d sum eta = 1`.
    pub fn discretize(&self, grid: &PeriodicGrid) -> Result<Vec<f64>> {
        if !(self.radius_fraction > 0.0 && self.radius_fraction <= 0.125 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "weight support radius must lie in (0, L/8], got {} L",
                self.radius_fraction
            )));
        }
        let r0 = self.radius_fraction * grid.length();
        let c = grid.center();
        let mut eta: Vec<f64> = (0..grid.num_sites())
            .map(|s| {
                let r = grid.wrap_distance(s, &c) / r0;
                if r >= 1.0 {
                    0.0
                } else {
                    match self.shape {
                        WeightShape::Bump => (-1.0 / (1.0 - r * r)).exp(),
                        WeightShape::CosineSquared => (0.5 * std::f64::consts::PI * r).cos().powi(2),
                    }
                }
            })
            .collect();
        let total: f64 = eta.iter().sum::<f64>() * grid.cell_volume();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight support radius {r0} contains no lattice site"
            )));
        }
        eta.iter_mut().for_each(|v| *v /= total);
        Ok(eta)
    }
}

/// `A^{RVE,eta,T} Xi = sum h^d eta (A(omega, xi + D+phi^T) . Xi - phi^T . phi*_Xi / T)`
/// for every basis direction `Xi`, with `phi*_Xi` the adjoint linearized
/// corrector.
pub fn rve_localized(
    omega: &ParameterField,
    fam: &OperatorFamily,
    xi: &[f64],
    t: f64,
    weight: &WeightSpec,
    tol: f64,
) -> Result<RveEstimate> {
    Ok(rve_localized_weights(omega, fam, xi, t, std::slice::from_ref(weight), tol)?.remove(0))
}

/// Same correctors, several weights.
pub fn rve_localized_weights(
    omega: &ParameterField,
    fam: &OperatorFamily,
    xi: &[f64],
    t: f64,
    weights: &[WeightSpec],
    tol: f64,
) -> Result<Vec<RveEstimate>> {
    let grid = *omega.grid();
    let eps = omega.epsilon();
    let l = grid.length();
    if !(t >= 2.0 * eps * eps * (1.0 - 1e-12) && t <= (l / 8.0).powi(2) * (1.0 + 1e-12)) {
        return Err(Error::AssumptionViolated(format!(
            "T = {t} outside [2 eps^2, (L/8)^2] = [{}, {}]",
            2.0 * eps * eps,
            (l / 8.0).powi(2)
        )));
    }
    let etas = weights.iter().map(|w| w.discretize(&grid)).collect::<Result<Vec<_>>>()?;
    let set = CorrectorProblem::new(omega, fam, xi)
        .localized(t)
        .solve(&SolverOptions::with_tol(tol))?;
    let m = fam.m();
    let d = grid.dim();
    let md = m * d;
    let hd = grid.cell_volume();
    let phi = set.phi.values();
    let q = set.flux.values();
    let mut values = vec![vec![0.0; md]; weights.len()];
    let mut krylov = set.stats.krylov_iterations;
    let mut basis = vec![0.0; md];
    for c in 0..md {
        basis.iter_mut().for_each(|v| *v = 0.0);
        basis[c] = 1.0;
        let adj = solve_linearized_corrector(&set, &basis, true, tol)?;
        krylov += adj.iterations;
        let ps = adj.phi.values();
        for (eta, val) in etas.iter().zip(values.iter_mut()) {
            let mut acc = 0.0;
            for (s, &e) in eta.iter().enumerate() {
                if e == 0.0 {
                    continue;
                }
                let pp: f64 = (0..m).map(|i| phi[s * m + i] * ps[s * m + i]).sum();
                acc += e * (q[s * md + c] - pp / t);
            }
            val[c] = acc * hd;
        }
    }
    Ok(weights
        .iter()
        .zip(values)
        .map(|(w, v)| {
            let mut est = estimate(RveKind::Localized, omega, xi, v, Some(t));
            est.weight = Some(*w);
            est.residual = set.residual_norm;
            est.newton_iterations = set.stats.newton_iterations;
            est.krylov_iterations = krylov;
            est
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{make_linear, make_rational_uhlenbeck};
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
    fn periodic_two_phase_is_harmonic_mean() {
        let (omega, fam) = two_phase(512);
        let r = rve_periodic(&omega, &fam, &[1.0], 1e-10).unwrap();
        assert!((r.value[0] - 4.0 / 3.0).abs() < 1e-9);
        let z = rve_periodic(&omega, &fam, &[0.0], 1e-10).unwrap();
        assert_eq!(z.value[0], 0.0);
    }

    #[test]
    fn constant_medium_is_exact() {
        let g = PeriodicGrid::new(2, 64, 8.0).unwrap();
        let omega = ParameterField::constant(g, &[0.3], 0.5).unwrap();
        let fam = make_rational_uhlenbeck(1, 2);
        let xi = [0.6, -0.8];
        let a = fam.apply(&[0.3], &xi);
        let p = rve_periodic(&omega, &fam, &xi, 1e-10).unwrap();
        assert!((p.value[0] - a[0]).abs() < 1e-12 && (p.value[1] - a[1]).abs() < 1e-12);
        let l = rve_localized(&omega, &fam, &xi, 0.75, &WeightSpec::default(), 1e-10).unwrap();
        // Actions on e_1, e_2 reproduce the components of A(omega, xi).
        assert!((l.value[0] - a[0]).abs() < 1e-10, "{:?} vs {a:?}", l.value);
        assert!((l.value[1] - a[1]).abs() < 1e-10);
    }

    #[test]
    fn weights_integrate_to_one() {
        let g = PeriodicGrid::new(2, 64, 8.0).unwrap();
        for w in [
            WeightSpec::new(WeightShape::Bump, 0.125),
            WeightSpec::new(WeightShape::CosineSquared, 0.0625),
        ] {
            let eta = w.discretize(&g).unwrap();
            let total: f64 = eta.iter().sum::<f64>() * g.cell_volume();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(eta.iter().all(|v| *v >= 0.0));
            let c = g.center();
            for (s, v) in eta.iter().enumerate() {
                if g.wrap_distance(s, &c) >= w.radius_fraction * 8.0 {
                    assert_eq!(*v, 0.0);
                }
            }
        }
        assert!(WeightSpec::new(WeightShape::Bump, 0.2).discretize(&g).is_err());
    }

    #[test]
    fn localized_rejects_t_out_of_range() {
        let g = PeriodicGrid::new(1, 64, 8.0).unwrap();
        let omega = ParameterField::constant(g, &[0.3], 0.5).unwrap();
        let fam = make_rational_uhlenbeck(1, 1);
        assert!(rve_localized(&omega, &fam, &[1.0], 0.1, &WeightSpec::default(), 1e-9).is_err());
        assert!(rve_localized(&omega, &fam, &[1.0], 2.0, &WeightSpec::default(), 1e-9).is_err());
    }

    #[test]
    fn localized_krylov_tolerance_is_stable() {
        let g = PeriodicGrid::new(1, 256, 32.0).unwrap();
        let omega = FieldSpec::new(0.5, KernelShape::GaussianBump, ClampSpec::default())
            .sample(&g, 8)
            .unwrap();
        let fam = make_rational_uhlenbeck(1, 1);
        let a = rve_localized(&omega, &fam, &[1.0], 4.0, &WeightSpec::default(), 1e-9).unwrap();
        let b = rve_localized(&omega, &fam, &[1.0], 4.0, &WeightSpec::default(), 1e-11).unwrap();
        assert!((a.value[0] - b.value[0]).abs() <= 1e-7 * b.value[0].abs());
    }
}
