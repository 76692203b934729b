//! Homogenization error `|| u_eps - u_hom ||` along an `eps` sweep.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::expansion::{two_scale_expand, ExpansionOptions};
use super::partition::build_partition;
use crate::corrector::{solve_monotone_problem, SolverOptions};
use crate::error::{Error, Result};
use crate::grid::{Boundary, DiscreteField, Neighbors, PeriodicGrid};
use crate::harness::{fit_rate, seed_stream, RateFit};
use crate::homog::EffectiveLaw;
use crate::material::OperatorFamily;
use crate::randomfield::{FieldSpec, ParameterField};

/// Smooth macroscopic profiles on `[0, L)^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// `a prod_i sin(2 pi k_i x_i / L)`; one entry of `modes` applies to every axis.
    FourierMode { amplitude: f64, modes: Vec<usize> },
    /// `a exp(-|x - c|^2 / (2 w^2))` around the center of the torus.
    GaussianBump { amplitude: f64, width: f64 },
    /// `a (1 - |x - c|^2 / r^2)^3` inside `B_r(c)`.
    PolyCutoff { amplitude: f64, radius: f64 },
    /// `a prod_i sin(pi x_i / L)`, vanishing on the box boundary.
    SineBox { amplitude: f64 },
}

impl Profile {
    pub fn sample(&self, grid: &PeriodicGrid, m: usize) -> Result<DiscreteField> {
        let d = grid.dim();
        let l = grid.length();
        let c = grid.center();
        let r2 = |x: &[f64; 3]| -> f64 {
            (0..d)
                .map(|a| {
                    let mut t = (x[a] - c[a]).rem_euclid(l);
                    if t > 0.5 * l {
                        t -= l;
                    }
                    t * t
                })
                .sum()
        };
        let scalar: Box<dyn Fn(&[f64; 3]) -> f64> = match self.clone() {
            Profile::FourierMode { amplitude, modes } => {
                if modes.is_empty() || (modes.len() != 1 && modes.len() != d) || modes.contains(&0) {
                    return Err(Error::InvalidArgument(format!(
                        "modes must hold one or {d} positive wave numbers, got {modes:?}"
                    )));
                }
                Box::new(move |x| {
                    amplitude
                        * (0..d)
                            .map(|a| (2.0 * PI * modes[a.min(modes.len() - 1)] as f64 * x[a] / l).sin())
                            .product::<f64>()
                })
            }
            Profile::GaussianBump { amplitude, width } => {
                if !(width > 0.0) {
                    return Err(Error::InvalidArgument(format!("width must be positive, got {width}")));
                }
                Box::new(move |x| amplitude * (-r2(x) / (2.0 * width * width)).exp())
            }
            Profile::PolyCutoff { amplitude, radius } => {
                if !(radius > 0.0 && radius <= 0.5 * l) {
                    return Err(Error::InvalidArgument(format!("radius must lie in (0, L/2], got {radius}")));
                }
                Box::new(move |x| {
                    let t = r2(x) / (radius * radius);
                    if t < 1.0 {
                        amplitude * (1.0 - t).powi(3)
                    } else {
                        0.0
                    }
                })
            }
            Profile::SineBox { amplitude } => {
                Box::new(move |x| amplitude * (0..d).map(|a| (PI * x[a] / l).sin()).product::<f64>())
            }
        };
        Ok(DiscreteField::from_fn(*grid, &[m], |x, v| {
            let s = scalar(x);
            v.iter_mut().for_each(|c| *c = s);
        }))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    #[default]
    Torus,
    /// Box `(0, L)^d` with zero Dirichlet data.
    DirichletBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum DeltaRule {
    Epsilon,
    SqrtEpsilon,
    Fixed(f64),
}

impl DeltaRule {
    pub fn delta(&self, eps: f64) -> f64 {
        match self {
            DeltaRule::Epsilon => eps,
            DeltaRule::SqrtEpsilon => eps.sqrt(),
            DeltaRule::Fixed(v) => *v,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HomogenizationErrorConfig {
    pub dim: usize,
    pub length: f64,
    /// `eps / L` values of the sweep.
    pub eps_fractions: Vec<f64>,
    /// Grid points per `eps`; `n = points_per_eps / eps_fraction`.
    pub points_per_eps: usize,
    pub field: FieldSpec,
    pub family: OperatorFamily,
    /// Reference effective law used to build the right-hand side.
    pub reference: EffectiveLaw,
    pub profile: Profile,
    pub domain: Domain,
    pub delta: DeltaRule,
    pub n_samples: usize,
    pub base_seed: u64,
    pub tol: f64,
    /// Also build the two-scale expansion and report `|| D+u_eps - D+u_hat ||`.
    pub two_scale: bool,
}

impl HomogenizationErrorConfig {
    /// Massive term: one for `d <= 2` on the torus, none otherwise.
    pub fn mass(&self) -> f64 {
        if self.domain == Domain::Torus && self.dim <= 2 {
            1.0
        } else {
            0.0
        }
    }

    pub fn grid_for(&self, eps_fraction: f64) -> Result<PeriodicGrid> {
        let n = self.points_per_eps as f64 / eps_fraction;
        if (n - n.round()).abs() > 1e-9 * n {
            return Err(Error::InvalidArgument(format!(
                "points_per_eps / eps_fraction = {n} is not an integer"
            )));
        }
        PeriodicGrid::new(self.dim, n.round() as usize, self.length)
    }

    fn validate(&self) -> Result<()> {
        if self.eps_fractions.is_empty() {
            return Err(Error::InvalidArgument("empty eps sweep".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
        }
        if self.points_per_eps < 4 {
            let eps = self.eps_fractions[0] * self.length;
            return Err(Error::UnderResolved {
                epsilon: eps,
                min: 4.0 * eps / self.points_per_eps as f64,
            });
        }
        if self.family.d() != self.dim || self.reference.md() != self.family.md() {
            return Err(Error::shape(
                format!("family and law on d = {}", self.dim),
                format!("family d = {}, law md = {}", self.family.d(), self.reference.md()),
            ));
        }
        if self.two_scale && self.domain != Domain::Torus {
            return Err(Error::InvalidArgument("two-scale diagnostic is only available on the torus".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorRow {
    pub epsilon: f64,
    pub seed: u64,
    pub n: usize,
    pub l2_error: f64,
    /// `L^{2d/(d-2)}` error for `d >= 3`.
    pub lp_error: Option<f64>,
    /// Final residual of the heterogeneous solve.
    pub residual: f64,
    pub delta: f64,
    /// Boundary layer `delta^2` on the box.
    pub tau: Option<f64>,
    /// `|| D+u_eps || / energy bound`.
    pub energy_ratio: f64,
    pub h1_two_scale: Option<f64>,
    pub two_scale_residual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorLevel {
    pub epsilon: f64,
    pub mean_l2: f64,
    pub se_l2: f64,
    pub mean_lp: Option<f64>,
    pub n_samples: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct HomogenizationErrorResult {
    pub rows: Vec<ErrorRow>,
    pub levels: Vec<ErrorLevel>,
    pub fit: Option<RateFit>,
    /// Seed-averaged error non-increasing as `eps` decreases, at 3 standard errors.
    pub monotone: bool,
    pub max_energy_ratio: f64,
    pub notes: Vec<String>,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mu = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mu, 0.0);
    }
    let var = v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0);
    (mu, (var / n).sqrt())
}

/// Runs the sweep with fields drawn from `cfg.field` (epsilon replaced per level).
pub fn homogenization_error_experiment(cfg: &HomogenizationErrorConfig) -> Result<HomogenizationErrorResult> {
    let spec = cfg.field;
    homogenization_error_with(cfg, &move |grid: &PeriodicGrid, eps: f64, seed: u64| {
        FieldSpec { epsilon: eps, ..spec }.sample(grid, seed)
    })
}

/// Same with a caller-supplied sampler `(grid, eps, seed) -> omega`.
pub fn homogenization_error_with(
    cfg: &HomogenizationErrorConfig,
    sampler: &(dyn Fn(&PeriodicGrid, f64, u64) -> Result<ParameterField> + Sync),
) -> Result<HomogenizationErrorResult> {
    cfg.validate()?;
    let mut tasks = Vec::new();
    for &frac in &cfg.eps_fractions {
        let grid = cfg.grid_for(frac)?;
        let eps = frac * cfg.length;
        if eps < 4.0 * grid.spacing() * (1.0 - 1e-12) {
            return Err(Error::UnderResolved {
                epsilon: eps,
                min: 4.0 * grid.spacing(),
            });
        }
        for i in 0..cfg.n_samples {
            tasks.push((grid, eps, seed_stream(cfg.base_seed, i as u64)));
        }
    }
    let rows: Vec<ErrorRow> = tasks
        .par_iter()
        .map(|&(grid, eps, seed)| {
            one_instance(cfg, sampler, &grid, eps, seed).map_err(|e| Error::Task {
                task: format!("eps = {eps}, seed = {seed}"),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut levels = Vec::new();
    for &frac in &cfg.eps_fractions {
        let eps = frac * cfg.length;
        let sel: Vec<&ErrorRow> = rows.iter().filter(|r| r.epsilon == eps).collect();
        let l2: Vec<f64> = sel.iter().map(|r| r.l2_error).collect();
        let (mean_l2, se_l2) = mean_se(&l2);
        let lp: Vec<f64> = sel.iter().filter_map(|r| r.lp_error).collect();
        levels.push(ErrorLevel {
            epsilon: eps,
            mean_l2,
            se_l2,
            mean_lp: (!lp.is_empty()).then(|| mean_se(&lp).0),
            n_samples: sel.len(),
        });
    }
    let mut sorted = levels.clone();
    sorted.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
    let monotone = sorted
        .windows(2)
        .all(|w| w[1].mean_l2 <= w[0].mean_l2 + 3.0 * (w[0].se_l2.powi(2) + w[1].se_l2.powi(2)).sqrt());
    let fit = if levels.len() >= 3 {
        Some(fit_rate(&levels.iter().map(|l| (l.epsilon, l.mean_l2)).collect::<Vec<_>>())?)
    } else {
        None
    };
    let max_energy_ratio = rows.iter().map(|r| r.energy_ratio).fold(0.0, f64::max);
    let mut notes = Vec::new();
    if cfg.dim >= 3 && cfg.domain == Domain::Torus {
        notes.push("d >= 3 runs use the torus without massive term and zero-mean data in place of the full space".into());
    }
    if cfg.domain == Domain::DirichletBox {
        notes.push("box runs use zero Dirichlet data and no boundary correctors".into());
    }
    Ok(HomogenizationErrorResult {
        rows,
        levels,
        fit,
        monotone,
        max_energy_ratio,
        notes,
    })
}

fn one_instance(
    cfg: &HomogenizationErrorConfig,
    sampler: &(dyn Fn(&PeriodicGrid, f64, u64) -> Result<ParameterField> + Sync),
    grid: &PeriodicGrid,
    eps: f64,
    seed: u64,
) -> Result<ErrorRow> {
    let fam = &cfg.family;
    let (m, d) = (fam.m(), grid.dim());
    let md = m * d;
    let ns = grid.num_sites();
    let hd = grid.cell_volume();
    let mass = cfg.mass();
    let boundary = match cfg.domain {
        Domain::Torus => Boundary::Periodic,
        Domain::DirichletBox => Boundary::Dirichlet,
    };
    let omega = sampler(grid, eps, seed)?;
    let mut u_hom = cfg.profile.sample(grid, m)?;
    if mass == 0.0 && boundary == Boundary::Periodic {
        u_hom = u_hom.centered();
    }
    boundary.mask(grid, u_hom.values_mut(), m);

    let nb = Neighbors::new(grid);
    let mut g = vec![0.0; ns * md];
    nb.gradient(u_hom.values(), m, &mut g);
    let mut flux = vec![0.0; ns * md];
    for s in 0..ns {
        let v = cfg.reference.eval(&g[s * md..(s + 1) * md])?;
        flux[s * md..(s + 1) * md].copy_from_slice(&v);
    }
    let mut rhs = vec![0.0; ns * m];
    nb.divergence(&flux, m, &mut rhs);
    for (r, u) in rhs.iter_mut().zip(u_hom.values()) {
        *r = -*r + mass * u;
    }
    boundary.mask(grid, &mut rhs, m);
    let rhs = DiscreteField::from_values(*grid, &[m], rhs)?;
    let opts = SolverOptions::with_tol(cfg.tol);
    let zero = vec![0.0; md];
    let (u, _q, stats) = solve_monotone_problem(&omega, fam, &zero, mass, Some(&rhs), boundary, None, &opts)?;

    let (mut e, mut u_eval) = (u.sub(&u_hom)?, u.clone());
    if mass == 0.0 && boundary == Boundary::Periodic {
        e = e.centered();
        u_eval = u_eval.centered();
    }
    let l2_error = (e.values().iter().map(|v| v * v).sum::<f64>() * hd).sqrt();
    let lp_error = (d >= 3).then(|| {
        let p = 2.0 * d as f64 / (d as f64 - 2.0);
        (e.values().iter().map(|v| v.abs().powf(p)).sum::<f64>() * hd).powf(1.0 / p)
    });

    // Testing with u: ||D+u||^2 <= ||F||^2 / lambda^2 + mass ||u_hom||^2 / lambda.
    let lambda = fam.lambda();
    let f2 = flux.iter().map(|v| v * v).sum::<f64>() * hd;
    let u2 = u_hom.values().iter().map(|v| v * v).sum::<f64>() * hd;
    let bound = (f2 / (lambda * lambda) + mass * u2 / lambda).sqrt();
    let grad_u = (nb.gradient_dot(u_eval.values(), u_eval.values(), m) * hd).sqrt();
    let energy_ratio = if bound > 0.0 { grad_u / bound } else { 0.0 };

    let delta = cfg.delta.delta(eps);
    let tau = (cfg.domain == Domain::DirichletBox).then_some(delta * delta);
    let (mut h1_two_scale, mut two_scale_residual) = (None, None);
    if cfg.two_scale {
        let pu = build_partition(grid, delta)?;
        let ex = two_scale_expand(
            &u_hom,
            &pu,
            &omega,
            fam,
            Some(&cfg.reference),
            &ExpansionOptions {
                tol: cfg.tol,
                ..Default::default()
            },
        )?;
        let diff = u.sub(&ex.u_hat)?;
        h1_two_scale = Some((nb.gradient_dot(diff.values(), diff.values(), m) * hd).sqrt());
        two_scale_residual = Some(ex.residual_norm());
    }
    Ok(ErrorRow {
        epsilon: eps,
        seed,
        n: grid.n(),
        l2_error,
        lp_error,
        residual: stats.residual,
        delta,
        tau,
        energy_ratio,
        h1_two_scale,
        two_scale_residual,
    })
}
