//! Seed-parallel Monte Carlo drivers for the RVE error experiments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::oracle::{mean_inverse_1d, quadrature_reference};
use super::{rve_localized_weights, rve_periodic, RveEstimate, WeightSpec};
use crate::error::{Error, Result};
use crate::grid::PeriodicGrid;
use crate::harness::fit::{fit_rate, RateFit};
use crate::harness::seed_stream;
use crate::material::OperatorFamily;
use crate::randomfield::{FieldSpec, ParameterField};

fn one() -> usize {
    1
}
fn four() -> usize {
    4
}
fn default_tol() -> f64 {
    1e-9
}

/// Family, field law and lattice resolution shared by all samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub d: usize,
    #[serde(default = "one")]
    pub m: usize,
    pub family: String,
    pub field: FieldSpec,
    /// `epsilon / h`.
    #[serde(default = "four")]
    pub points_per_epsilon: usize,
    pub xi: Vec<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl EnsembleSpec {
    pub fn family(&self) -> Result<OperatorFamily> {
        let fam = OperatorFamily::from_spec(&self.family, self.m, self.d)?;
        if self.xi.len() != fam.md() {
            return Err(Error::shape(format!("xi with {} entries", fam.md()), format!("{}", self.xi.len())));
        }
        Ok(fam)
    }

    pub fn spacing(&self) -> f64 {
        self.field.epsilon / self.points_per_epsilon as f64
    }

    /// Torus of period `l_over_eps * epsilon` at the ensemble resolution.
    pub fn grid(&self, l_over_eps: f64) -> Result<PeriodicGrid> {
        let n = l_over_eps * self.points_per_epsilon as f64;
        if (n - n.round()).abs() > 1e-9 || n < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "L/eps = {l_over_eps} with {} points per eps does not give an integer lattice",
                self.points_per_epsilon
            )));
        }
        let n = n.round() as usize;
        PeriodicGrid::new(self.d, n, n as f64 * self.spacing())
    }

    pub fn sample(&self, grid: &PeriodicGrid, seed: u64) -> Result<ParameterField> {
        self.field.sample(grid, seed)
    }
}

fn task_seed(base: u64, level: usize, i: usize) -> u64 {
    seed_stream(base, ((level as u64) << 32) | i as u64)
}

fn wrap<T>(task: impl FnOnce() -> String, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Task {
        task: task(),
        source: Box::new(e),
    })
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mu = v.iter().sum::<f64>() / n;
    let var = if n > 1.0 {
        v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mu, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelStats {
    pub l_over_eps: f64,
    pub l: f64,
    pub n: usize,
    pub seeds: usize,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub se: Vec<f64>,
}

fn level_stats(l_over_eps: f64, grid: &PeriodicGrid, est: &[RveEstimate]) -> LevelStats {
    let nc = est[0].value.len();
    let mut mean = vec![0.0; nc];
    let mut sd = vec![0.0; nc];
    let mut se = vec![0.0; nc];
    for c in 0..nc {
        let v: Vec<f64> = est.iter().map(|e| e.value[c]).collect();
        let (m, s) = mean_sd(&v);
        mean[c] = m;
        sd[c] = s;
        se[c] = s / (v.len() as f64).sqrt();
    }
    LevelStats {
        l_over_eps,
        l: grid.length(),
        n: grid.n(),
        seeds: est.len(),
        mean,
        sd,
        se,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluctuationConfig {
    pub ensemble: EnsembleSpec,
    pub l_over_eps: Vec<f64>,
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub component: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FluctuationResult {
    pub levels: Vec<LevelStats>,
    /// `log sd` against `log(L/eps)`; `None` when some sd vanishes.
    pub fit: Option<RateFit>,
    #[serde(skip)]
    pub estimates: Vec<RveEstimate>,
}

fn periodic_level(ens: &EnsembleSpec, fam: &OperatorFamily, level: usize, loe: f64, seeds: usize, base: u64) -> Result<(PeriodicGrid, Vec<RveEstimate>)> {
    let grid = ens.grid(loe)?;
    let est = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let seed = task_seed(base, level, i);
            wrap(
                || format!("periodic RVE L/eps={loe} seed={seed}"),
                ens.sample(&grid, seed).and_then(|w| rve_periodic(&w, fam, &ens.xi, ens.tol)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, est))
}

/// Standard deviation of the periodic RVE across seeds as a function of `L/eps`.
pub fn fluctuation_experiment(cfg: &FluctuationConfig) -> Result<FluctuationResult> {
    let fam = cfg.ensemble.family()?;
    if cfg.seeds == 0 {
        return Err(Error::InvalidArgument("need at least one seed per level".into()));
    }
    if cfg.seeds < 100 {
        log::warn!("{} seeds per level; standard deviations will be noisy", cfg.seeds);
    }
    if cfg.component >= fam.md() {
        return Err(Error::InvalidArgument(format!("component {} out of range", cfg.component)));
    }
    let mut levels = Vec::new();
    let mut all = Vec::new();
    for (li, &loe) in cfg.l_over_eps.iter().enumerate() {
        let (grid, est) = periodic_level(&cfg.ensemble, &fam, li, loe, cfg.seeds, cfg.base_seed)?;
        levels.push(level_stats(loe, &grid, &est));
        all.extend(est);
    }
    let pairs: Vec<(f64, f64)> = levels.iter().map(|l| (l.l_over_eps, l.sd[cfg.component])).collect();
    let fit = if pairs.iter().all(|p| p.1 > 0.0) && pairs.len() >= 3 {
        Some(fit_rate(&pairs)?)
    } else {
        None
    };
    Ok(FluctuationResult {
        levels,
        fit,
        estimates: all,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReferenceSpec {
    /// Infinite-volume limit at fixed lattice from the one-point law
    /// (`d = m = 1` only).
    Quadrature,
    /// Mean of periodic RVEs on a larger torus, with jack-knife error.
    LargeRve { l_over_eps: f64, seeds: usize },
    Value { value: f64, se: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystematicConfig {
    pub ensemble: EnsembleSpec,
    pub l_over_eps: Vec<f64>,
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub component: usize,
    pub reference: ReferenceSpec,
    /// Add the exactly centered statistic `(mean_x g(omega, q_ref) - xi) / E[g']`
    /// to each sample (quadrature reference only).
    #[serde(default)]
    pub control_variate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SystematicRow {
    pub l_over_eps: f64,
    pub l: f64,
    pub n: usize,
    pub seeds: usize,
    /// Mean of the (possibly control-variate adjusted) estimator.
    pub mean: f64,
    pub se: f64,
    /// Per-sample standard deviation of the raw RVE.
    pub sd: f64,
    pub bias: f64,
    pub bias_se: f64,
    pub raw_mean: f64,
    pub raw_se: f64,
    /// `|bias| > 2 bias_se`.
    pub resolved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SystematicResult {
    pub reference: f64,
    pub reference_se: f64,
    pub rows: Vec<SystematicRow>,
    /// `log |bias|` against `log(L/eps)` over all levels.
    pub fit: Option<RateFit>,
    /// Fewer than three levels have a bias resolved above the noise.
    pub inconclusive: bool,
    /// `|bias| < sd` at the largest `L`.
    pub bias_below_sd_at_largest: bool,
}

/// Bias of the seed-mean periodic RVE against a reference effective flux.
pub fn systematic_experiment(cfg: &SystematicConfig) -> Result<SystematicResult> {
    let ens = &cfg.ensemble;
    let fam = ens.family()?;
    if cfg.seeds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 seeds per level, got {}", cfg.seeds)));
    }
    let c = cfg.component;
    if c >= fam.md() {
        return Err(Error::InvalidArgument(format!("component {c} out of range")));
    }
    let root_tol = 1e-13;
    let mut cv = None;
    let (reference, reference_se) = match &cfg.reference {
        ReferenceSpec::Quadrature => {
            if ens.d != 1 || ens.m != 1 || ens.field.k != 1 {
                return Err(Error::InvalidArgument("quadrature reference needs d = m = k = 1".into()));
            }
            let r = quadrature_reference(&fam, &ens.field.clamp, ens.xi[0], root_tol)?;
            if cfg.control_variate {
                cv = Some(r);
            }
            (r.q, 0.0)
        }
        ReferenceSpec::LargeRve { l_over_eps, seeds } => {
            let max = cfg.l_over_eps.iter().cloned().fold(0.0, f64::max);
            if *l_over_eps < 8.0 * max {
                log::warn!("reference L/eps = {l_over_eps} is below 8 x the largest L/eps = {max}");
            }
            let (_, est) = periodic_level(ens, &fam, usize::MAX >> 33, *l_over_eps, *seeds, cfg.base_seed)?;
            let v: Vec<f64> = est.iter().map(|e| e.value[c]).collect();
            let n = v.len() as f64;
            let total: f64 = v.iter().sum();
            let jk: Vec<f64> = v.iter().map(|x| (total - x) / (n - 1.0)).collect();
            let jm = jk.iter().sum::<f64>() / n;
            let jvar = (n - 1.0) / n * jk.iter().map(|x| (x - jm).powi(2)).sum::<f64>();
            (total / n, jvar.sqrt())
        }
        ReferenceSpec::Value { value, se } => (*value, *se),
    };
    if cfg.control_variate && cv.is_none() {
        return Err(Error::InvalidArgument("control variate needs the quadrature reference".into()));
    }

    let mut rows = Vec::new();
    for (li, &loe) in cfg.l_over_eps.iter().enumerate() {
        let grid = ens.grid(loe)?;
        let samples: Vec<(f64, f64)> = (0..cfg.seeds)
            .into_par_iter()
            .map(|i| {
                let seed = task_seed(cfg.base_seed, li, i);
                wrap(
                    || format!("periodic RVE L/eps={loe} seed={seed}"),
                    (|| {
                        let w = ens.sample(&grid, seed)?;
                        let raw = rve_periodic(&w, &fam, &ens.xi, ens.tol)?.value[c];
                        let adj = match &cv {
                            Some(r) => raw + (mean_inverse_1d(&w, &fam, r.q, root_tol)? - r.xi) / r.dg_dq,
                            None => raw,
                        };
                        Ok((raw, adj))
                    })(),
                )
            })
            .collect::<Result<_>>()?;
        let raw: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let adj: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let sqn = (cfg.seeds as f64).sqrt();
        let (raw_mean, sd) = mean_sd(&raw);
        let (mean, adj_sd) = mean_sd(&adj);
        let se = adj_sd / sqn;
        let bias = mean - reference;
        let bias_se = (se * se + reference_se * reference_se).sqrt();
        rows.push(SystematicRow {
            l_over_eps: loe,
            l: grid.length(),
            n: grid.n(),
            seeds: cfg.seeds,
            mean,
            se,
            sd,
            bias,
            bias_se,
            raw_mean,
            raw_se: sd / sqn,
            resolved: bias.abs() > 2.0 * bias_se,
        });
    }
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.l_over_eps, r.bias.abs())).collect();
    let fit = if pairs.len() >= 3 && pairs.iter().all(|p| p.1 > 0.0) {
        Some(fit_rate(&pairs)?)
    } else {
        None
    };
    let inconclusive = rows.iter().filter(|r| r.resolved).count() < 3;
    let largest = rows
        .iter()
        .max_by(|a, b| a.l.total_cmp(&b.l))
        .ok_or_else(|| Error::InvalidArgument("no levels given".into()))?;
    Ok(SystematicResult {
        reference,
        reference_se,
        bias_below_sd_at_largest: largest.bias.abs() < largest.sd,
        rows,
        fit,
        inconclusive,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub ensemble: EnsembleSpec,
    pub l_over_eps: f64,
    /// `T / eps^2`.
    pub t_over_eps2: f64,
    pub weights: Vec<WeightSpec>,
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub component: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightResult {
    pub t: f64,
    pub l: f64,
    pub seeds: usize,
    pub means: Vec<f64>,
    pub ses: Vec<f64>,
    /// `mean_0 - mean_1`.
    pub difference: f64,
    /// `sqrt(se_0^2 + se_1^2)`.
    pub combined_se: f64,
    /// Standard error of the seed-paired difference.
    pub paired_se: f64,
    /// `|difference| <= 3 combined_se`.
    pub pass: bool,
}

/// Localized RVE with two weights on the same samples.
pub fn weight_experiment(cfg: &WeightConfig) -> Result<WeightResult> {
    let ens = &cfg.ensemble;
    let fam = ens.family()?;
    if cfg.weights.len() != 2 {
        return Err(Error::InvalidArgument(format!("need exactly two weights, got {}", cfg.weights.len())));
    }
    if cfg.seeds < 2 {
        return Err(Error::InvalidArgument("need at least 2 seeds".into()));
    }
    let grid = ens.grid(cfg.l_over_eps)?;
    let t = cfg.t_over_eps2 * ens.field.epsilon.powi(2);
    let c = cfg.component;
    let vals: Vec<(f64, f64)> = (0..cfg.seeds)
        .into_par_iter()
        .map(|i| {
            let seed = task_seed(cfg.base_seed, 0, i);
            wrap(
                || format!("localized RVE T={t} seed={seed}"),
                ens.sample(&grid, seed).and_then(|w| {
                    let est = rve_localized_weights(&w, &fam, &ens.xi, t, &cfg.weights, ens.tol)?;
                    Ok((est[0].value[c], est[1].value[c]))
                }),
            )
        })
        .collect::<Result<_>>()?;
    let sqn = (cfg.seeds as f64).sqrt();
    let a: Vec<f64> = vals.iter().map(|v| v.0).collect();
    let b: Vec<f64> = vals.iter().map(|v| v.1).collect();
    let diff: Vec<f64> = vals.iter().map(|v| v.0 - v.1).collect();
    let (ma, sa) = mean_sd(&a);
    let (mb, sb) = mean_sd(&b);
    let (_, sd) = mean_sd(&diff);
    let combined_se = ((sa * sa + sb * sb) / cfg.seeds as f64).sqrt();
    Ok(WeightResult {
        t,
        l: grid.length(),
        seeds: cfg.seeds,
        means: vec![ma, mb],
        ses: vec![sa / sqn, sb / sqn],
        difference: ma - mb,
        combined_se,
        paired_se: sd / sqn,
        pass: (ma - mb).abs() <= 3.0 * combined_se,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalizedBiasRow {
    pub t: f64,
    pub mean_localized: f64,
    pub mean_periodic: f64,
    /// Seed-paired `localized - periodic`.
    pub difference: f64,
    pub difference_se: f64,
}

/// Paired comparison of localized and periodic RVEs on the same torus for a
/// sweep of `T`.
pub fn localized_bias_sweep(
    ens: &EnsembleSpec,
    l_over_eps: f64,
    t_over_eps2: &[f64],
    weight: &WeightSpec,
    seeds: usize,
    base_seed: u64,
    component: usize,
) -> Result<Vec<LocalizedBiasRow>> {
    let fam = ens.family()?;
    let grid = ens.grid(l_over_eps)?;
    let eps2 = ens.field.epsilon.powi(2);
    let per_seed: Vec<(f64, Vec<f64>)> = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let seed = task_seed(base_seed, 0, i);
            wrap(
                || format!("localized sweep seed={seed}"),
                (|| {
                    let w = ens.sample(&grid, seed)?;
                    let p = rve_periodic(&w, &fam, &ens.xi, ens.tol)?.value[component];
                    let loc = t_over_eps2
                        .iter()
                        .map(|&r| {
                            rve_localized_weights(&w, &fam, &ens.xi, r * eps2, std::slice::from_ref(weight), ens.tol)
                                .map(|e| e[0].value[component])
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok((p, loc))
                })(),
            )
        })
        .collect::<Result<_>>()?;
    let sqn = (seeds as f64).sqrt();
    let per: Vec<f64> = per_seed.iter().map(|s| s.0).collect();
    let mean_periodic = mean_sd(&per).0;
    Ok(t_over_eps2
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let loc: Vec<f64> = per_seed.iter().map(|s| s.1[k]).collect();
            let diff: Vec<f64> = per_seed.iter().map(|s| s.1[k] - s.0).collect();
            let (md, sd) = mean_sd(&diff);
            LocalizedBiasRow {
                t: r * eps2,
                mean_localized: mean_sd(&loc).0,
                mean_periodic,
                difference: md,
                difference_se: sd / sqn,
            }
        })
        .collect())
}
