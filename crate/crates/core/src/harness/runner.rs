//! Dispatch of an [`ExperimentConfig`] to its module, persistence of the
//! results and acceptance thresholds.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{ExperimentConfig, ExperimentKind, LawSpec};
use super::{fit_rate, seed_stream, RateFit};
use crate::corrector::localization_gap;
use crate::error::{Error, Result};
use crate::homog::{
    fluctuation_experiment, rve_periodic, structure_checks, systematic_experiment, weight_experiment,
    EffectiveLaw, EnsembleSpec, FluctuationConfig, StructureConfig, SystematicConfig, WeightConfig,
};
use crate::material::sample_ball;
use crate::randomfield::empirical_spectral_gap_ratio;
use crate::twoscale::{homogenization_error_experiment, DeltaRule, Domain, HomogenizationErrorConfig};

pub const VERSION: &str = concat!("homolab-", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Worker threads; `None` uses the rayon default.
    pub workers: Option<usize>,
    /// Overrides `output_dir` of the config.
    pub out_dir: Option<PathBuf>,
    pub check: bool,
}

/// One acceptance threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: String,
    pub pass: bool,
}

impl Check {
    fn range(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold: format!("[{lo}, {hi}]"),
            pass: value >= lo && value <= hi,
        }
    }

    fn at_most(name: &str, value: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold: format!("<= {hi}"),
            pass: value <= hi,
        }
    }

    fn at_least(name: &str, value: f64, lo: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold: format!(">= {lo}"),
            pass: value >= lo,
        }
    }

    fn flag(name: &str, pass: bool) -> Self {
        Self {
            name: name.into(),
            value: if pass { 1.0 } else { 0.0 },
            threshold: "true".into(),
            pass,
        }
    }
}

/// CSV payload: provenance columns followed by experiment columns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

const PROVENANCE: [&str; 8] = ["version", "kind", "d", "n", "l", "epsilon", "tol", "seed"];

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";")
}

struct Prov<'a> {
    cfg: &'a ExperimentConfig,
}

impl Prov<'_> {
    fn cells(&self, n: usize, l: f64, epsilon: f64, seed: Option<u64>) -> Vec<String> {
        vec![
            VERSION.into(),
            self.cfg.kind.as_str().into(),
            self.cfg.grid.d.to_string(),
            n.to_string(),
            num(l),
            num(epsilon),
            num(self.cfg.tolerances.solver),
            seed.map(|s| s.to_string()).unwrap_or_default(),
        ]
    }
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self {
            headers: PROVENANCE.iter().chain(columns).map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, mut prov: Vec<String>, cells: Vec<String>) {
        prov.extend(cells);
        debug_assert_eq!(prov.len(), self.headers.len());
        self.rows.push(prov);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

/// Everything an experiment produced.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub table: Table,
    pub summary: Value,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub outcome: Outcome,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.outcome.passed()
    }
}

fn ensemble(cfg: &ExperimentConfig) -> EnsembleSpec {
    EnsembleSpec {
        d: cfg.grid.d,
        m: cfg.grid.m,
        family: cfg.family.name.clone(),
        field: cfg.field,
        points_per_epsilon: cfg.grid.points_per_epsilon,
        xi: cfg.sweep.xi.clone(),
        tol: cfg.tolerances.solver,
    }
}

fn slope_window(cfg: &ExperimentConfig, lo: f64, hi: f64) -> (f64, f64) {
    (cfg.check.slope_min.unwrap_or(lo), cfg.check.slope_max.unwrap_or(hi))
}

fn fit_checks(cfg: &ExperimentConfig, name: &str, fit: Option<&RateFit>, lo: f64, hi: f64) -> Vec<Check> {
    let (lo, hi) = slope_window(cfg, lo, hi);
    let mut out = vec![match fit {
        Some(f) => Check::range(name, f.slope, lo, hi),
        None => Check {
            name: name.into(),
            value: f64::NAN,
            threshold: format!("[{lo}, {hi}]"),
            pass: false,
        },
    }];
    if let (Some(r2), Some(f)) = (cfg.check.min_r2, fit) {
        out.push(Check::at_least("r2", f.r2, r2));
    }
    out
}

/// Runs the experiment in memory, on a pool of `workers` threads when given.
pub fn execute(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<Outcome> {
    cfg.validate()?;
    match workers {
        Some(w) => {
            if w == 0 {
                return Err(Error::config("--workers", "must be at least 1"));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            pool.install(|| dispatch(cfg))
        }
        None => dispatch(cfg),
    }
}

/// Runs the experiment and writes `<stem>.csv` and `<stem>.summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    let outcome = execute(cfg, opts.workers)?;
    let dir = opts
        .out_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)?;
    let stem = cfg.name.clone().unwrap_or_else(|| cfg.kind.as_str().to_string());
    let csv = dir.join(format!("{stem}.csv"));
    let summary = dir.join(format!("{stem}.summary.json"));
    outcome.table.write_csv(&csv)?;
    let doc = json!({
        "version": VERSION,
        "kind": cfg.kind.as_str(),
        "name": stem,
        "config": cfg,
        "result": outcome.summary,
        "checks": outcome.checks,
        "passed": outcome.passed(),
        "check_mode": opts.check,
    });
    std::fs::write(&summary, serde_json::to_string_pretty(&doc)?)?;
    Ok(RunReport { csv, summary, outcome })
}

fn dispatch(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.kind {
        ExperimentKind::Fluctuation => fluctuation(cfg),
        ExperimentKind::Systematic => systematic(cfg),
        ExperimentKind::Localization => localization(cfg),
        ExperimentKind::HomogenizationError => homogenization(cfg),
        ExperimentKind::Structure => structure(cfg),
        ExperimentKind::SpectralGap => spectral_gap(cfg),
        ExperimentKind::Weight => weight(cfg),
    }
}

fn fluctuation(cfg: &ExperimentConfig) -> Result<Outcome> {
    let fc = FluctuationConfig {
        ensemble: ensemble(cfg),
        l_over_eps: cfg.sweep.l_over_eps.clone(),
        seeds: cfg.n_samples,
        base_seed: cfg.base_seed,
        component: cfg.component,
    };
    let r = fluctuation_experiment(&fc)?;
    let p = Prov { cfg };
    let eps = cfg.field.epsilon;
    let mut t = Table::new(&["l_over_eps", "value", "residual"]);
    for e in &r.estimates {
        t.push(
            p.cells(e.n, e.l, eps, e.seed),
            vec![num(e.l / eps), list(&e.value), num(e.residual)],
        );
    }
    let half = cfg.grid.d as f64 / 2.0;
    let checks = fit_checks(cfg, "sd_slope", r.fit.as_ref(), -1.3 * half, -0.7 * half);
    Ok(Outcome {
        table: t,
        summary: serde_json::to_value(&r)?,
        checks,
    })
}

fn systematic(cfg: &ExperimentConfig) -> Result<Outcome> {
    let opts = cfg.systematic.as_ref().expect("validated");
    let sc = SystematicConfig {
        ensemble: ensemble(cfg),
        l_over_eps: cfg.sweep.l_over_eps.clone(),
        seeds: cfg.n_samples,
        base_seed: cfg.base_seed,
        component: cfg.component,
        reference: opts.reference.clone(),
        control_variate: opts.control_variate,
    };
    let r = systematic_experiment(&sc)?;
    let p = Prov { cfg };
    let eps = cfg.field.epsilon;
    let mut t = Table::new(&[
        "l_over_eps", "seeds", "mean", "se", "sd", "bias", "bias_se", "raw_mean", "raw_se", "resolved", "reference",
    ]);
    for row in &r.rows {
        t.push(
            p.cells(row.n, row.l, eps, None),
            vec![
                num(row.l_over_eps),
                row.seeds.to_string(),
                num(row.mean),
                num(row.se),
                num(row.sd),
                num(row.bias),
                num(row.bias_se),
                num(row.raw_mean),
                num(row.raw_se),
                row.resolved.to_string(),
                num(r.reference),
            ],
        );
    }
    let (_, hi) = slope_window(cfg, f64::NEG_INFINITY, -0.8);
    let mut checks = vec![match &r.fit {
        Some(f) => Check::at_most("bias_slope", f.slope, hi),
        None => Check {
            name: "bias_slope".into(),
            value: f64::NAN,
            threshold: format!("<= {hi}"),
            pass: false,
        },
    }];
    checks.push(Check::flag("bias_below_sd_at_largest_l", r.bias_below_sd_at_largest));
    Ok(Outcome {
        table: t,
        summary: serde_json::to_value(&r)?,
        checks,
    })
}

#[derive(Clone, Debug, Serialize)]
struct LocalizationLevel {
    t: f64,
    t_over_eps2: f64,
    mean_gap: f64,
    se_gap: f64,
    samples: usize,
}

fn localization(cfg: &ExperimentConfig) -> Result<Outcome> {
    let ens = ensemble(cfg);
    let fam = cfg.family()?;
    let eps = cfg.field.epsilon;
    let grid = ens.grid(cfg.sweep.l_over_eps[0])?;
    let tasks: Vec<(usize, usize)> = (0..cfg.sweep.t_over_eps2.len())
        .flat_map(|j| (0..cfg.n_samples).map(move |i| (j, i)))
        .collect();
    // One field per seed, shared across the T sweep.
    let gaps: Vec<(u64, f64, f64, f64)> = tasks
        .par_iter()
        .map(|&(j, i)| {
            let seed = seed_stream(cfg.base_seed, i as u64);
            let t = cfg.sweep.t_over_eps2[j] * eps * eps;
            let r = ens
                .sample(&grid, seed)
                .and_then(|omega| localization_gap(&omega, &fam, &cfg.sweep.xi, t, cfg.tolerances.solver));
            r.map(|g| (seed, t, g.gradient_part, g.gap)).map_err(|e| Error::Task {
                task: format!("T/eps^2 = {}, seed = {seed}", cfg.sweep.t_over_eps2[j]),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let p = Prov { cfg };
    let mut table = Table::new(&["t_over_eps2", "t", "gradient_part", "gap"]);
    for (k, &(seed, t, gp, gap)) in gaps.iter().enumerate() {
        let j = tasks[k].0;
        table.push(
            p.cells(grid.n(), grid.length(), eps, Some(seed)),
            vec![num(cfg.sweep.t_over_eps2[j]), num(t), num(gp), num(gap)],
        );
    }
    let mut levels = Vec::new();
    for (j, &toe) in cfg.sweep.t_over_eps2.iter().enumerate() {
        let v: Vec<f64> = gaps
            .iter()
            .zip(&tasks)
            .filter(|(_, tk)| tk.0 == j)
            .map(|(g, _)| g.3)
            .collect();
        let n = v.len() as f64;
        let mu = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        levels.push(LocalizationLevel {
            t: toe * eps * eps,
            t_over_eps2: toe,
            mean_gap: mu,
            se_gap: (var / n).sqrt(),
            samples: v.len(),
        });
    }
    let fit = if levels.len() >= 3 && levels.iter().all(|l| l.mean_gap > 0.0) {
        Some(fit_rate(&levels.iter().map(|l| (l.t.sqrt(), l.mean_gap)).collect::<Vec<_>>())?)
    } else {
        None
    };
    let target = -(cfg.grid.d.min(4) as f64) / 2.0;
    let checks = fit_checks(cfg, "gap_slope", fit.as_ref(), target - 0.2, target + 0.2);
    Ok(Outcome {
        table,
        summary: json!({ "l": grid.length(), "n": grid.n(), "levels": levels, "fit": fit }),
        checks,
    })
}

/// Builds the reference law of a homogenization-error run.
pub fn reference_law(cfg: &ExperimentConfig) -> Result<EffectiveLaw> {
    let fam = cfg.family()?;
    let h = cfg.homogenization.as_ref().expect("validated");
    match &h.reference {
        LawSpec::SiteLaw { lo, hi, nodes } => EffectiveLaw::site_law_1d(&fam, &cfg.field.clamp, *lo, *hi, *nodes),
        LawSpec::Scalar { value } => Ok(EffectiveLaw::scalar(*value, fam.md())),
        LawSpec::LargeRve { l_over_eps, seeds } => {
            let md = fam.md();
            let mut ens = ensemble(cfg);
            ens.xi = vec![0.0; md];
            let grid = ens.grid(*l_over_eps)?;
            let vals: Vec<f64> = (0..*seeds)
                .into_par_iter()
                .map(|i| -> Result<f64> {
                    let omega = ens.sample(&grid, seed_stream(cfg.base_seed ^ 0x5eed_1a77, i as u64))?;
                    let mut acc = 0.0;
                    for c in 0..md {
                        let mut xi = vec![0.0; md];
                        xi[c] = 1.0;
                        acc += rve_periodic(&omega, &fam, &xi, cfg.tolerances.solver)?.value[c];
                    }
                    Ok(acc / md as f64)
                })
                .collect::<Result<_>>()?;
            Ok(EffectiveLaw::scalar(vals.iter().sum::<f64>() / vals.len() as f64, md))
        }
    }
}

fn homogenization(cfg: &ExperimentConfig) -> Result<Outcome> {
    let h = cfg.homogenization.as_ref().expect("validated");
    let reference = reference_law(cfg)?;
    let delta = h.delta.unwrap_or(match h.domain {
        Domain::Torus => DeltaRule::Epsilon,
        Domain::DirichletBox => DeltaRule::SqrtEpsilon,
    });
    let hc = HomogenizationErrorConfig {
        dim: cfg.grid.d,
        length: cfg.grid.length,
        eps_fractions: cfg.sweep.eps_fractions.clone(),
        points_per_eps: cfg.grid.points_per_epsilon,
        field: cfg.field,
        family: cfg.family()?,
        reference: reference.clone(),
        profile: h.profile.clone(),
        domain: h.domain,
        delta,
        n_samples: cfg.n_samples,
        base_seed: cfg.base_seed,
        tol: cfg.tolerances.solver,
        two_scale: h.two_scale,
    };
    let r = homogenization_error_experiment(&hc)?;
    let p = Prov { cfg };
    let mut t = Table::new(&[
        "l2_error",
        "lp_error",
        "residual",
        "delta",
        "tau",
        "energy_ratio",
        "h1_two_scale",
        "two_scale_residual",
    ]);
    for row in &r.rows {
        t.push(
            p.cells(row.n, cfg.grid.length, row.epsilon, Some(row.seed)),
            vec![
                num(row.l2_error),
                opt(row.lp_error),
                num(row.residual),
                num(row.delta),
                opt(row.tau),
                num(row.energy_ratio),
                opt(row.h1_two_scale),
                opt(row.two_scale_residual),
            ],
        );
    }
    let (lo, hi) = if cfg.grid.d == 1 { (0.35, 0.65) } else { (0.7, 1.3) };
    let mut checks = fit_checks(cfg, "error_slope", r.fit.as_ref(), lo, hi);
    checks.push(Check::at_most("max_energy_ratio", r.max_energy_ratio, 1.05));
    checks.push(Check::flag("error_monotone", r.monotone));
    Ok(Outcome {
        table: t,
        summary: json!({ "reference": reference, "result": r }),
        checks,
    })
}

fn structure(cfg: &ExperimentConfig) -> Result<Outcome> {
    let fam = cfg.family()?;
    let md = fam.md();
    let opts = cfg.structure.clone().unwrap_or_default();
    let mut pairs = opts.xi_pairs.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(cfg.base_seed, u64::MAX));
    for _ in 0..opts.random_pairs {
        pairs.push((sample_ball(&mut rng, md, 2.0), sample_ball(&mut rng, md, 2.0)));
    }
    let ens = ensemble(cfg);
    let grid = ens.grid(cfg.sweep.l_over_eps[0])?;
    let sampler = |seed: u64| ens.sample(&grid, seed);
    let sc = StructureConfig {
        xi_pairs: pairs,
        probes: opts.probes.clone(),
        frame_rotations: opts.frame_rotations.clone(),
        axis_permutations: opts.axis_permutations.clone(),
        n_samples: cfg.n_samples,
        base_seed: cfg.base_seed,
        tol: cfg.tolerances.solver,
    };
    let r = structure_checks(&fam, &sampler, &sc)?;
    let p = Prov { cfg };
    let mut t = Table::new(&["check", "label", "mean", "se", "z", "pass"]);
    for (kind, list_) in [("frame", &r.frame), ("isotropy", &r.isotropy)] {
        for c in list_.iter() {
            t.push(
                p.cells(grid.n(), grid.length(), cfg.field.epsilon, None),
                vec![kind.into(), c.label.clone(), list(&c.mean), list(&c.se), num(c.z), c.pass.to_string()],
            );
        }
    }
    t.push(
        p.cells(grid.n(), grid.length(), cfg.field.epsilon, None),
        vec![
            "monotonicity".into(),
            "min over samples and pairs".into(),
            num(r.monotonicity_min_realization),
            String::new(),
            String::new(),
            r.monotone_pass.to_string(),
        ],
    );
    t.push(
        p.cells(grid.n(), grid.length(), cfg.field.epsilon, None),
        vec![
            "lipschitz".into(),
            "max over samples and pairs".into(),
            num(r.lipschitz_max_realization),
            String::new(),
            String::new(),
            r.lipschitz_pass.to_string(),
        ],
    );
    let checks = vec![
        Check::at_least("monotonicity", r.monotonicity_min_realization, r.lambda * (1.0 - 1e-6)),
        Check::at_most("lipschitz", r.lipschitz_max_realization, r.lipschitz_bound * 1.05),
        Check::flag("frame_indifference", r.frame_pass),
        Check::flag("isotropy", r.isotropy_pass),
    ];
    Ok(Outcome {
        table: t,
        summary: serde_json::to_value(&r)?,
        checks,
    })
}

fn spectral_gap(cfg: &ExperimentConfig) -> Result<Outcome> {
    let ens = ensemble(cfg);
    let eps = cfg.field.epsilon;
    let grid = ens.grid(cfg.sweep.l_over_eps[0])?;
    let radii = &cfg.spectral_gap.as_ref().expect("validated").radii_over_eps;
    let est: Vec<_> = radii
        .par_iter()
        .map(|r| empirical_spectral_gap_ratio(|s| ens.sample(&grid, s), r * eps, cfg.base_seed, cfg.n_samples))
        .collect::<Result<_>>()?;
    let p = Prov { cfg };
    let mut t = Table::new(&["radius", "variance", "variance_se", "pointwise_variance", "ratio", "ratio_se"]);
    for e in &est {
        t.push(
            p.cells(grid.n(), grid.length(), eps, None),
            vec![
                num(e.radius),
                num(e.variance),
                num(e.variance_se),
                num(e.pointwise_variance),
                num(e.ratio),
                num(e.ratio_se),
            ],
        );
    }
    let mut checks: Vec<Check> = est
        .iter()
        .map(|e| Check::flag(&format!("ratio_finite_r{}", e.radius), e.ratio.is_finite()))
        .collect();
    // Doubling r divides the variance by about 2^d.
    let target = 2f64.powi(cfg.grid.d as i32);
    for w in est.windows(2) {
        if (w[1].radius / w[0].radius - 2.0).abs() < 1e-9 && w[1].variance > 0.0 {
            let q = w[0].variance / w[1].variance;
            let se = q * ((w[0].variance_se / w[0].variance).powi(2) + (w[1].variance_se / w[1].variance).powi(2)).sqrt();
            checks.push(Check::range(
                &format!("variance_ratio_r{}", w[0].radius),
                q,
                target - 3.0 * se,
                target + 3.0 * se,
            ));
        }
    }
    Ok(Outcome {
        table: t,
        summary: serde_json::to_value(&est)?,
        checks,
    })
}

fn weight(cfg: &ExperimentConfig) -> Result<Outcome> {
    let wc = WeightConfig {
        ensemble: ensemble(cfg),
        l_over_eps: cfg.sweep.l_over_eps[0],
        t_over_eps2: cfg.sweep.t_over_eps2[0],
        weights: cfg.weight.as_ref().expect("validated").weights.clone(),
        seeds: cfg.n_samples,
        base_seed: cfg.base_seed,
        component: cfg.component,
    };
    let r = weight_experiment(&wc)?;
    let ens = ensemble(cfg);
    let grid = ens.grid(wc.l_over_eps)?;
    let p = Prov { cfg };
    let mut t = Table::new(&["t", "weight", "mean", "se", "difference", "combined_se", "paired_se", "pass"]);
    for (i, w) in wc.weights.iter().enumerate() {
        t.push(
            p.cells(grid.n(), r.l, cfg.field.epsilon, None),
            vec![
                num(r.t),
                format!("{:?}:{}", w.shape, w.radius_fraction),
                num(r.means[i]),
                num(r.ses[i]),
                num(r.difference),
                num(r.combined_se),
                num(r.paired_se),
                r.pass.to_string(),
            ],
        );
    }
    let checks = vec![Check::at_most(
        "weight_difference",
        r.difference.abs(),
        3.0 * r.combined_se,
    )];
    Ok(Outcome {
        table: t,
        summary: serde_json::to_value(&r)?,
        checks,
    })
}

/// Reads columns `x` and `y` of a CSV file and fits `log y` against `log x`.
pub fn fit_csv(path: impl AsRef<Path>, x: &str, y: &str) -> Result<RateFit> {
    let mut rd = csv::Reader::from_path(path)?;
    let headers = rd.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no column named {name:?}")))
    };
    let (ix, iy) = (col(x)?, col(y)?);
    let mut pairs = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let parse = |j: usize, name: &str| -> Result<f64> {
            rec.get(j)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("row {}: column {name:?} is not a number", i + 1)))
        };
        pairs.push((parse(ix, x)?, parse(iy, y)?));
    }
    fit_rate(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fluct_cfg() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
kind = "fluctuation"
n_samples = 3
base_seed = 11

[grid]
d = 1

[field]
epsilon = 1.0

[family]
name = "linear:midpoint"

[sweep]
l_over_eps = [8, 16, 32]
xi = [1.0]
"#,
        )
        .unwrap()
    }

    #[test]
    fn fluctuation_smoke_and_determinism() {
        let cfg = fluct_cfg();
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            workers: Some(1),
            out_dir: Some(dir.path().to_path_buf()),
            check: false,
        };
        let a = run_experiment(&cfg, &opts).unwrap();
        assert_eq!(a.outcome.table.rows.len(), 9);
        let first = std::fs::read(&a.csv).unwrap();
        let b = run_experiment(
            &cfg,
            &RunOptions {
                workers: Some(3),
                ..opts
            },
        )
        .unwrap();
        assert_eq!(first, std::fs::read(&b.csv).unwrap());
        let s: Value = serde_json::from_str(&std::fs::read_to_string(&b.summary).unwrap()).unwrap();
        assert_eq!(s["kind"], "fluctuation");
        assert!(s["checks"].is_array());
    }

    #[test]
    fn fit_csv_reads_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "L,sd\n2,0.7071067811865476\n4,0.5\n8,0.3535533905932738\n16,0.25\n").unwrap();
        let f = fit_csv(&p, "L", "sd").unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!(fit_csv(&p, "L", "nope").is_err());
    }

    #[test]
    fn localization_levels() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
kind = "localization"
n_samples = 2

[grid]
d = 1

[field]
epsilon = 1.0

[family]
name = "rational_uhlenbeck"

[sweep]
l_over_eps = [128]
t_over_eps2 = [4, 16, 64]
xi = [1.0]
"#,
        )
        .unwrap();
        let o = execute(&cfg, Some(1)).unwrap();
        assert_eq!(o.table.rows.len(), 6);
        assert!(o.summary["fit"]["slope"].as_f64().unwrap() < 0.0);
    }
}
