//! Monotonicity, Lipschitz bound, frame indifference and isotropy of the
//! estimated effective law.

use rayon::prelude::*;
use serde::Serialize;

use super::rve_periodic;
use crate::error::{Error, Result};
use crate::harness::seed_stream;
use crate::material::OperatorFamily;
use crate::randomfield::ParameterField;

#[derive(Clone, Debug, Default)]
pub struct StructureConfig {
    pub xi_pairs: Vec<(Vec<f64>, Vec<f64>)>,
    /// Slopes on which the symmetry checks run.
    pub probes: Vec<Vec<f64>>,
    /// Row-major `m x m` rotations acting on the left.
    pub frame_rotations: Vec<Vec<f64>>,
    /// Axis permutations `p`, acting as `(xi O)_{lj} = xi_{l p(j)}`.
    pub axis_permutations: Vec<Vec<usize>>,
    pub n_samples: usize,
    pub base_seed: u64,
    pub tol: f64,
}

/// Seed-paired difference `A(g xi) - g A(xi)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SymmetryCheck {
    pub label: String,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// `max_c |mean_c| / se_c` (zero when both vanish).
    pub z: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StructureReport {
    pub lambda: f64,
    pub big_lambda: f64,
    pub n_samples: usize,
    /// Min over samples and pairs of `(A(xi2) - A(xi1)).(xi2 - xi1) / |xi2 - xi1|^2`.
    pub monotonicity_min_realization: f64,
    /// Same for the seed-averaged estimate.
    pub monotonicity_min_mean: f64,
    /// Max over samples and pairs of `|A(xi2) - A(xi1)| / |xi2 - xi1|`.
    pub lipschitz_max_realization: f64,
    /// `4 Lambda^2 / lambda`.
    pub lipschitz_bound: f64,
    pub frame: Vec<SymmetryCheck>,
    pub isotropy: Vec<SymmetryCheck>,
    pub monotone_pass: bool,
    pub lipschitz_pass: bool,
    pub frame_pass: bool,
    pub isotropy_pass: bool,
}

fn matvec_left(o: &[f64], a: &[f64], m: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * d];
    for i in 0..m {
        for j in 0..d {
            out[i * d + j] = (0..m).map(|k| o[i * m + k] * a[k * d + j]).sum();
        }
    }
    out
}

fn permute(a: &[f64], p: &[usize], m: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * d];
    for l in 0..m {
        for j in 0..d {
            out[l * d + j] = a[l * d + p[j]];
        }
    }
    out
}

fn check(label: String, diffs: &[Vec<f64>]) -> SymmetryCheck {
    let n = diffs.len() as f64;
    let nc = diffs[0].len();
    let mut mean = vec![0.0; nc];
    let mut se = vec![0.0; nc];
    let mut z: f64 = 0.0;
    let mut pass = true;
    for c in 0..nc {
        let mu = diffs.iter().map(|v| v[c]).sum::<f64>() / n;
        let var = if n > 1.0 {
            diffs.iter().map(|v| (v[c] - mu).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let s = (var / n).sqrt();
        mean[c] = mu;
        se[c] = s;
        // Exact symmetries leave only solver noise.
        let floor = 1e-9;
        if mu.abs() > 3.0 * s + floor {
            pass = false;
        }
        if s > 0.0 {
            z = z.max(mu.abs() / s);
        }
    }
    SymmetryCheck { label, mean, se, z, pass }
}

pub fn structure_checks(
    fam: &OperatorFamily,
    sampler: &(dyn Fn(u64) -> Result<ParameterField> + Sync),
    cfg: &StructureConfig,
) -> Result<StructureReport> {
    let (m, d) = (fam.m(), fam.d());
    let md = m * d;
    if cfg.n_samples == 0 {
        return Err(Error::InvalidArgument("structure checks need at least one sample".into()));
    }
    for o in &cfg.frame_rotations {
        if o.len() != m * m {
            return Err(Error::shape(format!("{m}x{m} rotation"), format!("{} entries", o.len())));
        }
    }
    for p in &cfg.axis_permutations {
        let mut s = p.clone();
        s.sort_unstable();
        if s != (0..d).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument(format!("{p:?} is not a permutation of 0..{d}")));
        }
    }
    for xi in cfg.xi_pairs.iter().flat_map(|(a, b)| [a, b]).chain(&cfg.probes) {
        if xi.len() != md {
            return Err(Error::shape(format!("slope with {md} entries"), format!("{}", xi.len())));
        }
    }

    // Per sample: A at both ends of each pair, then for each probe
    // A(xi), A(O xi) for every rotation and A(xi P) for every permutation.
    struct Sample {
        pairs: Vec<(Vec<f64>, Vec<f64>)>,
        frame: Vec<Vec<f64>>,
        iso: Vec<Vec<f64>>,
    }
    let samples: Vec<Sample> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| -> Result<Sample> {
            let seed = seed_stream(cfg.base_seed, i as u64);
            let omega = sampler(seed)?;
            let a = |xi: &[f64]| rve_periodic(&omega, fam, xi, cfg.tol).map(|r| r.value);
            let mut pairs = Vec::new();
            for (x1, x2) in &cfg.xi_pairs {
                pairs.push((a(x1)?, a(x2)?));
            }
            let mut frame = Vec::new();
            let mut iso = Vec::new();
            for xi in &cfg.probes {
                let base = a(xi)?;
                for o in &cfg.frame_rotations {
                    let lhs = a(&matvec_left(o, xi, m, d))?;
                    let rhs = matvec_left(o, &base, m, d);
                    frame.push(lhs.iter().zip(&rhs).map(|(x, y)| x - y).collect());
                }
                for p in &cfg.axis_permutations {
                    let lhs = a(&permute(xi, p, m, d))?;
                    let rhs = permute(&base, p, m, d);
                    iso.push(lhs.iter().zip(&rhs).map(|(x, y)| x - y).collect());
                }
            }
            Ok(Sample { pairs, frame, iso })
        })
        .collect::<Result<_>>()?;

    let (l, ll) = fam.constants();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut mono_real = f64::INFINITY;
    let mut lip_real: f64 = 0.0;
    let mut mono_mean = f64::INFINITY;
    for (k, (x1, x2)) in cfg.xi_pairs.iter().enumerate() {
        let dx: Vec<f64> = x2.iter().zip(x1).map(|(a, b)| a - b).collect();
        let dx2 = dot(&dx, &dx);
        if dx2 == 0.0 {
            continue;
        }
        let mut mean_da = vec![0.0; md];
        for s in &samples {
            let (a1, a2) = &s.pairs[k];
            let da: Vec<f64> = a2.iter().zip(a1).map(|(a, b)| a - b).collect();
            mono_real = mono_real.min(dot(&da, &dx) / dx2);
            lip_real = lip_real.max((dot(&da, &da) / dx2).sqrt());
            mean_da.iter_mut().zip(&da).for_each(|(m, v)| *m += v / samples.len() as f64);
        }
        mono_mean = mono_mean.min(dot(&mean_da, &dx) / dx2);
    }
    let lipschitz_bound = 4.0 * ll * ll / l;

    let mut frame = Vec::new();
    let mut iso = Vec::new();
    let nf = cfg.frame_rotations.len();
    let np = cfg.axis_permutations.len();
    for (pi, xi) in cfg.probes.iter().enumerate() {
        for r in 0..nf {
            let diffs: Vec<Vec<f64>> = samples.iter().map(|s| s.frame[pi * nf + r].clone()).collect();
            frame.push(check(format!("rotation {r} at xi = {xi:?}"), &diffs));
        }
        for r in 0..np {
            let diffs: Vec<Vec<f64>> = samples.iter().map(|s| s.iso[pi * np + r].clone()).collect();
            iso.push(check(
                format!("permutation {:?} at xi = {xi:?}", cfg.axis_permutations[r]),
                &diffs,
            ));
        }
    }
    Ok(StructureReport {
        lambda: l,
        big_lambda: ll,
        n_samples: cfg.n_samples,
        monotonicity_min_realization: mono_real,
        monotonicity_min_mean: mono_mean,
        lipschitz_max_realization: lip_real,
        lipschitz_bound,
        monotone_pass: mono_real >= l * (1.0 - 1e-6) || cfg.xi_pairs.is_empty(),
        lipschitz_pass: lip_real <= lipschitz_bound * 1.05,
        frame_pass: frame.iter().all(|c| c.pass),
        isotropy_pass: iso.iter().all(|c| c.pass),
        frame,
        isotropy: iso,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PeriodicGrid;
    use crate::material::{make_linear_midpoint, make_rational_uhlenbeck};
    use crate::randomfield::{ClampSpec, FieldSpec, KernelShape};

    #[test]
    fn constant_sample_is_exact() {
        let g = PeriodicGrid::new(2, 16, 4.0).unwrap();
        let fam = make_rational_uhlenbeck(2, 2);
        let sampler = move |_s: u64| ParameterField::constant(g, &[0.3], 0.5);
        let (c, s) = (0.6f64.cos(), 0.6f64.sin());
        let cfg = StructureConfig {
            xi_pairs: vec![(vec![1.0, 0.0, 0.0, 0.5], vec![0.2, 0.3, -1.0, 0.0])],
            probes: vec![vec![1.0, 0.2, -0.3, 0.5]],
            frame_rotations: vec![vec![c, -s, s, c]],
            axis_permutations: vec![vec![1, 0]],
            n_samples: 1,
            base_seed: 0,
            tol: 1e-10,
        };
        let r = structure_checks(&fam, &sampler, &cfg).unwrap();
        assert!(r.frame[0].mean.iter().all(|v| v.abs() < 1e-12));
        assert!(r.monotone_pass && r.lipschitz_pass && r.frame_pass && r.isotropy_pass);
    }

    #[test]
    fn linear_isotropic_family_in_2d() {
        let g = PeriodicGrid::new(2, 32, 4.0).unwrap();
        let fam = make_linear_midpoint(1, 2);
        let spec = FieldSpec::new(0.5, KernelShape::GaussianBump, ClampSpec::default());
        let sampler = move |s: u64| spec.sample(&g, s);
        let cfg = StructureConfig {
            xi_pairs: vec![(vec![1.0, 0.0], vec![0.0, 1.0]), (vec![0.3, -0.2], vec![1.0, 1.0])],
            probes: vec![vec![1.0, 0.4]],
            frame_rotations: vec![vec![-1.0]],
            axis_permutations: vec![vec![1, 0]],
            n_samples: 12,
            base_seed: 5,
            tol: 1e-10,
        };
        let r = structure_checks(&fam, &sampler, &cfg).unwrap();
        assert!(r.monotone_pass, "{}", r.monotonicity_min_realization);
        assert!(r.lipschitz_pass && r.frame_pass && r.isotropy_pass, "{r:?}");
    }
}
