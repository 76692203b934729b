//! Minimal radius above which a corrector looks sublinear.

use serde::{Deserialize, Serialize};

use super::CorrectorSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimalRadiusConfig {
    pub k_mass: f64,
    /// Cap of the dyadic scan; `None` means `cap_factor * sqrt(T)`
    /// (half the period for the periodic corrector).
    pub dyadic_max: Option<f64>,
    pub cap_factor: f64,
}

impl Default for MinimalRadiusConfig {
    fn default() -> Self {
        Self {
            k_mass: 8.0,
            dyadic_max: None,
            cap_factor: 4.0,
        }
    }
}

/// Ball statistics at one dyadic scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DyadicScale {
    pub radius: f64,
    /// `(1/R^2) avg |phi - avg phi|^2`.
    pub variance: f64,
    /// `|avg phi| / sqrt(T)`; zero for the periodic corrector.
    pub mass: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinimalRadius {
    pub radius: f64,
    /// The conditions failed at the cap; `radius` is the cap.
    pub capped: bool,
    pub scales: Vec<DyadicScale>,
}

impl MinimalRadius {
    /// Both conditions hold at every scanned scale `R >= radius`.
    pub fn audit(&self) -> bool {
        self.capped || self.scales.iter().filter(|s| s.radius >= self.radius).all(|s| s.ok)
    }
}

pub fn minimal_radius(set: &CorrectorSet, cfg: &MinimalRadiusConfig, x0: usize) -> Result<MinimalRadius> {
    if !(cfg.k_mass >= 1.0) {
        return Err(Error::InvalidArgument(format!("K_mass must be at least 1, got {}", cfg.k_mass)));
    }
    let grid = *set.grid();
    if x0 >= grid.num_sites() {
        return Err(Error::InvalidArgument(format!("site {x0} outside the lattice")));
    }
    let eps = set.omega.epsilon();
    if eps < 4.0 * grid.spacing() {
        return Err(Error::UnderResolved {
            epsilon: eps,
            min: 4.0 * grid.spacing(),
        });
    }
    let cap = match (cfg.dyadic_max, set.t) {
        (Some(c), _) => c,
        (None, Some(t)) => (cfg.cap_factor * t.sqrt()).min(0.5 * grid.length()),
        (None, None) => 0.5 * grid.length(),
    };
    if !(cap > 0.0) {
        return Err(Error::InvalidArgument(format!("scan cap must be positive, got {cap}")));
    }
    let mut radii = vec![eps];
    while radii.last().unwrap() * 2.0 <= cap * (1.0 + 1e-12) {
        radii.push(radii.last().unwrap() * 2.0);
    }

    let m = set.m();
    let x = grid.position(x0);
    let mut by_dist: Vec<(f64, usize)> = (0..grid.num_sites()).map(|s| (grid.wrap_distance(s, &x), s)).collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
    let xi2: f64 = set.xi.iter().map(|v| v * v).sum();
    let phi = set.phi.values();

    let mut sum = vec![0.0; m];
    let mut sum2 = 0.0;
    let mut count = 0usize;
    let mut next = 0;
    let mut scales = Vec::with_capacity(radii.len());
    for &r in &radii {
        while next < by_dist.len() && by_dist[next].0 <= r * (1.0 + 1e-12) {
            let s = by_dist[next].1;
            for l in 0..m {
                let v = phi[s * m + l];
                sum[l] += v;
                sum2 += v * v;
            }
            count += 1;
            next += 1;
        }
        let n = count as f64;
        let mean2: f64 = sum.iter().map(|v| (v / n).powi(2)).sum();
        let variance = (sum2 / n - mean2).max(0.0) / (r * r);
        let mass = set.t.map_or(0.0, |t| mean2.sqrt() / t.sqrt());
        let ok = variance <= xi2 && mass * mass <= cfg.k_mass * cfg.k_mass * xi2;
        scales.push(DyadicScale { radius: r, variance, mass, ok });
    }
    let first_bad_from_top = scales.iter().rposition(|s| !s.ok);
    let (radius, capped) = match first_bad_from_top {
        None => (scales[0].radius, false),
        Some(i) if i + 1 < scales.len() => (scales[i + 1].radius, false),
        Some(_) => (scales.last().unwrap().radius, true),
    };
    Ok(MinimalRadius { radius, capped, scales })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrector::solve_localized_corrector;
    use crate::grid::PeriodicGrid;
    use crate::material::make_rational_uhlenbeck;
    use crate::randomfield::{ClampSpec, FieldSpec, KernelShape, ParameterField};

    #[test]
    fn constant_medium_gives_epsilon() {
        let g = PeriodicGrid::new(2, 32, 4.0).unwrap();
        let omega = ParameterField::constant(g, &[0.2], 0.5).unwrap();
        let set = solve_localized_corrector(&omega, &make_rational_uhlenbeck(1, 2), &[1.0, 0.0], 0.25, 1e-9).unwrap();
        let r = minimal_radius(&set, &MinimalRadiusConfig::default(), 17).unwrap();
        assert_eq!(r.radius, 0.5);
        assert!(!r.capped);
        assert!(r.audit());
    }

    #[test]
    fn conditions_hold_above_the_radius() {
        let g = PeriodicGrid::new(1, 512, 16.0).unwrap();
        let fam = make_rational_uhlenbeck(1, 1);
        for seed in 0..5 {
            let omega = FieldSpec::new(0.25, KernelShape::GaussianBump, ClampSpec::default())
                .sample(&g, seed)
                .unwrap();
            let set = solve_localized_corrector(&omega, &fam, &[1.0], 1.0, 1e-10).unwrap();
            let r = minimal_radius(&set, &MinimalRadiusConfig::default(), 256).unwrap();
            assert!(r.audit());
            assert!(r.radius >= 0.25 && r.radius <= 4.0);
            for s in r.scales.iter().filter(|s| s.radius >= r.radius) {
                assert!(s.ok);
            }
        }
    }

    #[test]
    fn rejects_small_k_mass() {
        let g = PeriodicGrid::new(1, 32, 4.0).unwrap();
        let omega = ParameterField::constant(g, &[0.2], 0.5).unwrap();
        let set = solve_localized_corrector(&omega, &make_rational_uhlenbeck(1, 1), &[1.0], 0.25, 1e-9).unwrap();
        let cfg = MinimalRadiusConfig {
            k_mass: 0.5,
            ..Default::default()
        };
        assert!(minimal_radius(&set, &cfg, 0).is_err());
    }
}
