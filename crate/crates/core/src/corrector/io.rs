//! Corrector snapshots: one HLF1 file per field plus a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CorrectorSet, IdentityCheck};
use crate::error::Result;
use crate::grid::io::save_field;
use crate::randomfield::Lineage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub residual: f64,
    pub relative: f64,
    pub constant: f64,
}

impl From<IdentityCheck> for CheckRecord {
    fn from(c: IdentityCheck) -> Self {
        Self {
            residual: c.residual,
            relative: c.relative,
            constant: c.constant,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub family: String,
    pub lambda: f64,
    pub big_lambda: f64,
    pub d: usize,
    pub n: usize,
    pub length: f64,
    pub m: usize,
    pub xi: Vec<f64>,
    pub t: Option<f64>,
    pub epsilon: f64,
    pub seed: Option<u64>,
    pub lineage: Lineage,
    pub tol: f64,
    pub residual_norm: f64,
    pub threshold: f64,
    pub method: String,
    pub newton_iterations: usize,
    pub krylov_iterations: usize,
    pub relaxation_iterations: usize,
    pub residual_history: Vec<f64>,
    pub preconditioner: String,
    pub flux_average: Vec<f64>,
    pub energy_constant: f64,
    pub sigma_check: Option<CheckRecord>,
    pub theta_check: Option<CheckRecord>,
    /// Field name to file name (relative to the sidecar).
    pub files: Vec<(String, String)>,
}

impl Sidecar {
    pub fn of(set: &CorrectorSet) -> Self {
        let g = set.grid();
        Self {
            family: set.family.name().to_string(),
            lambda: set.family.lambda(),
            big_lambda: set.family.big_lambda(),
            d: g.dim(),
            n: g.n(),
            length: g.length(),
            m: set.m(),
            xi: set.xi.clone(),
            t: set.t,
            epsilon: set.omega.epsilon(),
            seed: set.omega.seed(),
            lineage: set.omega.lineage().clone(),
            tol: set.tol,
            residual_norm: set.residual_norm,
            threshold: set.stats.threshold,
            method: set.stats.method.clone(),
            newton_iterations: set.stats.newton_iterations,
            krylov_iterations: set.stats.krylov_iterations,
            relaxation_iterations: set.stats.relaxation_iterations,
            residual_history: set.stats.history.clone(),
            preconditioner: set.stats.preconditioner.clone(),
            flux_average: set.flux_average(),
            energy_constant: set.energy_constant(),
            sigma_check: set.sigma_check.map(Into::into),
            theta_check: set.theta_check.map(Into::into),
            files: Vec::new(),
        }
    }
}

/// Writes `<stem>.<field>.hlf` for omega, phi, flux and the optional gauge
/// fields, and `<stem>.json`. Returns the sidecar path.
pub fn save_corrector_set(set: &CorrectorSet, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut meta = Sidecar::of(set);
    let mut put = |name: &str, f: &crate::grid::DiscreteField| -> Result<()> {
        let file = format!("{stem}.{name}.hlf");
        save_field(f, dir.join(&file))?;
        meta.files.push((name.to_string(), file));
        Ok(())
    };
    put("omega", set.omega.as_field())?;
    put("phi", &set.phi)?;
    put("flux", &set.flux)?;
    if let Some(s) = &set.sigma {
        put("sigma", s)?;
    }
    if let Some(t) = &set.theta {
        put("theta", t)?;
    }
    let path = dir.join(format!("{stem}.json"));
    fs::write(&path, serde_json::to_string_pretty(&meta)?)?;
    Ok(path)
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Sidecar> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrector::solve_localized_corrector;
    use crate::grid::io::load_field;
    use crate::grid::PeriodicGrid;
    use crate::material::make_rational_uhlenbeck;
    use crate::randomfield::{ClampSpec, FieldSpec, KernelShape};

    #[test]
    fn round_trip() {
        let g = PeriodicGrid::new(2, 16, 1.0).unwrap();
        let omega = FieldSpec::new(0.25, KernelShape::GaussianBump, ClampSpec::default())
            .sample(&g, 4)
            .unwrap();
        let set = solve_localized_corrector(&omega, &make_rational_uhlenbeck(1, 2), &[1.0, 0.0], 0.1, 1e-9)
            .unwrap()
            .with_flux_corrector()
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = save_corrector_set(&set, dir.path(), "c0").unwrap();
        let meta = read_sidecar(&p).unwrap();
        assert_eq!(meta.seed, Some(4));
        assert_eq!(meta.t, Some(0.1));
        assert!(meta.sigma_check.is_some());
        let phi = load_field(dir.path().join("c0.phi.hlf")).unwrap();
        assert_eq!(phi, set.phi);
        assert_eq!(meta.files.len(), 4);
    }
}
