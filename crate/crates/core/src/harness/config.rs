//! Experiment configuration in TOML or JSON.
//!
//! ```toml
//! kind = "fluctuation"
//! n_samples = 200
//! base_seed = 7
//!
//! [grid]
//! d = 1
//! points_per_epsilon = 4
//!
//! [field]
//! epsilon = 1.0
//! kernel = "gaussian-bump"
//!
//! [family]
//! name = "linear:midpoint"
//!
//! [sweep]
//! l_over_eps = [64, 128, 256]
//! xi = [1.0]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homog::{ReferenceSpec, WeightSpec};
use crate::material::OperatorFamily;
use crate::randomfield::FieldSpec;
use crate::twoscale::{DeltaRule, Domain, Profile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Fluctuation,
    Systematic,
    Localization,
    HomogenizationError,
    Structure,
    SpectralGap,
    Weight,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Fluctuation => "fluctuation",
            ExperimentKind::Systematic => "systematic",
            ExperimentKind::Localization => "localization",
            ExperimentKind::HomogenizationError => "homogenization_error",
            ExperimentKind::Structure => "structure",
            ExperimentKind::SpectralGap => "spectral_gap",
            ExperimentKind::Weight => "weight",
        }
    }
}

fn one() -> usize {
    1
}
fn four() -> usize {
    4
}
fn solver_tol() -> f64 {
    1e-9
}
fn root_tol() -> f64 {
    1e-12
}
fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub d: usize,
    #[serde(default = "one")]
    pub m: usize,
    /// `epsilon / h`.
    #[serde(default = "four")]
    pub points_per_epsilon: usize,
    /// Domain size for homogenization-error runs.
    #[serde(default = "unit")]
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    /// `rational_uhlenbeck`, `linear:midpoint`, `lin<c>` or `convex_mixture:a,b`.
    pub name: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub l_over_eps: Vec<f64>,
    #[serde(default)]
    pub t_over_eps2: Vec<f64>,
    /// `eps / L` for homogenization-error runs.
    #[serde(default)]
    pub eps_fractions: Vec<f64>,
    #[serde(default)]
    pub xi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "solver_tol")]
    pub solver: f64,
    #[serde(default = "root_tol")]
    pub root: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            solver: solver_tol(),
            root: root_tol(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystematicOptions {
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub control_variate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightOptions {
    pub weights: Vec<WeightSpec>,
}

/// Reference effective law for homogenization-error runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    /// Infinite-volume law from the one-point distribution (`d = m = 1`).
    SiteLaw { lo: f64, hi: f64, nodes: usize },
    /// `a Id`.
    Scalar { value: f64 },
    /// `a Id` with `a` the mean diagonal of periodic RVEs (linear families).
    LargeRve { l_over_eps: f64, seeds: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogenizationOptions {
    pub profile: Profile,
    #[serde(default)]
    pub domain: Domain,
    /// Defaults to `epsilon` on the torus and `sqrt(epsilon)` on the box.
    #[serde(default)]
    pub delta: Option<DeltaRule>,
    pub reference: LawSpec,
    #[serde(default)]
    pub two_scale: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureOptions {
    #[serde(default)]
    pub xi_pairs: Vec<(Vec<f64>, Vec<f64>)>,
    #[serde(default)]
    pub probes: Vec<Vec<f64>>,
    #[serde(default)]
    pub frame_rotations: Vec<Vec<f64>>,
    #[serde(default)]
    pub axis_permutations: Vec<Vec<usize>>,
    /// Draw this many random pairs in `B_2` in addition to `xi_pairs`.
    #[serde(default)]
    pub random_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralGapOptions {
    /// Ball radii in units of `epsilon`.
    pub radii_over_eps: Vec<f64>,
}

/// Optional overrides of the `--check` thresholds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub slope_min: Option<f64>,
    pub slope_max: Option<f64>,
    pub min_r2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub name: Option<String>,
    pub grid: GridSpec,
    pub field: FieldSpec,
    pub family: FamilySpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    pub n_samples: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub component: usize,
    #[serde(default)]
    pub systematic: Option<SystematicOptions>,
    #[serde(default)]
    pub weight: Option<WeightOptions>,
    #[serde(default)]
    pub homogenization: Option<HomogenizationOptions>,
    #[serde(default)]
    pub structure: Option<StructureOptions>,
    #[serde(default)]
    pub spectral_gap: Option<SpectralGapOptions>,
    #[serde(default)]
    pub check: CheckSpec,
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be positive and finite, got {v}")))
    }
}

fn nonempty<T>(path: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        Err(Error::config(path, "must not be empty"))
    } else {
        Ok(())
    }
}

fn all_positive(path: &str, v: &[f64]) -> Result<()> {
    nonempty(path, v)?;
    for (i, x) in v.iter().enumerate() {
        positive(&format!("{path}[{i}]"), *x)?;
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::config("<toml>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::config("<json>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `.json` as JSON and anything else as TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<toml>", e.to_string()))
    }

    pub fn family(&self) -> Result<OperatorFamily> {
        OperatorFamily::from_spec(&self.family.name, self.grid.m, self.grid.d)
            .map_err(|e| Error::config("family.name", e.to_string()))
    }

    /// Checks every field the selected experiment reads.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(1..=3).contains(&g.d) {
            return Err(Error::config("grid.d", format!("must be 1, 2 or 3, got {}", g.d)));
        }
        if g.m == 0 {
            return Err(Error::config("grid.m", "must be at least 1"));
        }
        if g.points_per_epsilon == 0 {
            return Err(Error::config("grid.points_per_epsilon", "must be at least 1"));
        }
        positive("grid.length", g.length)?;
        positive("field.epsilon", self.field.epsilon)?;
        if self.field.k == 0 {
            return Err(Error::config("field.k", "must be at least 1"));
        }
        positive("field.clamp.lipschitz", self.field.clamp.lipschitz)?;
        let fam = self.family()?;
        if self.field.k < fam.k() {
            return Err(Error::config(
                "field.k",
                format!("family {} needs {} channels, got {}", fam.name(), fam.k(), self.field.k),
            ));
        }
        if self.n_samples == 0 {
            return Err(Error::config("n_samples", "must be at least 1"));
        }
        positive("tolerances.solver", self.tolerances.solver)?;
        positive("tolerances.root", self.tolerances.root)?;
        let md = fam.md();
        let needs_xi = !matches!(
            self.kind,
            ExperimentKind::SpectralGap | ExperimentKind::HomogenizationError | ExperimentKind::Structure
        );
        if needs_xi && self.sweep.xi.len() != md {
            return Err(Error::config(
                "sweep.xi",
                format!("needs {md} entries for an {}x{} slope, got {}", g.m, g.d, self.sweep.xi.len()),
            ));
        }
        if self.component >= md {
            return Err(Error::config("component", format!("must be below {md}")));
        }
        match self.kind {
            ExperimentKind::Fluctuation => {
                all_positive("sweep.l_over_eps", &self.sweep.l_over_eps)?;
            }
            ExperimentKind::Systematic => {
                all_positive("sweep.l_over_eps", &self.sweep.l_over_eps)?;
                let s = self
                    .systematic
                    .as_ref()
                    .ok_or_else(|| Error::config("systematic", "missing [systematic] table"))?;
                if let ReferenceSpec::LargeRve { l_over_eps, seeds } = &s.reference {
                    positive("systematic.reference.l_over_eps", *l_over_eps)?;
                    if *seeds == 0 {
                        return Err(Error::config("systematic.reference.seeds", "must be at least 1"));
                    }
                }
            }
            ExperimentKind::Localization => {
                all_positive("sweep.l_over_eps", &self.sweep.l_over_eps)?;
                all_positive("sweep.t_over_eps2", &self.sweep.t_over_eps2)?;
            }
            ExperimentKind::Weight => {
                all_positive("sweep.l_over_eps", &self.sweep.l_over_eps)?;
                all_positive("sweep.t_over_eps2", &self.sweep.t_over_eps2)?;
                let w = self
                    .weight
                    .as_ref()
                    .ok_or_else(|| Error::config("weight", "missing [weight] table"))?;
                if w.weights.len() != 2 {
                    return Err(Error::config("weight.weights", "needs exactly two weights"));
                }
                for (i, ws) in w.weights.iter().enumerate() {
                    positive(&format!("weight.weights[{i}].radius_fraction"), ws.radius_fraction)?;
                }
            }
            ExperimentKind::HomogenizationError => {
                all_positive("sweep.eps_fractions", &self.sweep.eps_fractions)?;
                for (i, f) in self.sweep.eps_fractions.iter().enumerate() {
                    if *f > 0.25 {
                        return Err(Error::config(format!("sweep.eps_fractions[{i}]"), "must not exceed 1/4"));
                    }
                }
                let h = self
                    .homogenization
                    .as_ref()
                    .ok_or_else(|| Error::config("homogenization", "missing [homogenization] table"))?;
                match &h.reference {
                    LawSpec::SiteLaw { lo, hi, nodes } => {
                        if md != 1 {
                            return Err(Error::config("homogenization.reference", "site_law needs m = d = 1"));
                        }
                        if !(lo < hi) {
                            return Err(Error::config("homogenization.reference.hi", "must exceed lo"));
                        }
                        if *nodes < 2 {
                            return Err(Error::config("homogenization.reference.nodes", "must be at least 2"));
                        }
                    }
                    LawSpec::Scalar { value } => positive("homogenization.reference.value", *value)?,
                    LawSpec::LargeRve { l_over_eps, seeds } => {
                        positive("homogenization.reference.l_over_eps", *l_over_eps)?;
                        if *seeds == 0 {
                            return Err(Error::config("homogenization.reference.seeds", "must be at least 1"));
                        }
                        if !fam.flags().linear {
                            return Err(Error::config(
                                "homogenization.reference",
                                "large_rve needs a linear family",
                            ));
                        }
                    }
                }
            }
            ExperimentKind::Structure => {
                all_positive("sweep.l_over_eps", &self.sweep.l_over_eps)?;
                let s = self.structure.clone().unwrap_or_default();
                for (i, (a, b)) in s.xi_pairs.iter().enumerate() {
                    if a.len() != md || b.len() != md {
                        return Err(Error::config(format!("structure.xi_pairs[{i}]"), format!("slopes need {md} entries")));
                    }
                }
                for (i, p) in s.probes.iter().enumerate() {
                    if p.len() != md {
                        return Err(Error::config(format!("structure.probes[{i}]"), format!("needs {md} entries")));
                    }
                }
                for (i, o) in s.frame_rotations.iter().enumerate() {
                    if o.len() != g.m * g.m {
                        return Err(Error::config(
                            format!("structure.frame_rotations[{i}]"),
                            format!("needs {} entries", g.m * g.m),
                        ));
                    }
                }
                for (i, p) in s.axis_permutations.iter().enumerate() {
                    let mut q = p.clone();
                    q.sort_unstable();
                    if q != (0..g.d).collect::<Vec<_>>() {
                        return Err(Error::config(
                            format!("structure.axis_permutations[{i}]"),
                            format!("must be a permutation of 0..{}", g.d),
                        ));
                    }
                }
            }
            ExperimentKind::SpectralGap => {
                all_positive("sweep.l_over_eps", &self.sweep.l_over_eps)?;
                let s = self
                    .spectral_gap
                    .as_ref()
                    .ok_or_else(|| Error::config("spectral_gap", "missing [spectral_gap] table"))?;
                all_positive("spectral_gap.radii_over_eps", &s.radii_over_eps)?;
                if self.n_samples < 100 {
                    return Err(Error::config("n_samples", "spectral-gap runs need at least 100 samples"));
                }
            }
        }
        if let (Some(lo), Some(hi)) = (self.check.slope_min, self.check.slope_max) {
            if lo > hi {
                return Err(Error::config("check.slope_max", "must not be below check.slope_min"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
kind = "fluctuation"
n_samples = 1

[grid]
d = 1

[field]
epsilon = 1.0

[family]
name = "linear:midpoint"

[sweep]
l_over_eps = [8, 16]
xi = [1.0]
"#;

    #[test]
    fn minimal_toml() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Fluctuation);
        assert_eq!(cfg.grid.points_per_epsilon, 4);
        assert_eq!(cfg.tolerances.solver, 1e-9);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn json_round_trip() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&json).unwrap(), cfg);
    }

    #[test]
    fn negative_epsilon_names_the_field() {
        let bad = MINIMAL.replace("epsilon = 1.0", "epsilon = -1.0");
        match ExperimentConfig::from_toml_str(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "field.epsilon"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn field_paths_of_other_errors() {
        let path = |s: &str| match ExperimentConfig::from_toml_str(s) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("{other:?}"),
        };
        assert_eq!(path(&MINIMAL.replace("l_over_eps = [8, 16]", "l_over_eps = []")), "sweep.l_over_eps");
        assert_eq!(path(&MINIMAL.replace("xi = [1.0]", "xi = [1.0, 2.0]")), "sweep.xi");
        assert_eq!(path(&MINIMAL.replace("n_samples = 1", "n_samples = 0")), "n_samples");
        assert_eq!(path(&MINIMAL.replace("linear:midpoint", "nonsense")), "family.name");
        assert_eq!(path(&MINIMAL.replace("l_over_eps = [8, 16]", "l_over_eps = [8, -16]")), "sweep.l_over_eps[1]");
        assert_eq!(path(&MINIMAL.replace("kind = \"fluctuation\"", "kind = \"systematic\"")), "systematic");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace("[sweep]", "[sweep]\nbogus = 1");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
    }
}
