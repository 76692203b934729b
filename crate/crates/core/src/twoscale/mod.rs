//! Partition of unity, two-scale expansion and homogenization-error sweeps.

mod expansion;
mod experiment;
mod partition;

pub use expansion::{
    two_scale_expand, CellResidual, ExpansionOptions, LocalCorrector, Recentering, TwoScaleExpansion,
};
pub use experiment::{
    homogenization_error_experiment, homogenization_error_with, DeltaRule, Domain, ErrorLevel, ErrorRow,
    HomogenizationErrorConfig, HomogenizationErrorResult, Profile,
};
pub use partition::{build_partition, local_slopes, profile, LocalSlopes, PartitionOfUnity};
