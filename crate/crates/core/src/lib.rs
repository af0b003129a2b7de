//! Homozygosity of hierarchical Dirichlet processes: exact combinatorics,
//! samplers, exact means, limiting variances and Monte Carlo checks of the
//! limit theorems.

pub mod asymptotics;
pub mod combinatorics;
pub mod error;
pub mod montecarlo;
pub mod numeric;
pub mod sampling;
pub mod statistics;
pub mod verify;

pub use asymptotics::{
    variance_fdhdp, variance_groups, variance_hdp, AsymptoticVariances, CovarianceMatrix,
    SignConvention, VarianceModel,
};
pub use combinatorics::{CoefficientSet, Composition, StirlingTable};
pub use error::{Error, Result};
pub use montecarlo::{
    run_clt, run_lln, CltReport, ExperimentConfig, LlnReport, MomentAccumulator, Thresholds,
};
pub use sampling::{GroupFamily, ReplicateStreams, RngStream, Role, WeightModel, WeightVector};
pub use statistics::{
    Centering, GroupWeighting, HomozygosityValue, ModelParams, ModelSpec, ScaledStatistic,
    Standardizer,
};
pub use verify::{run_identity_suite, VerifyOptions, VerifyReport};
