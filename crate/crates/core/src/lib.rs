//! Community detection across multiple network samples whose within-community
//! edges are correlated.
//!
//! The approximate likelihood augments the independent stochastic block model
//! likelihood with second (and optionally a fourth-order lower bound of) Bahadur
//! interaction terms among standardized within-community edges. Memberships are
//! estimated by alternating block-parameter updates with single-node Bayes-factor
//! reassignments; dropping the correlation terms recovers variational EM.

pub mod bench;
pub mod bvn;
pub mod consensus;
pub mod error;
pub mod estimator;
pub mod likelihood;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod simulator;
pub mod spectral;

pub use consensus::{consensus_k, ConsensusK, LayerFilters};
pub use error::{Error, Result};
pub use estimator::{fit, fit_from_inits, fit_vem, FitConfig, FitResult};
pub use likelihood::{
    approx_log_lik, bayes_factor_log, concordance_stat, log_lik_correlation, log_lik_independent,
    CorrelationOrder, LikelihoodParts,
};
pub use metrics::adjusted_rand_index;
pub use simulator::{sample_networks, Balance, CorrelationStructure, SimConfig, Simulated};
pub use model::{block_mean, standardize_edge, BlockParams, HardMembership, MembershipProbs, MultiNetwork};
