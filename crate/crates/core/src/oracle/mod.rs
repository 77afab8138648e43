//! Exactly enumerated discrete worlds.
//!
//! Every quantity is a finite sum, so identities can be checked to rounding
//! error. The [`brute`] module shares no code with [`analytic`] and serves as
//! an independent cross-check for the closed-form optima.

pub mod analytic;
pub mod brute;
pub mod chain;
pub mod identities;
pub mod world;

pub use analytic::{
    best_member_per_z, check_condition_and_marginal, derive_joint, entropy, full_table_decoder, kl,
    naive_best_member, optimal_factorized_decoder, optimal_gaussian_decoder, posterior_in_family,
    total_variation, DecoderFamily, FactorizedOptimum, GaussianOptimum, Joint, MarginalCheck,
    Member,
};
pub use chain::{gibbs_chain_exact, transition_matrix, GibbsChain};
pub use identities::{
    elbo_decomposition_check, mutual_information, total_variance_law_check,
    unregularized_optimum_identity, ElboDecomposition, ModelJoint, UnregularizedIdentity,
    VarianceStep,
};
pub use world::{all_binary_vectors, DiscreteWorld, SequentialWorld};
