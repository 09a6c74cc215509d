//! Three-component mixture model and its data-augmented Gibbs sampler.
//!
//! Label switching is not post-processed: the eligibility-side structural
//! zeros and the distinct component likelihoods anchor the labels. Note an
//! asymmetry in the membership-probit updates that is kept as specified:
//! the below-membership coefficients are updated against the full design,
//! while the above-membership coefficients use only units outside the
//! below component (whose second utility is the one that matters in the
//! sequential-probit factorization).

pub mod diagnostics;
mod draws;
pub mod geweke;
mod model;
mod sampler;
mod state;

pub use draws::{
    bin_layout, sha256_hex, DrawRecord, MembershipSnapshot, PosteriorDraws, RunManifest,
};
pub use model::{
    complete_data_log_likelihood, draw_membership, mixing_probabilities, score_relative_risk,
    ModelData,
};
pub use sampler::{
    init_memberships, run_chain, run_chain_frozen, GibbsEngine, GibbsOptions, IterationScore,
};
pub use state::{
    InitStrategy, Label, MembershipState, ParameterState, Priors, SamplerConfig,
};
