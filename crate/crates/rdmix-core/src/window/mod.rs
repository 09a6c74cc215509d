//! Fixed-window comparator analyses: the Bayesian probit analysis
//! conditional on a user-supplied window, local polynomial estimators at
//! the threshold, multiple-imputation combining, and membership-imputation
//! export.

mod local_poly;
mod mi;
mod sampler;

pub use local_poly::{local_polynomial_rd, KernelKind, LocalPolyEstimate, WindowSpec};
pub use mi::{
    export_membership_imputations, rubin_combine, write_membership_imputations, MICombined,
    MembershipImputation,
};
pub use sampler::fixed_window_sampler;
