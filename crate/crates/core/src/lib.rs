//! Douglas-Rachford splitting for `min f(x) + g(x)` over a closed catalog
//! of convex functions, the equivalent ADMM form for linearly constrained
//! problems, cone-feasibility specializations with finite support
//! identification, and a diagnostics layer that measures error-bound
//! constants and convergence rates against small-scale exact oracles.

pub mod conic;
pub mod constrained;
pub mod diagnostics;
pub mod dr;
pub mod error;
pub mod linalg;
pub mod prox;

pub use conic::{ConeSpec, SubspaceBasis, SupportPartition};
pub use constrained::{ADMMState, ConstrainedProblem};
pub use diagnostics::{DiagQpInstance, DiagnosticsReport};
pub use dr::{DRState, DRTrace, StopReason, StopRule};
pub use error::{Error, Result};
pub use prox::ProxFunction;

#[cfg(test)]
mod tests {
    use super::*;

    // The problem descriptions are immutable after construction and may be
    // shared across concurrent runs.
    #[test]
    fn shared_types_are_send_and_sync() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<ProxFunction>();
        assert_send_sync::<ConeSpec>();
        assert_send_sync::<SubspaceBasis>();
        assert_send_sync::<ConstrainedProblem>();
        assert_send_sync::<DRTrace>();
    }
}
