//! Learning dynamics of linear non-contrastive self-supervised learners with a
//! stop-gradient target, an online predictor `h` and an auxiliary predictor `g`
//! that reconstructs the clean-input representation.
//!
//! * [`flows`]: matrix gradient flow of the expected loss.
//! * [`eigen`]: decoupled eigenvalue dynamics, equilibria and regime sweeps.
//! * [`alignment`]: commutator dynamics and the eigenspace-alignment argument.
//! * [`portrait`]: vector fields, nullclines and basins of attraction.
//! * [`trainer`]: finite-sample SGD training of PhiNet, X-PhiNet and SimSiam.

pub mod alignment;
pub mod eigen;
pub mod error;
pub mod flows;
pub mod integrate;
pub mod portrait;
pub mod roots;
pub(crate) mod rows;
pub mod trainer;

pub use error::{Error, Result};
pub use flows::{FlowForm, Hyper, MatrixParams, Mode};
pub use integrate::{IntegrationOptions, Method, Stride, Trajectory};

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
pub(crate) fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
