//! Regenerative random permutations of the positive integers.
//!
//! The crate is organised bottom-up:
//!
//! * [`dist`]: distributions on the positive integers and stick-breaking laws.
//! * [`renewal`]: renewal-sequence algebra and the special functions used by
//!   the closed forms.
//! * [`perm`]: finite permutations, components, cycles and exact combinatorics.
//! * [`samplers`]: exact samplers for the blocked, p-shifted and p-biased
//!   families, and two-sided stationary windows.
//! * [`qhat`]: the increasing-run Markov chain attached to residual allocation
//!   models, with the GEM closed forms.
//! * [`stats`]: batched Monte Carlo estimators with standard errors.
//! * [`verify`]: the end-to-end acceptance suite.

pub mod dist;
pub mod model;
pub mod perm;
pub mod qhat;
pub mod renewal;
pub mod rng;
pub mod samplers;
pub mod stats;
pub mod verify;

pub use dist::{DiscreteDist, Draw, FactorLaw, StickBreaking};
pub use model::{Driver, ModelSpec};
pub use perm::PermPrefix;
pub use renewal::RenewalSeq;
pub use rng::Stream;
pub use stats::EstimateReport;
