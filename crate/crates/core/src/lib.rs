//! One-locus coalescent sampling probabilities under general finite-alleles
//! models of recurrent mutation.
//!
//! Three independent routes to the same quantities:
//!
//! * [`exact`] solves the sampling recursion level by level for the exact
//!   probability `q(n)` at any mutation rate;
//! * [`closedform`] evaluates the leading coefficient `Q(n)` of the Taylor
//!   expansion of `q(n)` about rate zero, in closed form for up to four
//!   observed alleles, giving the approximation
//!   `q_approx(n) = theta^{|O|-1} Q(n)`;
//! * [`oracle`] and [`urn`] compute the rescaled coefficient
//!   `R(n) = Q(n)/lambda(n)` by two direct recursions and by Monte Carlo
//!   over a ball-killing urn process.
//!
//! [`harness`] quantifies how well the closed-form approximation tracks the
//! exact solver across sample sizes and rates.

pub mod closedform;
pub mod combinatorics;
pub mod configspace;
pub mod error;
pub mod exact;
pub mod fixtures;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod urn;

pub use closedform::{ApproxValue, LeadingCoefficient};
pub use configspace::{ConfigRank, SampleConfig};
pub use error::{Error, Result};
pub use exact::{LevelTable, QValue, SolveMode, SolverOptions};
pub use harness::{ErrorReport, SweepOutput};
pub use model::{AlleleSet, MutationModel};
pub use urn::{McEstimate, RootedTree};
