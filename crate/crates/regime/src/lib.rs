//! Reward-agnostic experimental design for preference-based reinforcement
//! learning.
//!
//! The crate simulates the full pipeline: exploratory trajectory-pair
//! collection driven by inverse-covariance design, Bradley-Terry preference
//! feedback, constrained maximum-likelihood reward (or advantage)
//! estimation, and planning under the learned reward. Exact tabular dynamic
//! programming doubles as the ground-truth oracle, and the supporting
//! concentration/propagation inequalities ship as executable audits.
//!
//! See the `examples/` directory for one runnable program per capability and
//! the `regime` binary for the experiment CLI.

pub mod design;
pub mod driver;
pub mod error;
pub mod harness;
pub mod instances;
pub mod linear;
pub mod mdp;
pub mod mle;
pub mod oracle;
pub mod reward_free;
pub mod textio;

pub use error::{RegimeError, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded randomness source. `stream` separates independent phases of one
/// run (model learning, design, rollouts, labels, ...) so that changing the
/// draw count in one phase does not perturb the others.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
