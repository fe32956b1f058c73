//! Trajectory generators: forward Euler–Maruyama, the reverse SDE family,
//! the probability-flow ODE and the exponential-integrator / DDIM / paDDIM
//! recursions.
//!
//! Every stochastic batch draws path `p` from a ChaCha8 stream seeded with
//! the batch seed and stream number `p`, so results do not depend on how
//! paths are distributed over worker threads.

mod batch;
mod deterministic;
mod stochastic;

pub use batch::{Direction, Moments, Recording, SamplerMethod, TrajectoryBatch};
pub use deterministic::{
    ddim_chain, ddim_step, ei_chain, ei_step, exact_backward_path, paddim_chain, paddim_step,
    probability_flow_integrate, probability_flow_trajectory, EpsMode,
};
pub use stochastic::{forward_em, reverse_sde_sample, ReverseConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default floor for reverse-time integration, as a fraction of T.
pub const DEFAULT_T_MIN_FRACTION: f64 = 1e-4;

/// RNG for path `path_id` of a batch seeded with `seed`.
pub fn path_rng(seed: u64, path_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}
