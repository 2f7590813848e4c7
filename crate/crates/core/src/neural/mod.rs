//! Small differentiable networks: the graph-convolutional heads that modulate
//! the unfolded weight update, and the fully connected baseline.
//!
//! Gradients are written out by hand for the closed set of operations used
//! here; [`gradcheck`] compares them against central differences.

pub mod gcn;
pub mod gradcheck;
pub mod mlp;

pub use gcn::{gcn_backward, gcn_forward, node_features, normalize_adjacency, GcnParams, GcnTape, HeadActivation};
pub use gradcheck::{finite_diff_check, GradCheck, GradCheckReport};
pub use mlp::{mlp_allocate, mlp_backward, mlp_forward, MlpParams, MlpTape};

use rand::Rng;

/// Uniform(-s, s) with `s = 1/√fan_in`.
pub(crate) fn uniform_init<R: Rng + ?Sized>(fan_in: usize, rng: &mut R) -> f64 {
    let s = 1.0 / crate::math::sqrt(fan_in.max(1) as f64);
    rng.random_range(-s..s)
}
