//! Curriculum sampling for group-relative policy optimization.
//!
//! The crate is organised around the four stages of one training iteration:
//!
//! 1. [`sampler`] draws a batch from the [`curriculum::ProbabilityList`] by
//!    rejection filling, each candidate passing a Bernoulli trial with its
//!    calibrated probability `min(1, w_c * p)`.
//! 2. A policy update consumes group-relative advantages
//!    ([`curriculum::compute_advantages`]). Here the policy is the synthetic
//!    learner in [`sim`].
//! 3. Reward variances are rescaled within the batch into proposal
//!    probabilities ([`curriculum::rescale_batch_variances`]).
//! 4. The list is updated: sampled prompts take the mean of their last three
//!    proposals, unsampled prompts receive a `1/N` exploration increment.
//!
//! [`calibration`] derives per-category weights from a proportional-fairness
//! problem, and [`harness`] runs the whole loop with metrics, checkpoints and
//! strategy comparisons.

pub mod calibration;
pub mod curriculum;
pub mod error;
pub mod harness;
pub mod par;
pub mod rng;
pub mod sampler;
pub mod sim;

pub use error::{Error, Result};
