//! Interlaced polynomial lattice rules of order alpha: digit primitives,
//! the Walsh kernel, SPOD weights, point generation and CBC construction.

pub mod cbc;
pub mod digits;
pub mod kernel;
pub mod rule;
pub mod spod;

pub use cbc::{cbc_construct, cbc_construct_with, cbc_criterion, prefix_criterion, select_candidate, CbcOptions, CbcOutcome};
pub use digits::{digit_weight, interlace, walsh_eval};
pub use kernel::{walsh_kernel, WalshKernel};
pub use rule::{generate_points, points_from_generators, InterlacedRuleSpec, PointSet};
pub use spod::{spod_set_weight, SpodWeights};
