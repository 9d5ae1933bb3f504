//! Dense linear algebra, layers with analytic backward passes, the optimizer
//! and gradient checking.

pub mod gradcheck;
pub mod layers;
pub mod matrix;
pub mod optim;
pub mod rng;

pub use gradcheck::{central_difference, finite_diff_check, max_relative_error};
pub use layers::{
    l2_normalize, l2_normalize_backward, relu, relu_backward, Affine, HasParams, Mlp2, Mlp2Cache,
    Normalized, Param,
};
pub use matrix::{dot, norm, Matrix};
pub use optim::AdamW;
pub use rng::SeedStream;
