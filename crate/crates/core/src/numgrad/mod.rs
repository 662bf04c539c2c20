//! Dense matrices, tape-based reverse-mode gradients, seeded sampling and an
//! adaptive-moment optimizer.

mod gradcheck;
mod graph;
mod params;
mod rng;
mod tensor;

pub use gradcheck::finite_diff_check;
pub use graph::{dense_forward, Activation, Graph, Var, LEAKY_SLOPE};
pub use params::{optimizer_step, AdamConfig, ParamStore, Parameter};
pub use rng::{sample_gaussian, Rng, Sigma};
pub use tensor::Tensor2;
