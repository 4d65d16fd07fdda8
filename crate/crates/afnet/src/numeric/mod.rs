//! Deterministic tensor engine: forward ops, exact analytic gradients,
//! Adam, and finite-difference verification. Everything here is a pure
//! function over immutable inputs; batch-level parallelism lives in the
//! training module and must reduce in a fixed order.

pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::finite_diff_check;
pub use ops::{ConvSpec, Padding};
pub use optim::AdamState;
pub use params::ParamBlocks;
pub use tensor::{Scalar, Tensor};
