//! Minimal differentiable-network substrate: layers, softmax cross-entropy,
//! Adam, and finite-difference gradient verification.
//!
//! Everything is f64 and single-threaded with fixed reduction order, so a
//! given seed reproduces bit-identical runs.

pub mod adam;
pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod net;

pub use adam::AdamState;
pub use gradcheck::grad_check;
pub use layer::{Conv2d, Dense, Layer};
pub use net::{build_network, ArchPreset, Gradients, Network, LEAKY_SLOPE};
