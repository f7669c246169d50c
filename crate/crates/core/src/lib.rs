//! One-step generative modeling with integrated ODE dynamics: forward
//! processes, network, training loop, sampler, analytic oracles, metrics and
//! checkpoints.

pub mod data;
pub mod error;
pub mod eval;
pub mod net;
pub mod optim;
pub mod oracle;
pub mod persist;
pub mod process;
pub mod rng;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
