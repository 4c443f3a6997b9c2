//! Derivative-accurate neural surrogates for stochastic pricing functions.
//!
//! The crate trains an oversized MLP on least-squares Monte Carlo samples,
//! prunes it node by node using interval adjoint significance analysis, and
//! restores Delta/Gamma accuracy with Sobolev fine-tuning. A Bachelier
//! Gaussian-basket model supplies both the training data and the analytic
//! reference Greeks used for validation.

pub mod interval;
pub mod market;
pub mod network;
pub mod pipeline;
pub mod pruning;
pub mod special;
pub mod tape;
pub mod training;

pub use interval::{Interval, IntervalError};
pub use network::{
    worked_example, Activation, Dense, MlpModel, NetworkError, NodeEnclosures, Scaling,
};
pub use tape::{Scalar, Tape, TapeError, Var};
