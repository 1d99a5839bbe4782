//! Minimal dense neural network engine.
//!
//! Everything downstream (clients, servers, aggregation) works in terms of
//! flat parameter vectors and explicit forward traces, so the engine keeps
//! both first class instead of hiding them inside layer objects.

pub mod checkpoint;
pub mod compose;
pub mod loss;
pub mod matrix;
pub mod network;

pub use compose::{chain, extract_parallel, parallel};
pub use loss::{loss_and_grad, LossKind};
pub use matrix::Matrix;
pub use network::{Activation, ForwardTrace, LayerSpec, Network, ParamVector};
