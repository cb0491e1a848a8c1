//! A self-contained graph neural network engine built around second-order
//! neighborhood aggregation.
//!
//! The crate has three floors:
//!
//! * [`tensor`] — dense tensors plus a reverse-mode autodiff tape with the
//!   dozen-odd primitives message passing needs (matrix products, Kronecker
//!   rows, segment reductions, batch normalization, fused losses), and a
//!   finite-difference gradient checker that keeps the adjoints honest.
//! * [`graph`] — CSR graphs, disjoint-union batching, synthetic dataset
//!   generators (stochastic block models and friends) and a line-oriented
//!   JSON dataset format.
//! * [`layers`] / [`model`] / [`train`] — five message-passing families
//!   (GCN, GAT, GatedGCN, GIN, GraphSAGE), a feature-correlation module that
//!   aggregates Kronecker products of transformed center/neighbor features,
//!   hybrid layers that run both and concatenate, preset model builders with
//!   audited parameter budgets, and an Adam + plateau-schedule training loop.
//!
//! The `fogctl` binary exposes dataset generation, training, evaluation,
//! gradient checking and parameter audits on the command line.
//!
//! Everything is deterministic given a seed: graph generation, parameter
//! initialization, batch order and the training history itself.
//!
//! ```
//! use fognet::tensor::{Tape, Tensor};
//!
//! // d/dx sum(relu(x * w)) at x = [[1, -2]], w = [[3], [4]]
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::matrix(1, 2, vec![1.0, -2.0]).unwrap());
//! let w = tape.leaf(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
//! let y = tape.matmul(x, w).unwrap();
//! let act = tape.relu(y);
//! let loss = tape.sum(act);
//! let grads = tape.backward(loss).unwrap();
//! // x*w = -5, relu kills the gradient
//! assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0]);
//! ```

pub mod cli;
pub mod graph;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use tensor::{Tape, Tensor, TensorError, Var};
