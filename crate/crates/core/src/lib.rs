//! Accelerated decentralized optimization of regularized finite sums over a
//! communication graph.
//!
//! Each node `i` holds `f_i(θ) = Σ_j ℓ(X_ijᵀθ) + (σ_i/2)‖θ‖²`. The solvers
//! work on an augmented graph with one virtual node per sample and alternate
//! gossip rounds with local proximal steps.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`.

pub mod adfs;
pub mod apcg;
pub mod augmented;
pub mod baselines;
pub mod error;
pub mod linalg;
pub mod objective;
pub mod rng;
pub mod scalar;
pub mod topology;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = linalg::Mat<f64>;
pub type Graph = topology::CommunicationGraph<f64>;
pub type Objective = objective::LocalObjective<f64>;
pub type DataSample = objective::Sample<f64>;
pub type Problem = augmented::AugmentedProblem<f64>;
pub type Record = adfs::RunRecord<f64>;
pub type Options = adfs::RunOptions<f64>;
pub type Flat = baselines::FlatProblem<f64>;
pub type Quadratic = apcg::QuadraticComposite<f64>;
