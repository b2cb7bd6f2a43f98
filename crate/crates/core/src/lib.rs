//! Decentralized Riemannian optimization by diffusion adaptation.
//!
//! Agents on a network each hold an iterate on a Riemannian manifold. Every
//! round an agent takes a stochastic Riemannian gradient step along a geodesic
//! (adaptation) and then moves toward the weighted tangent-space average of
//! its neighbours' intermediate iterates (combination).
//!
//! The crate provides the manifolds ([`manifold::Euclidean`],
//! [`grassmann::Grassmann`]), network weight construction ([`network`]),
//! intrinsic agreement metrics ([`metrics`]), the recursion and its baselines
//! ([`diffusion`]), a robust-PCA application ([`rpca`]) and a Monte Carlo
//! experiment runner ([`runner`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod error;
pub mod grassmann;
pub mod manifold;
pub mod metrics;
pub mod network;
pub mod rpca;
pub mod runner;
pub mod seed;
pub mod testbed;

pub use error::{Error, Result};
pub use grassmann::Grassmann;
pub use manifold::{Euclidean, Manifold, Point, Tangent};
