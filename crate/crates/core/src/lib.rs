//! Local manifold augmentation for self-supervised representation learning.
//!
//! Multiview training data is usually simulated with handcrafted image
//! transformations. This crate instead samples views from a model of the
//! data manifold around each image — its nearest neighbors, a latent
//! traversal, or an instance-conditioned generator — and composes that
//! sampler probabilistically with the handcrafted pipeline inside SimSiam
//! and MoCo-style pretraining. It ships with:
//!
//! - dataset loaders plus a synthetic dataset with ground-truth nuisance
//!   orbits ([`dataset`])
//! - embedding extractors for conditioning and kNN similarity ([`encoder`])
//! - exact k-nearest-neighbor retrieval ([`knn`])
//! - the view samplers behind one backend interface ([`generator`])
//! - the handcrafted pipeline and its probabilistic composition with
//!   manifold sampling ([`augment`])
//! - desk-scale SimSiam / MoCo trainers ([`train`])
//! - linear probing, invariance metrics, and Fréchet distance ([`eval`])
//! - a config-driven experiment harness with ablation sweeps ([`experiment`])

pub mod augment;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod generator;
pub mod image_ops;
pub mod knn;
pub mod nn;
pub mod plot;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use rng::RngStream;
