//! Rigid point cloud registration by deep graph matching.
//!
//! The pipeline turns two point clouds into graphs, extracts per-point
//! features, predicts a soft correspondence matrix through an
//! affinity / instance-norm / Sinkhorn block, hardens it with a Hungarian
//! assignment, and estimates an SE(3) transform by weighted SVD or RANSAC.
//! Everything needed to train and evaluate the network at desk scale lives
//! here: a procedural problem generator, a minimal reverse-mode autodiff
//! engine, the network itself, the solvers, and the metric suite.
//!
//! Core math is generic over the scalar type (`f32` or `f64`) through the
//! [`scalar::Real`] trait; the aliases at the crate root fix `f64`, which is
//! what the tooling and the tests use.

pub mod correspondence;
pub mod diff;
pub mod geom;
pub mod io;
pub mod metrics;
pub mod net;
pub mod solve;
pub mod synth;
pub mod train;

mod error;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// Default scalar type for the concrete aliases below.
pub type Scalar = f64;

pub type Vec3 = geom::Vec3<Scalar>;
pub type Mat3 = geom::Mat3<Scalar>;
pub type PointCloud = geom::PointCloud<Scalar>;
pub type RigidTransform = geom::RigidTransform<Scalar>;
pub type Tensor = diff::Tensor<Scalar>;
pub type Tape = diff::Tape<Scalar>;
pub type Params = diff::Params<Scalar>;
pub type RegistrationSample = synth::RegistrationSample<Scalar>;
pub type RgmWeights = net::RgmWeights<Scalar>;
