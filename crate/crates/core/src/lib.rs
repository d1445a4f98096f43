//! Direction-of-arrival estimation for co-prime sensor arrays.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`array_model`]: co-prime geometry, steering vectors and seeded
//!    snapshot simulation.
//! 2. [`coarray`]: sample covariance, vectorization onto the difference
//!    coarray and the real pseudo-spectrum over an angle grid.
//! 3. [`nn`]: a small 1-D CNN engine with deterministic and variational
//!    (reparameterized Gaussian) layers, Bernoulli likelihood, ELBO and
//!    RMSProp, all with hand-written backpropagation.
//! 4. [`datagen`] / [`trainer`]: labelled datasets, training, Monte-Carlo
//!    prediction, peak picking and the angular-resolution sweep.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array_model;
pub mod coarray;
pub mod datagen;
pub mod error;
pub mod nn;
pub mod rng;
pub mod trainer;

pub use array_model::{simulate_snapshots, CoprimeGeometry, SnapshotMatrix, SourceScenario};
pub use coarray::{
    analytic_covariance, normalize_spectrum, pseudo_spectrum, sample_covariance, select_coarray, vectorize_covariance,
    virtual_manifold, AngleGrid, CoarrayVector, CovarianceMatrix, CovarianceSource, FeatureExtractor, PseudoSpectrum,
};
pub use datagen::{DatasetConfig, Record};
pub use error::{Error, Result};
pub use nn::{LayerSpec, Mode, Model, PredictionDistribution, Tensor};
pub use trainer::{TrainConfig, TrainingCurves};
