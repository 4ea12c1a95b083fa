//! Conformal prediction sets over classifier score matrices.
//!
//! The crate takes per-sample class probabilities from one or more models,
//! optionally fuses several expert models by averaging their probability
//! rows, calibrates a split-conformal threshold on held-out data and turns
//! test rows into prediction sets with a finite-sample coverage guarantee.
//! An evaluation battery reports coverage, set sizes split by argmax
//! correctness, coverage per set size, uncertainty histograms and
//! macro-averaged classification metrics. A Dirichlet simulator produces
//! exchangeable synthetic data so the guarantee can be checked end to end.
//!
//! ```
//! use conformal_ensemble::{conformal, types::{validate_score_matrix, LabeledScores}};
//!
//! let scores = validate_score_matrix(&[
//!     vec![0.9, 0.1], vec![0.2, 0.8], vec![0.5, 0.5], vec![0.3, 0.7],
//! ]).unwrap();
//! let ids = (0..4).map(|i| format!("s{i}")).collect();
//! let calib = LabeledScores::new(ids, vec![Some(0), Some(1), Some(0), Some(1)], scores).unwrap();
//! let artifact = conformal::calibrate(&calib, 0.25).unwrap();
//! assert_eq!(artifact.q_hat(), 0.5);
//! assert_eq!(conformal::prediction_set(&[0.7, 0.2, 0.1], artifact.q_hat(), true), vec![0]);
//! ```

pub mod cli;
pub mod conformal;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod simulator;
pub mod splits;
pub mod types;

pub use error::{Error, Result};
pub use par::Execution;
