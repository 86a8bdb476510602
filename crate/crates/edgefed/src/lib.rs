//! Federated intrusion-detection training simulator.
//!
//! The crate implements a four-phase secure federated round — local SGD,
//! median-threshold gradient binarization ("smartification"), Paillier
//! homomorphic aggregation, and a momentum global update — next to the
//! FedAvg / FedProx / signSGD baselines, a flow-record preprocessing
//! pipeline (median imputation, standardization, incremental PCA, SMOTE),
//! differential-privacy sanitization, and a gradient-inversion attack
//! harness with full communication and convergence accounting.
//!
//! Everything is deterministic given explicit seeds: no operation draws
//! from ambient OS entropy.

pub mod crypto;
pub mod dataio;
pub mod features;
pub mod fed;
pub mod model;
pub mod privacy;
pub mod smartify;
pub mod transport;
pub mod util;
