//! Supervised gradual domain adaptation laboratory.
//!
//! Trains feature map / classifier pairs across a sequence of gradually
//! drifting labeled domains with a critic-based Wasserstein alignment term,
//! and evaluates the theoretical quantities that govern such training
//! (class-conditional drift, discrepancy, generalization-bound terms,
//! sequential Rademacher complexity) on synthetic data with known ground truth.
//!
//! Module map:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`diffcore`] | dense `f64` arrays, reverse-mode tape with one nested level, deterministic RNG |
//! | [`models`] | perceptrons for feature map, classifier and critic; gated recurrent summarizer |
//! | [`domains`] | drifting-domain generators, CSV persistence, stratified holdout |
//! | [`transport`] | exact assignment W1, sorted 1-D W_p, log-domain Sinkhorn, drift estimator |
//! | [`objectives`] | bounded losses, alignment gap, gradient penalty, adaptation schedules |
//! | [`theory`] | discrepancy, Lemma-style Lipschitz transfer check, bound terms, tree enumeration |

pub mod diffcore;
pub mod domains;
pub mod error;
pub mod models;
pub mod objectives;
pub mod theory;
pub mod transport;

pub use error::{Error, Result};
