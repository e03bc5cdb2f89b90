//! Learned marketplace simulation.
//!
//! A ground-truth synthetic marketplace produces logged search sessions;
//! from those logs a customer generator and a customer behavior policy are
//! learned adversarially, composed into a virtual environment, and used to
//! train ranking policies with trust-region updates and an action-norm
//! penalty. Experiments in [`bench`] compare everything back against the
//! ground truth.

pub mod error;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
pub mod market;
pub mod par;
pub mod oracle;
pub mod gansd;
pub mod policy;
pub mod mail;
pub mod baselines;
