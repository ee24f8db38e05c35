//! Minimal-perturbation adversarial attacks by proximal gradient descent on a
//! log-barrier relaxation, for ℓ0, ℓ1, ℓ2, ℓ∞ and total-variation
//! dissimilarities, together with the small classifiers they attack.

// `!(v > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod error;
pub mod harness;
pub mod model;
pub mod prox;
pub mod tensor;
pub mod tv;

pub use error::{Error, Result};
pub use tensor::{box_project, metric_eval, Image, LabeledExample, Metric, Shape};
