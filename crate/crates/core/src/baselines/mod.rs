//! Comparison models: top-down RBM cascades, HHRBM, multinomial logit and
//! its path-sum variant. The flat classification RBM lives in
//! [`crate::train`] and is re-exported here.

pub mod cascade;
pub mod mnl;

pub use crate::train::train_flat_rbm;
pub use cascade::{train_cascade, train_hhrbm, Cascade, CascadeMode, CascadeNode};
pub use mnl::{train_corrmnl, train_mnl, LinearLogit};
