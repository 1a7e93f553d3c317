pub mod adapter;
pub mod drift_sim;
pub mod error;
pub mod gda_head;
pub mod gmm;
pub mod homogeneity;
pub mod pipeline;
pub mod stats;
pub mod stream;

pub use error::{Error, Result};
