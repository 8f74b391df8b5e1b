//! Document-level extractive question answering.

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod inference;
pub mod layers;
pub mod objectives;
pub mod sampling;
pub mod text;
pub mod training;

pub use error::{Error, Result};
