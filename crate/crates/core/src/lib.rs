//! Integrated species distribution models on a triangulated domain.

pub mod error;
pub mod inference;
pub mod io;
pub mod mesh;
pub mod numeric;
pub mod observation;
pub mod process_model;
pub mod random_field;
pub mod simulate;

pub use error::{Error, Result};
