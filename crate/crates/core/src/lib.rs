//! Value-of-information sensitivity for structural reliability: EVPPI of
//! individual inputs for safety-assessment and design decisions.

pub mod condest;
pub mod config;
pub mod decision;
pub mod dists;
pub mod error;
pub mod form;
pub mod lsf;
pub mod numeric;
pub mod pipeline;
pub mod sample;
pub mod table;

pub use error::{Error, Result};
pub use table::fmt_f64;
