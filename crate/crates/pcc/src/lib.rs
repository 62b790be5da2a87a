//! File formats, dataset layout, training driver and command line for
//! `pcc-core`.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod ply;
pub mod pnm;
pub mod preview;
pub mod run;

pub use error::{PccError, Result};
