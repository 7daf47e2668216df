pub mod error;
pub mod experiment;
pub mod grid;
pub mod losses;
pub mod models;
pub mod nn;
pub mod plots;
pub mod sampling;
pub mod screen_eval;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
