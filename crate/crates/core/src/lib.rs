pub mod data;
pub mod dist;
pub mod error;
pub mod eval;
pub mod explain;
pub mod moments;
pub mod neural;
pub mod optim;
pub mod special;
pub mod train;

pub use error::{Error, Result};
