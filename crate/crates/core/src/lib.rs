//! Neural-SLAM: an exploration agent whose external-memory addressing embeds
//! the motion-prediction and measurement-update steps of SLAM, trained with
//! asynchronous advantage actor-critic on procedurally generated grid worlds.

pub mod autodiff;
pub mod env;
pub mod error;
pub mod memory;
pub mod policy;
pub mod trainer;
pub mod eval;

pub use error::{Error, Result};
