//! Geometric-mechanics models of passive and externally actuated planar
//! locomotors: a three-link wheeled snake and a Chaplygin beanie, each
//! riding on a movable platform.

pub mod chaplygin;
pub mod error;
pub mod experiments;
pub mod io;
pub mod se2;
pub mod snake;

pub use error::{Error, Result};
