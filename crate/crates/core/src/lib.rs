pub mod agreement;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod feedback;
pub mod metrics;
pub mod mixedfx;
pub mod model;
pub mod optim;
pub mod planner;
pub mod service;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
