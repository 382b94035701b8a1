pub mod adapt;
pub mod autodiff;
pub mod checks;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod model;
pub mod objectives;
pub mod scene;
pub mod text;
pub mod train;

pub use error::{Error, Result};
