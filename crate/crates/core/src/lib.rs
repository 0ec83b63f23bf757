pub mod cost_model;
pub mod design_space;
pub mod error;
pub mod evaluator;
pub mod explorer;
pub mod pareto;
pub mod presets;
pub mod surrogate;

pub use error::{Error, Result};
