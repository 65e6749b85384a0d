pub mod acceptance;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod history;
pub mod matrix;
pub mod observer;
pub mod plant;
pub mod window;

pub use error::{Error, Result};
