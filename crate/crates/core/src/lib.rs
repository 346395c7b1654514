pub mod bo;
pub mod controller;
pub mod dog;
pub mod error;
pub mod gp;
pub mod harness;
pub mod kv;
pub mod sim;
pub mod tablegen;

pub use error::{Error, Result};
