pub mod combinatorics;
pub mod evaluator;
pub mod error;
pub mod fock_oracle;
pub mod graphs;
pub mod interaction;
pub mod quadrature;
pub mod request;
pub mod routing;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
