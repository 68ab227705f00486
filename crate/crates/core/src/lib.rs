pub mod chart;
pub mod error;
pub mod expr;
pub mod fields;
pub mod jets;
pub mod multipole;
pub mod pairing;
pub mod par;
pub mod quadrature;
pub mod tensor;
pub mod transform;
pub mod worldline;
pub mod zeta;

pub use error::{Error, Result};
