//! Mixed finite element solver for a bioconvection model on the unit square.
//!
//! Velocity uses the P1-bubble element, pressure and concentration continuous
//! P1. Two second-order BDF schemes are provided: a decoupled one that lags
//! the coupling terms, and a fully coupled monolithic one.

pub mod assembly;
pub mod fem;
pub mod harness;
pub mod linalg;
pub mod manufactured;
pub mod mesh;
pub mod schemes;
