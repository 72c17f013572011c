//! Near-Maxwellian Vlasov-Poisson-Landau kinetics on a velocity lattice.
//!
//! The crate is organised bottom-up: [`grid`] provides the lattices and
//! quadrature, [`landau`] the collision kernel and its convolution engine,
//! [`operators`] the linearized operators, [`field`] the Poisson coupling,
//! [`geometry`] wall geometry and boundary-flattening charts, [`solver`] the
//! time stepper and [`diagnostics`] every functional reported along a run.

pub mod assess;
pub mod checks;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod fft;
pub mod field;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod landau;
pub mod lattice;
pub mod operators;
pub mod solver;
pub mod stencil;
pub mod sym;

pub use error::{Result, VplError};
pub use exec::Exec;
