//! Receding horizon stabilization of linear parabolic equations with
//! finitely many actuators, discretized by P1 finite elements in space and
//! Crank-Nicolson in time.

pub mod actuators;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod mesh;
pub mod optim;
pub mod prox;
pub mod rhc;
pub mod sparse;
pub mod theory;
pub mod timestepping;

pub use error::{Error, Result};
