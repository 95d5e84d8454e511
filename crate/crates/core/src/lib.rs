//! Krotov optimal control of Schrödinger-cat transfer through a chain of
//! coupled harmonic oscillators, and robustness analysis of the resulting
//! controls under a non-Markovian Ornstein-Uhlenbeck bath.
//!
//! The numerical core is generic over the real scalar type ([`Real`]); the
//! `*64` aliases below fix it to `f64`, which is what every tolerance in the
//! test-suite assumes.

pub mod error;
pub mod fock;
pub mod io;
pub mod krotov;
pub mod linalg;
pub mod model;
pub mod observables;
pub mod open_system;
pub mod propagate;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{Real, C};

pub type OperatorMatrix64 = fock::OperatorMatrix<f64>;
pub type OperatorMatrix32 = fock::OperatorMatrix<f32>;
pub type StateVector64 = fock::StateVector<f64>;
pub type StateVector32 = fock::StateVector<f32>;
pub type DensityMatrix64 = fock::DensityMatrix<f64>;
pub type DensityMatrix32 = fock::DensityMatrix<f32>;
pub type ChainModel64 = model::ChainModel<f64>;
pub type ControlLayout64 = model::ControlLayout<f64>;
pub type TimeGrid64 = propagate::TimeGrid<f64>;
pub type ControlSet64 = propagate::ControlSet<f64>;
pub type ControlSet32 = propagate::ControlSet<f32>;
pub type Trajectory64 = propagate::Trajectory<f64>;
pub type KrotovConfig64 = krotov::KrotovConfig<f64>;
pub type IterationRecord64 = krotov::IterationRecord<f64>;
pub type BathSpec64 = open_system::BathSpec<f64>;
pub type LinearModeOperator64 = open_system::LinearModeOperator<f64>;
pub type OpenSystem64 = open_system::OpenSystem<f64>;
pub type WignerGrid64 = observables::WignerGrid<f64>;
