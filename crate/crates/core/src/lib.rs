//! Repeated-interaction measurement of a two-level system and its diffusive
//! limit.
//!
//! A qubit meets one two-level field probe per time step `1/n`; the probe is
//! then measured. [`discrete`] simulates the resulting Markov chain of states,
//! [`sde`] the limiting Belavkin diffusion, and [`lab`] compares the two.

pub mod discrete;
pub mod lab;
pub mod linalg;
pub mod model;
pub mod sde;
pub mod seed;

pub use discrete::{run_trajectory, MeasurementChannel, TrajectoryError, TrajectoryRecord};
pub use linalg::{c, CMat2, CMat4, CVec2, C64};
pub use model::{
    AnticommutatorOrder, DensityMatrix, FieldHamiltonian, ModelConfig, ModelError, Observable,
    WaveFunction,
};
pub use sde::{master_evolve, simulate_physical, simulate_sde, simulate_wave, SdeError};
