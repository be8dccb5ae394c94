//! Benchmark plants and experiment drivers.

mod door;
mod experiments;
mod linear;
mod smooth;
mod two_mass;

pub use linear::{LinearSystem, QuadraticCost};
pub use smooth::{smooth_max, smooth_max_d1, smooth_max_d2, smooth_max_integral};
pub use two_mass::{two_mass_model, TwoMass, TwoMassConfig, TwoMassCost};
pub use door::{door_analog_model, DoorAnalog, DoorConfig, DoorCost};
pub use experiments::{
    derive_seed, gain_sequence_variability, gain_variability, grid_sweep, noise_robustness, spearman, LevelStats, NoiseKind, Objective, Plant,
    RobustnessOptions, RobustnessResult, SweepCell, SweepResult,
};
