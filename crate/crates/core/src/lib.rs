//! Simulation and randomness metrology for a phase-diffusion quantum
//! random number generator.
//!
//! The signal chain runs from gain-switched laser pulses through an
//! unbalanced interferometer ([`photonics`]), a one-bit comparator with a
//! feedback-controlled reference ([`digitizer`]) and a running-parity
//! extractor ([`extractor`]). [`metrology`] bounds the predictability of the
//! resulting bits, [`stats`] checks them, and [`heterodyne`] analyses beat-note
//! traces for the |ℰ|⁻¹ phase-diffusion signature.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below pin the common choices.

// `!(x > 0.0)` rejects NaN along with the out-of-range values, and the
// dense linear algebra reads best with explicit indices.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod arcsine;
pub mod config;
pub mod digitizer;
pub mod error;
pub mod extractor;
pub mod heterodyne;
pub mod metrology;
pub mod model;
pub mod numeric;
pub mod photonics;
pub mod pipeline;
pub mod real;
pub mod stats;

pub use error::{Error, Result};
pub use extractor::{BitStream, StreamKind};
pub use model::{default_noise_model, DistrustLevel, HangoverMode, PhaseMode, SimConfig};
pub use real::Real;

pub type NoiseModelF64 = model::NoiseModel<f64>;
pub type NoiseModelF32 = model::NoiseModel<f32>;
pub type TimingBudgetF64 = model::TimingBudget<f64>;
pub type PulseSampleF64 = photonics::PulseSample<f64>;
pub type PulseSimulatorF64 = photonics::PulseSimulator<f64>;
pub type PulseSimulatorF32 = photonics::PulseSimulator<f32>;
pub type PredictabilityReportF64 = metrology::PredictabilityReport<f64>;
pub type ComparatorStateF64 = digitizer::ComparatorState<f64>;
pub type FieldEstimateF64 = heterodyne::FieldEstimate<f64>;
pub type HeterodyneTraceF64 = heterodyne::HeterodyneTrace<f64>;
