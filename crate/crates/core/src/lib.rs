//! Simulation of rapid-adiabatic-passage phase-imprint (RAPPI) photon-echo quantum memories and
//! the two-pulse photon echo baseline.
//!
//! The numerical modules are generic over the scalar type (`f32` or `f64`); the aliases at the
//! crate root fix it to `f64`.

pub mod analysis;
pub mod bloch;
pub mod ensemble;
pub mod propagation;
pub mod protocol;
pub mod pulse;
pub mod ram;
pub mod real;

pub use real::Real;

pub type PulseSpec = pulse::PulseSpec<f64>;
pub type SampledEnvelope = pulse::SampledEnvelope<f64>;
pub type AtomParams = bloch::AtomParams<f64>;
pub type BlochVector = bloch::BlochVector<f64>;
pub type EnsembleSpec = ensemble::EnsembleSpec<f64>;
pub type EnsembleTrace = ensemble::EnsembleTrace<f64>;
pub type MediumSpec = propagation::MediumSpec<f64>;
pub type ProtocolRun = protocol::ProtocolRun<f64>;
