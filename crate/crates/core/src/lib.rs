//! Dynamical-decoupling analysis for qubits under classical Gaussian
//! dephasing noise with soft (power-law) spectral cutoffs.
//!
//! The crate covers pulse sequences and their modulation functions, noise
//! models, the decoherence functional `χ(T)` and its short-time expansion,
//! the constrained design of optimal sequences, and a Monte Carlo check.

pub mod decoherence;
pub mod error;
pub mod noise;
pub mod optimize;
pub mod quad;
pub mod sequences;
pub mod verify;

pub use decoherence::{
    chi_series, chi_spectral, chi_time_domain, decoherence_report, decoupling_order, filter, lambda_m, lambda_pi,
    lambdas, phi_even_bilinear, phi_k_bruteforce, phi_k_closed, phi_odd_spectral, ChiMethod, DecoherenceReport,
    Estimate, FilterEvaluation, FilterKernel, ScalingFit,
};
pub use error::{Error, Result};
pub use noise::{CorrelationExpansion, NoiseFamily, NoiseModel, NoiseSpec, SpectralSupport, TailDescriptor};
pub use sequences::{
    modulation_of, multiqubit_modulation, Modulation, MultiQubitPulseProgram, PiecewiseModulation, PulseSequence,
    QubitPulse, SequenceFamily,
};
