//! Simulation and analysis of longitudinal Stern-Gerlach interferometry on an atom chip.
//!
//! Wavepackets of ⁸⁷Rb in the F=2, mF=1 and mF=2 states are split, stopped and recombined by
//! magnetic gradient pulses from a three-wire chip. Visibility is computed three ways: a
//! Crank-Nicolson solve in 1D ([`quantum`]), a semiclassical propagation with overlap
//! integrals ([`dynamics`]), and closed-form expressions ([`hd`], [`noise`]).

pub mod constants;
pub mod error;
pub mod field;
pub mod dynamics;
pub mod fringe;
pub mod hd;
pub mod lm;
pub mod noise;
pub mod phase_space;
pub mod pipeline;
pub mod quantum;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod sequence;
pub mod wigner;

pub use constants::PhysicalConstants;
pub use error::{DynamicsError, FieldError, FitError, ScenarioError, SimError, SolverError};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/field.md")]
    mod field {}
    #[doc = include_str!("../../../book/src/phase_space.md")]
    mod phase_space {}
    #[doc = include_str!("../../../book/src/quantum.md")]
    mod quantum {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/recombination.md")]
    mod recombination {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/fringes.md")]
    mod fringes {}
    #[doc = include_str!("../../../book/src/sequences.md")]
    mod sequences {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
