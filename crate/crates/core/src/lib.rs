//! Numerical core for semantic erasure and injection on the initial noise of
//! diffusion and flow-matching generators.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every computation:
//! seeded Gaussian sampling and noise erasure, diffusion schedules and
//! temporal weighting, the toy flow-matching dataset and its hand-derived
//! RFF + FiLM velocity network, ODE / DDPM samplers, the injection pipeline,
//! an analytic Gaussian oracle and the point-set metrics. File formats, the
//! command line and anything touching the OS live in the `seminj` crate.
//!
//! All transcendental functions go through [`libm`], so results are
//! bit-reproducible across platforms for a fixed seed.

#![no_std]
#![warn(rust_2018_idioms, unused_qualifications)]

extern crate alloc;

pub mod checks;
pub mod error;
pub mod inject;
pub mod metrics;
pub mod net;
pub mod noise;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod toyflow;

pub use error::{Error, Result, Stage};
pub use tensor::NoiseTensor;
