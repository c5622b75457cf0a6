//! Stochastic epidemic models: simulation, branching and final-size
//! theory, deterministic limits, diffusion approximations and large
//! deviations.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod bigfixed;
pub mod branching;
pub mod error;
pub mod experiments;
pub mod final_size;
pub mod fluct;
pub mod ldp;
pub mod model;
pub mod numeric;
pub mod ode;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use model::{
    basic_reproduction_number, escape_probability, CompartmentalModel, EpidemicParams, ModelSpec,
    PeriodDistribution,
};
pub use rng::SeedSpec;
