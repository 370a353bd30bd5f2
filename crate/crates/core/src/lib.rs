//! Model-free mixed H2/H-infinity state-feedback synthesis for
//! continuous-time stochastic linear systems.

pub mod cruise;
pub mod error;
pub mod fixtures;
pub mod gare;
pub mod hinf;
pub mod learner;
pub mod lti;
pub mod matops;
pub mod narmax;
pub mod pipeline;
pub mod simsde;

pub use error::{Error, Result};
