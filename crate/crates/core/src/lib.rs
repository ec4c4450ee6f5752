//! Interacting-particle checks of the Ito formula for flows of measures, with two
//! mean-field control applications (LQ jump-diffusion and mean-variance singular control).

pub mod cli;
pub mod error;
pub mod functional;
pub mod ito;
pub mod lq;
pub mod measure;
pub mod mv;
pub mod numeric;
pub mod polynomial;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
