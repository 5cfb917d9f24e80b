//! Gain-scheduled H2 controller synthesis for plants in linear fractional
//! form, by lifting the scheduling channel to a passive one and searching
//! over full block scalings.

pub mod error;
pub mod matkit;
pub mod sdp;
pub mod lfr;
pub mod lifting;
pub mod scalings;
pub mod synthesis;
pub mod reconstruct;
pub mod verify;
pub mod instances;
pub mod cli;

pub use error::{Error, Result};
