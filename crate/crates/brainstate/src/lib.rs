//! Files, datasets and the command-line driver around `brainstate-core`.

pub mod bench;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod formats;

pub use brainstate_core as core;
pub use error::{Error, Result};

use std::time::Instant;

use brainstate_core::models::Clock;

/// Monotonic wall clock measured from its creation.
#[derive(Debug, Clone, Copy)]
pub struct StdClock(Instant);

impl StdClock {
    pub fn new() -> Self {
        StdClock(Instant::now())
    }
}

impl Default for StdClock {
    fn default() -> Self {
        StdClock::new()
    }
}

impl Clock for StdClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
