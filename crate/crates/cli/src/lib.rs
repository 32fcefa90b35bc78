//! IO, file formats and run orchestration around `sptmod-core`: checkpoint
//! save/load, WAV handling, line-delimited run records, and the threaded
//! grid runner behind the `sptmod` command line.

pub mod checkpoint;
pub mod records;
pub mod runner;
pub mod wav;

use std::time::Instant;

use sptmod_core::clock::Clock;

/// Monotonic wall clock for training runs.
pub struct SystemClock {
    start: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { start: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}
