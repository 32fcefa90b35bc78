//! Wall-clock abstraction. The core crate is `no_std`, so the trainer takes
//! its notion of time from the caller; the CLI crate injects a monotonic
//! clock, tests use [`NullClock`].

pub trait Clock {
    /// Monotonic time in seconds. Only differences are meaningful.
    fn now(&self) -> f64;
}

/// Clock that always reads zero; timing fields come out as zero.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullClock;

impl Clock for NullClock {
    fn now(&self) -> f64 {
        0.0
    }
}
