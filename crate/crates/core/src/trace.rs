//! Per-kernel instrumentation hooks used for call accounting and timing.

use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kernel {
    Warp,
    Scale,
    Embed,
    Similarity,
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelEvent {
    pub kernel: Kernel,
    pub level: usize,
    pub elapsed: Duration,
}

pub trait Tracer {
    fn record(&mut self, event: KernelEvent);
}

impl<F: FnMut(KernelEvent)> Tracer for F {
    fn record(&mut self, event: KernelEvent) {
        self(event)
    }
}

/// Discards every event.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoTrace;

impl Tracer for NoTrace {
    fn record(&mut self, _: KernelEvent) {}
}

pub(crate) fn timed<T>(
    tracer: &mut dyn Tracer,
    kernel: Kernel,
    level: usize,
    f: impl FnOnce() -> T,
) -> T {
    let start = Instant::now();
    let out = f();
    tracer.record(KernelEvent {
        kernel,
        level,
        elapsed: start.elapsed(),
    });
    out
}

/// Collects events for later inspection.
#[derive(Debug, Default, Clone)]
pub struct EventLog {
    pub events: Vec<KernelEvent>,
}

impl EventLog {
    pub fn count(&self, kernel: Kernel) -> usize {
        self.events.iter().filter(|e| e.kernel == kernel).count()
    }

    pub fn total(&self, kernel: Kernel) -> Duration {
        self.events
            .iter()
            .filter(|e| e.kernel == kernel)
            .map(|e| e.elapsed)
            .sum()
    }
}

impl Tracer for EventLog {
    fn record(&mut self, event: KernelEvent) {
        self.events.push(event);
    }
}
