//! Shared rigs for the integration suites.

#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use peaktrack::{Pid, RamObservation, RamSource, RssValues};

/// Serves a script of observations round-robin forever, so readers stay
/// under pressure for as long as the sampler runs.
pub struct CyclingRamSource {
    script: Vec<RamObservation>,
    cursor: usize,
}

impl CyclingRamSource {
    pub fn new(script: Vec<RamObservation>) -> Self {
        assert!(!script.is_empty());
        CyclingRamSource { script, cursor: 0 }
    }
}

impl RamSource for CyclingRamSource {
    fn observe(&mut self, _target: Pid) -> RamObservation {
        let observation = self.script[self.cursor % self.script.len()].clone();
        self.cursor += 1;
        observation
    }
}

/// Never returns: stands in for a sampler that ignores the stop signal.
pub struct BlockingRamSource;

impl RamSource for BlockingRamSource {
    fn observe(&mut self, _target: Pid) -> RamObservation {
        loop {
            std::thread::sleep(Duration::from_secs(3600));
        }
    }
}

/// Builds an observation whose scopes are exactly the given
/// (private, shared) pairs; totals are derived so the identity holds.
pub fn observation(
    system: (u64, u64),
    main: (u64, u64),
    descendents: (u64, u64),
    combined: (u64, u64),
) -> RamObservation {
    let mut obs = RamObservation::default();
    obs.ram.system_capacity = system.0;
    obs.ram.system_used = system.1;
    obs.ram.main = RssValues::from_parts(main.0, main.1);
    obs.ram.descendents = RssValues::from_parts(descendents.0, descendents.1);
    obs.ram.combined = RssValues::from_parts(combined.0, combined.1);
    obs.ram.decomposition_available = true;
    obs
}

/// Command string for a child that holds a touched buffer of the given
/// size for a while: a single allocation plus a small interpreter footprint.
pub fn memory_hog_command(megabytes: u64, hold_seconds: f64) -> String {
    format!(
        "python3 -c \"b = b'x' * ({megabytes} * 10**6); import time; time.sleep({hold_seconds})\""
    )
}

pub fn require_python3() {
    let found = std::process::Command::new("python3")
        .arg("--version")
        .output()
        .is_ok();
    assert!(found, "these integration tests need python3 on PATH");
}

/// Spins until the counter reaches `at_least` samples or ten seconds pass.
pub fn wait_for_samples(counter: &AtomicUsize, at_least: usize) {
    let deadline = Instant::now() + Duration::from_secs(10);
    while counter.load(Ordering::SeqCst) < at_least {
        assert!(Instant::now() < deadline, "sampler made no progress");
        std::thread::sleep(Duration::from_micros(200));
    }
}

pub fn shared_counter(source: &peaktrack::ScriptedRamSource) -> Arc<AtomicUsize> {
    source.served_counter()
}
