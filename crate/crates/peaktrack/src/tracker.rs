//! Profiling lifecycle: a background sampler that accumulates per-scope
//! peaks, a bounded join protocol for shutting it down, and the unit system
//! used when materializing results.
//!
//! A tracker is single-use and moves one way through
//! Created -> Running -> Stopped. Every other transition is an error.
//! Memory maxima are kept in integer bytes and scaled only when results are
//! read, so the `total = private + shared` identity survives untouched.

use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex, MutexGuard, PoisonError};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gpu_metrics::{
    query_gpu_usage, snapshot_gpu, GpuBackend, GpuQuery, GpuSnapshot, GpuUsageMap,
    NvidiaSmiBackend,
};
use crate::proc_metrics::{Pid, ProcError, ProcfsRamSource, RamSnapshot, RamSource, RssValues};

const RAM_UNIT_NAMES: &str = "'bytes', 'kilobytes', 'megabytes', 'gigabytes', 'terabytes'";
const TIME_UNIT_NAMES: &str = "'seconds', 'minutes', 'hours', 'days'";

/// Decimal memory units: each step is a factor of 1000.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RamUnit {
    Bytes,
    Kilobytes,
    Megabytes,
    Gigabytes,
    Terabytes,
}

impl RamUnit {
    fn divisor(self) -> f64 {
        match self {
            RamUnit::Bytes => 1e0,
            RamUnit::Kilobytes => 1e3,
            RamUnit::Megabytes => 1e6,
            RamUnit::Gigabytes => 1e9,
            RamUnit::Terabytes => 1e12,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RamUnit::Bytes => "bytes",
            RamUnit::Kilobytes => "kilobytes",
            RamUnit::Megabytes => "megabytes",
            RamUnit::Gigabytes => "gigabytes",
            RamUnit::Terabytes => "terabytes",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Seconds,
    Minutes,
    Hours,
    Days,
}

impl TimeUnit {
    fn divisor(self) -> f64 {
        match self {
            TimeUnit::Seconds => 1.0,
            TimeUnit::Minutes => 60.0,
            TimeUnit::Hours => 3600.0,
            TimeUnit::Days => 86400.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TimeUnit::Seconds => "seconds",
            TimeUnit::Minutes => "minutes",
            TimeUnit::Hours => "hours",
            TimeUnit::Days => "days",
        }
    }
}

/// Rejection of a unit name outside the closed vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid {kind} unit {given:?}: expected one of {allowed}")]
pub struct InvalidUnit {
    kind: &'static str,
    given: String,
    allowed: &'static str,
}

impl FromStr for RamUnit {
    type Err = InvalidUnit;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bytes" => Ok(RamUnit::Bytes),
            "kilobytes" => Ok(RamUnit::Kilobytes),
            "megabytes" => Ok(RamUnit::Megabytes),
            "gigabytes" => Ok(RamUnit::Gigabytes),
            "terabytes" => Ok(RamUnit::Terabytes),
            other => Err(InvalidUnit {
                kind: "RAM",
                given: other.to_string(),
                allowed: RAM_UNIT_NAMES,
            }),
        }
    }
}

impl FromStr for TimeUnit {
    type Err = InvalidUnit;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "seconds" => Ok(TimeUnit::Seconds),
            "minutes" => Ok(TimeUnit::Minutes),
            "hours" => Ok(TimeUnit::Hours),
            "days" => Ok(TimeUnit::Days),
            other => Err(InvalidUnit {
                kind: "time",
                given: other.to_string(),
                allowed: TIME_UNIT_NAMES,
            }),
        }
    }
}

impl std::fmt::Display for RamUnit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::fmt::Display for TimeUnit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scales a byte count into the given unit.
pub fn convert_ram(bytes: u64, unit: RamUnit) -> f64 {
    bytes as f64 / unit.divisor()
}

/// Scales an elapsed duration in seconds into the given unit.
pub fn convert_time(seconds: f64, unit: TimeUnit) -> f64 {
    seconds / unit.divisor()
}

/// All profiling knobs. `process_id` of `None` tracks the calling process.
#[derive(Debug, Clone)]
pub struct TrackerConfig {
    pub sleep_time: Duration,
    pub ram_unit: RamUnit,
    pub gpu_ram_unit: RamUnit,
    pub time_unit: TimeUnit,
    pub process_id: Option<Pid>,
    pub n_join_attempts: u32,
    pub join_timeout: Duration,
    pub kill_if_join_fails: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            sleep_time: Duration::from_secs(1),
            ram_unit: RamUnit::Gigabytes,
            gpu_ram_unit: RamUnit::Gigabytes,
            time_unit: TimeUnit::Hours,
            process_id: None,
            n_join_attempts: 5,
            join_timeout: Duration::from_secs(10),
            kill_if_join_fails: false,
        }
    }
}

impl TrackerConfig {
    fn validate(&self) -> Result<(), TrackerError> {
        if self.sleep_time.is_zero() {
            return Err(TrackerError::Config("sleep_time must be positive".into()));
        }
        if self.n_join_attempts == 0 {
            return Err(TrackerError::Config(
                "n_join_attempts must be at least 1".into(),
            ));
        }
        if self.join_timeout.is_zero() {
            return Err(TrackerError::Config("join_timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{operation} requires a {expected} tracker, but this one is {actual}")]
    Lifecycle {
        operation: &'static str,
        expected: &'static str,
        actual: &'static str,
    },
    #[error(transparent)]
    Platform(#[from] ProcError),
    #[error("could not spawn sampler thread: {0}")]
    Spawn(#[source] std::io::Error),
}

/// Resident-set sizes scaled into the report unit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScaledRss {
    pub total_rss: f64,
    pub private_rss: f64,
    pub shared_rss: f64,
}

/// Peak RAM figures, scaled. `system_capacity` is the machine constant;
/// every other figure is the running maximum observed for its scope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxRam {
    pub unit: RamUnit,
    pub system_capacity: f64,
    pub system: f64,
    pub main: ScaledRss,
    pub descendents: ScaledRss,
    pub combined: ScaledRss,
}

/// Peak GPU RAM figures, scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxGpuRam {
    pub unit: RamUnit,
    pub main: f64,
    pub descendents: f64,
    pub combined: f64,
}

/// Elapsed wall-clock time, scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeTime {
    pub unit: TimeUnit,
    pub time: f64,
}

/// The complete measurement set. Frozen once the tracker stops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingResults {
    pub max_ram: MaxRam,
    pub max_gpu_ram: MaxGpuRam,
    pub compute_time: ComputeTime,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Per-scope running maxima in canonical bytes. Each RSS scope is keyed on
/// its total: when a sample's total beats the stored one, the whole triple
/// observed with that winning total replaces the stored triple.
#[derive(Debug, Clone, Copy, Default)]
struct MaximaBytes {
    system_capacity: u64,
    system_used: u64,
    main: RssValues,
    descendents: RssValues,
    combined: RssValues,
    gpu_main: u64,
    gpu_descendents: u64,
    gpu_combined: u64,
}

impl MaximaBytes {
    fn update_ram(&mut self, sample: &RamSnapshot) {
        if self.system_capacity == 0 {
            self.system_capacity = sample.system_capacity;
        }
        self.system_used = self.system_used.max(sample.system_used);
        for (stored, observed) in [
            (&mut self.main, &sample.main),
            (&mut self.descendents, &sample.descendents),
            (&mut self.combined, &sample.combined),
        ] {
            if observed.total_rss > stored.total_rss {
                *stored = *observed;
            }
        }
    }

    fn update_gpu(&mut self, sample: &GpuSnapshot) {
        self.gpu_main = self.gpu_main.max(sample.main);
        self.gpu_descendents = self.gpu_descendents.max(sample.descendents);
        self.gpu_combined = self.gpu_combined.max(sample.combined);
    }
}

#[derive(Debug, Default)]
struct SampleData {
    maxima: MaximaBytes,
    notes: Vec<String>,
    gpu_unavailable_noted: bool,
    gpu_timeout_noted: bool,
    gpu_parse_noted: bool,
    target_missing_noted: bool,
}

struct Shared {
    stop: Mutex<bool>,
    stop_signal: Condvar,
    finished: Mutex<bool>,
    finished_signal: Condvar,
    data: Mutex<SampleData>,
}

fn lock<T>(mutex: &Mutex<T>) -> MutexGuard<'_, T> {
    mutex.lock().unwrap_or_else(PoisonError::into_inner)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Created,
    Running,
    Stopped,
}

impl State {
    fn name(self) -> &'static str {
        match self {
            State::Created => "created",
            State::Running => "running",
            State::Stopped => "stopped",
        }
    }
}

/// Profiles peak RAM, peak GPU RAM, and wall-clock time of a target process
/// and its descendants via a background sampling thread.
pub struct Tracker {
    config: TrackerConfig,
    target: Pid,
    state: State,
    sources: Option<(Box<dyn RamSource>, Box<dyn GpuBackend>)>,
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
    started_at: Option<Instant>,
    frozen: Option<TrackingResults>,
}

impl Tracker {
    /// Builds a tracker over the production sources: procfs for RAM and the
    /// vendor query tool for GPU RAM. Validates the configuration and that
    /// the system memory facility is readable.
    pub fn new(config: TrackerConfig) -> Result<Self, TrackerError> {
        let ram = ProcfsRamSource::new()?;
        Self::with_sources(config, ram, NvidiaSmiBackend::new())
    }

    /// Builds a tracker over caller-supplied sources, letting tests drive
    /// the sampler with scripted values.
    pub fn with_sources(
        config: TrackerConfig,
        ram_source: impl RamSource + 'static,
        gpu_backend: impl GpuBackend + 'static,
    ) -> Result<Self, TrackerError> {
        config.validate()?;
        let target = config.process_id.unwrap_or_else(Pid::current);
        Ok(Tracker {
            config,
            target,
            state: State::Created,
            sources: Some((Box::new(ram_source), Box::new(gpu_backend))),
            shared: Arc::new(Shared {
                stop: Mutex::new(false),
                stop_signal: Condvar::new(),
                finished: Mutex::new(false),
                finished_signal: Condvar::new(),
                data: Mutex::new(SampleData::default()),
            }),
            handle: None,
            started_at: None,
            frozen: None,
        })
    }

    /// The process being tracked.
    pub fn target(&self) -> Pid {
        self.target
    }

    fn lifecycle_error(&self, operation: &'static str, expected: &'static str) -> TrackerError {
        TrackerError::Lifecycle {
            operation,
            expected,
            actual: self.state.name(),
        }
    }

    /// Launches the background sampler. The first sample is taken
    /// immediately, then one per `sleep_time`.
    pub fn start(&mut self) -> Result<(), TrackerError> {
        if self.state != State::Created {
            return Err(self.lifecycle_error("start", "created"));
        }
        let (ram, gpu) = self.sources.take().expect("sources present in created state");
        let shared = Arc::clone(&self.shared);
        let target = self.target;
        let sleep_time = self.config.sleep_time;
        self.started_at = Some(Instant::now());
        let handle = std::thread::Builder::new()
            .name("peaktrack-sampler".to_string())
            .spawn(move || sampler_loop(shared, ram, gpu, target, sleep_time))
            .map_err(TrackerError::Spawn)?;
        self.handle = Some(handle);
        self.state = State::Running;
        Ok(())
    }

    /// Signals the sampler to finish and waits for it, retrying up to
    /// `n_join_attempts` waits of `join_timeout` each. The elapsed time is
    /// stamped on entry, so a stubborn sampler never inflates the reported
    /// compute time. If every attempt times out the sampler is abandoned
    /// with a warning note, or the whole program is terminated when
    /// `kill_if_join_fails` is set.
    pub fn stop(&mut self) -> Result<TrackingResults, TrackerError> {
        if self.state != State::Running {
            return Err(self.lifecycle_error("stop", "running"));
        }
        let elapsed = self
            .started_at
            .expect("running tracker has a start time")
            .elapsed();

        *lock(&self.shared.stop) = true;
        self.shared.stop_signal.notify_all();

        let mut joined = false;
        {
            let mut finished = lock(&self.shared.finished);
            for _ in 0..self.config.n_join_attempts {
                let (guard, _) = self
                    .shared
                    .finished_signal
                    .wait_timeout_while(finished, self.config.join_timeout, |done| !*done)
                    .unwrap_or_else(PoisonError::into_inner);
                finished = guard;
                if *finished {
                    joined = true;
                    break;
                }
            }
        }

        let mut join_note = None;
        if joined {
            if let Some(handle) = self.handle.take() {
                let _ = handle.join();
            }
        } else {
            let note = format!(
                "sampler thread failed to stop after {} join attempts of {:.3}s each; \
                 results reflect samples taken so far",
                self.config.n_join_attempts,
                self.config.join_timeout.as_secs_f64()
            );
            if self.config.kill_if_join_fails {
                eprintln!("{note}; terminating as configured");
                std::process::exit(1);
            }
            join_note = Some(note);
            drop(self.handle.take());
        }

        let mut results = {
            let data = lock(&self.shared.data);
            self.materialize(&data, elapsed)
        };
        if let Some(note) = join_note {
            results.notes.push(note);
        }
        self.frozen = Some(results.clone());
        self.state = State::Stopped;
        Ok(results)
    }

    /// A self-consistent view of the measurements so far. While running the
    /// compute time is read live; after `stop` the frozen results are
    /// returned unchanged on every call.
    pub fn current_results(&self) -> Result<TrackingResults, TrackerError> {
        match self.state {
            State::Created => Err(self.lifecycle_error("current_results", "running or stopped")),
            State::Running => {
                let elapsed = self
                    .started_at
                    .expect("running tracker has a start time")
                    .elapsed();
                let data = lock(&self.shared.data);
                Ok(self.materialize(&data, elapsed))
            }
            State::Stopped => Ok(self
                .frozen
                .clone()
                .expect("stopped tracker has frozen results")),
        }
    }

    fn materialize(&self, data: &SampleData, elapsed: Duration) -> TrackingResults {
        let scale = |rss: RssValues| ScaledRss {
            total_rss: convert_ram(rss.total_rss, self.config.ram_unit),
            private_rss: convert_ram(rss.private_rss, self.config.ram_unit),
            shared_rss: convert_ram(rss.shared_rss, self.config.ram_unit),
        };
        let m = &data.maxima;
        TrackingResults {
            max_ram: MaxRam {
                unit: self.config.ram_unit,
                system_capacity: convert_ram(m.system_capacity, self.config.ram_unit),
                system: convert_ram(m.system_used, self.config.ram_unit),
                main: scale(m.main),
                descendents: scale(m.descendents),
                combined: scale(m.combined),
            },
            max_gpu_ram: MaxGpuRam {
                unit: self.config.gpu_ram_unit,
                main: convert_ram(m.gpu_main, self.config.gpu_ram_unit),
                descendents: convert_ram(m.gpu_descendents, self.config.gpu_ram_unit),
                combined: convert_ram(m.gpu_combined, self.config.gpu_ram_unit),
            },
            compute_time: ComputeTime {
                unit: self.config.time_unit,
                time: convert_time(elapsed.as_secs_f64(), self.config.time_unit),
            },
            notes: data.notes.clone(),
        }
    }
}

fn sampler_loop(
    shared: Arc<Shared>,
    mut ram_source: Box<dyn RamSource>,
    mut gpu_backend: Box<dyn GpuBackend>,
    target: Pid,
    sleep_time: Duration,
) {
    let mut first_tick = true;
    loop {
        sample_once(
            &shared,
            ram_source.as_mut(),
            gpu_backend.as_mut(),
            target,
            first_tick,
        );
        first_tick = false;

        let stopped = lock(&shared.stop);
        let (stopped, _) = shared
            .stop_signal
            .wait_timeout_while(stopped, sleep_time, |stop| !*stop)
            .unwrap_or_else(PoisonError::into_inner);
        if *stopped {
            break;
        }
    }
    *lock(&shared.finished) = true;
    shared.finished_signal.notify_all();
}

/// One collection tick: observe RAM, query GPU, fold both into the maxima.
/// All measurement happens outside the data lock; the lock only covers the
/// maxima update, so readers never see a torn scope.
fn sample_once(
    shared: &Shared,
    ram_source: &mut dyn RamSource,
    gpu_backend: &mut dyn GpuBackend,
    target: Pid,
    first_tick: bool,
) {
    let observation = ram_source.observe(target);
    let gpu_query = query_gpu_usage(gpu_backend);
    let gpu_snapshot = match &gpu_query {
        Ok(GpuQuery::Usage(usage)) => {
            snapshot_gpu(target, observation.descendants.iter().copied(), usage)
        }
        _ => snapshot_gpu(target, [], &GpuUsageMap::new()),
    };

    let mut data = lock(&shared.data);
    data.maxima.update_ram(&observation.ram);
    data.maxima.update_gpu(&gpu_snapshot);

    if first_tick && !observation.target_alive && !data.target_missing_noted {
        data.target_missing_noted = true;
        data.notes.push(format!(
            "target process {target} was not running at start; process-scoped figures stay 0"
        ));
    }
    match gpu_query {
        Ok(GpuQuery::Usage(_)) => {}
        Ok(GpuQuery::Unavailable(reason)) => {
            if !data.gpu_unavailable_noted {
                data.gpu_unavailable_noted = true;
                data.notes.push(format!("GPU unavailable: {reason}"));
            }
        }
        Ok(GpuQuery::TimedOut) => {
            if !data.gpu_timeout_noted {
                data.gpu_timeout_noted = true;
                data.notes
                    .push("GPU query timed out; GPU figures may be incomplete".to_string());
            }
        }
        Err(err) => {
            if !data.gpu_parse_noted {
                data.gpu_parse_noted = true;
                data.notes.push(format!("GPU query output rejected: {err}"));
            }
        }
    }
}

/// Runs `body` with tracking around it: build, start, run, stop. The
/// tracker is stopped even when `body` panics, and the panic then resumes
/// after shutdown.
pub fn scoped_track<T>(
    config: TrackerConfig,
    body: impl FnOnce() -> T,
) -> Result<(TrackingResults, T), TrackerError> {
    let mut tracker = Tracker::new(config)?;
    tracker.start()?;
    let outcome = catch_unwind(AssertUnwindSafe(body));
    let stopped = tracker.stop();
    match outcome {
        Ok(value) => Ok((stopped?, value)),
        Err(panic) => resume_unwind(panic),
    }
}
