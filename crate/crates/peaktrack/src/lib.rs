//! Peak resource profiling for a process and everything it spawns.
//!
//! `peaktrack` watches a computing task from a background sampling thread
//! and keeps the peak RAM usage (with a private/shared resident-set
//! decomposition across the whole process tree), the peak per-process GPU
//! RAM usage, and the wall-clock time of the tracked span. Results come
//! back in the units you pick and render as plain text or JSON.
//!
//! Profile a block of code in the current process:
//!
//! ```
//! use peaktrack::{scoped_track, TrackerConfig};
//!
//! let (results, sum) = scoped_track(TrackerConfig::default(), || {
//!     (0..1_000_000u64).sum::<u64>()
//! })?;
//! assert!(results.max_ram.main.total_rss > 0.0);
//! println!("{}", peaktrack::render_text(&results));
//! # let _ = sum;
//! # Ok::<(), peaktrack::TrackerError>(())
//! ```
//!
//! Or drive the lifecycle by hand, optionally pointing at another process:
//!
//! ```no_run
//! use peaktrack::{Pid, Tracker, TrackerConfig};
//!
//! let config = TrackerConfig {
//!     process_id: Pid::new(12345),
//!     ..TrackerConfig::default()
//! };
//! let mut tracker = Tracker::new(config)?;
//! tracker.start()?;
//! // ... the watched process does its work ...
//! let results = tracker.stop()?;
//! println!("{}", peaktrack::render_json(&results));
//! # Ok::<(), peaktrack::TrackerError>(())
//! ```
//!
//! The `peaktrack` binary wraps the same machinery around an arbitrary
//! shell command; see the crate examples for more entry points.

pub mod cli;
pub mod gpu_metrics;
pub mod proc_metrics;
pub mod report;
pub mod tracker;

pub use gpu_metrics::{
    parse_compute_apps_csv, query_gpu_usage, snapshot_gpu, GpuBackend, GpuError, GpuFetch,
    GpuQuery, GpuSnapshot, GpuUsageMap, NvidiaSmiBackend, ReplayBackend,
};
pub use proc_metrics::{
    combine_rss, list_descendants, read_process_rss, read_system_memory, snapshot_ram, Pid,
    ProcError, ProcfsRamSource, RamObservation, RamSnapshot, RamSource, RssValues,
    ScriptedRamSource,
};
pub use report::{render, render_json, render_text, ReportFormat};
pub use tracker::{
    convert_ram, convert_time, scoped_track, ComputeTime, InvalidUnit, MaxGpuRam, MaxRam,
    RamUnit, ScaledRss, TimeUnit, Tracker, TrackerConfig, TrackerError, TrackingResults,
};
