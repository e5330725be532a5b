//! Per-process GPU memory accounting through a pluggable query backend.
//!
//! The production backend shells out to the vendor query tool and reads its
//! per-compute-app CSV; the replay backend serves recorded fixtures of the
//! identical format, so everything downstream of the backend is testable on
//! machines without a GPU. Machines without the tool are first-class: the
//! query reports unavailability as data, never as an error.

use std::collections::BTreeMap;
use std::io::Read;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::proc_metrics::Pid;

/// Reported GPU RAM per process, in bytes. Processes absent from the map
/// are using zero GPU RAM.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GpuUsageMap {
    entries: BTreeMap<Pid, u64>,
}

impl GpuUsageMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds to any existing figure for the pid, so one process visible on
    /// several devices is summed.
    pub fn add(&mut self, pid: Pid, gpu_ram_bytes: u64) {
        *self.entries.entry(pid).or_insert(0) += gpu_ram_bytes;
    }

    pub fn get(&self, pid: Pid) -> u64 {
        self.entries.get(&pid).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Pid, u64)> + '_ {
        self.entries.iter().map(|(&pid, &bytes)| (pid, bytes))
    }
}

impl FromIterator<(Pid, u64)> for GpuUsageMap {
    fn from_iter<T: IntoIterator<Item = (Pid, u64)>>(iter: T) -> Self {
        let mut map = GpuUsageMap::new();
        for (pid, bytes) in iter {
            map.add(pid, bytes);
        }
        map
    }
}

/// GPU RAM attributed to the main process, its descendants, and both
/// together, in bytes. GPU memory is assumed unshared, so combined is the
/// exact sum of the other two.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GpuSnapshot {
    pub main: u64,
    pub descendents: u64,
    pub combined: u64,
}

#[derive(Debug, Error)]
pub enum GpuError {
    #[error("gpu query output line {line_number} ({content:?}): {reason}")]
    Parse {
        line_number: usize,
        content: String,
        reason: String,
    },
}

/// What a backend produced on one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GpuFetch {
    /// Raw CSV text from the query tool.
    Output(String),
    /// No tool or no GPU; the reason is latched by production backends.
    Unavailable(String),
    /// This call exceeded the backend's timeout.
    TimedOut,
}

/// A parsed query outcome ready for attribution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GpuQuery {
    Usage(GpuUsageMap),
    Unavailable(String),
    TimedOut,
}

/// Source of GPU usage readings, injected into the sampler.
pub trait GpuBackend: Send {
    fn fetch(&mut self) -> GpuFetch;
}

/// Parses the per-compute-app CSV: a header row, then one
/// `pid, used_memory` row per process with the figure annotated in
/// mebibyte units. A reported figure of N is canonicalized as N x 10^6
/// bytes, matching how the figures are scaled downstream.
pub fn parse_compute_apps_csv(text: &str) -> Result<GpuUsageMap, GpuError> {
    let mut map = GpuUsageMap::new();
    let mut header_seen = false;
    for (index, line) in text.lines().enumerate() {
        let line_number = index + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if !header_seen {
            header_seen = true;
            continue;
        }
        let parse_err = |reason: String| GpuError::Parse {
            line_number,
            content: line.to_string(),
            reason,
        };
        let (pid_field, memory_field) = trimmed
            .split_once(',')
            .ok_or_else(|| parse_err("expected 'pid, used_memory'".to_string()))?;
        let raw_pid: u32 = pid_field
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("invalid pid {:?}", pid_field.trim())))?;
        let pid = Pid::new(raw_pid)
            .ok_or_else(|| parse_err("pid must be positive".to_string()))?;
        let memory_text = memory_field
            .trim()
            .trim_end_matches("MiB")
            .trim();
        let reported: u64 = memory_text
            .parse()
            .map_err(|_| parse_err(format!("invalid memory figure {:?}", memory_field.trim())))?;
        map.add(pid, reported * 1_000_000);
    }
    Ok(map)
}

/// Runs one backend query and parses it. Unavailability and timeouts pass
/// through as data; only malformed tool output is an error.
pub fn query_gpu_usage(backend: &mut dyn GpuBackend) -> Result<GpuQuery, GpuError> {
    match backend.fetch() {
        GpuFetch::Output(text) => parse_compute_apps_csv(&text).map(GpuQuery::Usage),
        GpuFetch::Unavailable(reason) => Ok(GpuQuery::Unavailable(reason)),
        GpuFetch::TimedOut => Ok(GpuQuery::TimedOut),
    }
}

/// Attributes a usage map to the main/descendants/combined scopes. Pids
/// missing from the map contribute zero.
pub fn snapshot_gpu(
    target: Pid,
    descendants: impl IntoIterator<Item = Pid>,
    usage: &GpuUsageMap,
) -> GpuSnapshot {
    let main = usage.get(target);
    let descendents: u64 = descendants.into_iter().map(|pid| usage.get(pid)).sum();
    GpuSnapshot {
        main,
        descendents,
        combined: main + descendents,
    }
}

/// Production backend invoking the vendor query tool as a child process.
///
/// A missing or failing tool latches an unavailability reason on first
/// contact and every later fetch returns it without re-spawning. A query
/// that outlives the timeout is killed and reported as [`GpuFetch::TimedOut`]
/// for that call only.
#[derive(Debug)]
pub struct NvidiaSmiBackend {
    command: String,
    timeout: Duration,
    unavailable: Option<String>,
}

impl NvidiaSmiBackend {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

    pub fn new() -> Self {
        Self::with_command("nvidia-smi")
    }

    /// Points the backend at a different executable; used by tests to
    /// stand in fake tools.
    pub fn with_command(command: impl Into<String>) -> Self {
        NvidiaSmiBackend {
            command: command.into(),
            timeout: Self::DEFAULT_TIMEOUT,
            unavailable: None,
        }
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn latch(&mut self, reason: String) -> GpuFetch {
        let reason = self.unavailable.get_or_insert(reason).clone();
        GpuFetch::Unavailable(reason)
    }

    fn run_query(&mut self) -> GpuFetch {
        let mut child = match Command::new(&self.command)
            .args(["--query-compute-apps=pid,used_memory", "--format=csv"])
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
        {
            Ok(child) => child,
            Err(err) if err.kind() == std::io::ErrorKind::NotFound => {
                return self.latch(format!("{} not found", self.command));
            }
            Err(err) => {
                return self.latch(format!("{} could not be launched: {err}", self.command));
            }
        };

        // Drain stdout on a helper thread so a chatty child never blocks on
        // a full pipe while this thread polls for exit.
        let mut stdout = child.stdout.take().expect("stdout was piped");
        let reader = std::thread::spawn(move || {
            let mut text = String::new();
            stdout.read_to_string(&mut text).map(|_| text)
        });

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if Instant::now() >= deadline => {
                    child.kill().ok();
                    child.wait().ok();
                    // The reader thread is abandoned, not joined: a
                    // grandchild of the killed tool can hold the pipe's
                    // write end open arbitrarily long.
                    return GpuFetch::TimedOut;
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(10)),
                Err(err) => {
                    child.kill().ok();
                    child.wait().ok();
                    return self.latch(format!("{} failed: {err}", self.command));
                }
            }
        };

        let output = reader.join().expect("reader thread never panics");
        match output {
            Ok(text) if status.success() => GpuFetch::Output(text),
            Ok(_) => self.latch(format!("{} exited with {status}", self.command)),
            Err(err) => self.latch(format!("{} output unreadable: {err}", self.command)),
        }
    }
}

impl Default for NvidiaSmiBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl GpuBackend for NvidiaSmiBackend {
    fn fetch(&mut self) -> GpuFetch {
        if let Some(reason) = &self.unavailable {
            return GpuFetch::Unavailable(reason.clone());
        }
        self.run_query()
    }
}

/// Replay backend serving recorded CSV fixtures in order, repeating the
/// final fixture once the recording is exhausted.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    fixtures: Vec<String>,
    cursor: usize,
}

impl ReplayBackend {
    pub fn new(fixtures: Vec<String>) -> Self {
        ReplayBackend { fixtures, cursor: 0 }
    }

    pub fn from_files<P: AsRef<std::path::Path>>(paths: &[P]) -> std::io::Result<Self> {
        let fixtures = paths
            .iter()
            .map(std::fs::read_to_string)
            .collect::<std::io::Result<Vec<_>>>()?;
        Ok(Self::new(fixtures))
    }
}

impl GpuBackend for ReplayBackend {
    fn fetch(&mut self) -> GpuFetch {
        if self.fixtures.is_empty() {
            return GpuFetch::Unavailable("replay backend has no fixtures".to_string());
        }
        let index = self.cursor.min(self.fixtures.len() - 1);
        self.cursor += 1;
        GpuFetch::Output(self.fixtures[index].clone())
    }
}
