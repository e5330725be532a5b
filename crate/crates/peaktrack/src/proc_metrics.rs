//! Resident-set memory measurement for a process and its descendants.
//!
//! Everything here is a point-in-time read of operating-system state: no
//! shared mutable module state, safe to call from any thread. Memory is
//! always held in integer bytes; unit conversion happens at reporting.
//!
//! On Linux the private/shared split comes from `/proc/<pid>/smaps_rollup`.
//! Where that file is unavailable the total falls back to `VmRSS` from
//! `/proc/<pid>/status` and the split is reported as zero.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use thiserror::Error;

/// An operating-system process identifier. Always positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pid(u32);

impl Pid {
    /// Returns `None` for zero, which no process can have.
    pub fn new(raw: u32) -> Option<Self> {
        (raw > 0).then_some(Pid(raw))
    }

    /// The calling process.
    pub fn current() -> Self {
        Pid(std::process::id())
    }

    pub fn as_u32(self) -> u32 {
        self.0
    }
}

impl std::fmt::Display for Pid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Resident-set sizes for one accounting scope, in bytes.
///
/// When the private/shared decomposition is available,
/// `total_rss == private_rss + shared_rss` holds exactly. On sources
/// without the decomposition both parts stay zero while `total_rss`
/// carries the figure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RssValues {
    pub total_rss: u64,
    pub private_rss: u64,
    pub shared_rss: u64,
}

impl RssValues {
    pub const ZERO: RssValues = RssValues {
        total_rss: 0,
        private_rss: 0,
        shared_rss: 0,
    };

    /// Builds a decomposed value with the total derived from its parts.
    pub fn from_parts(private_rss: u64, shared_rss: u64) -> Self {
        RssValues {
            total_rss: private_rss + shared_rss,
            private_rss,
            shared_rss,
        }
    }

    /// Total-only value for sources without the private/shared split.
    pub fn total_only(total_rss: u64) -> Self {
        RssValues {
            total_rss,
            private_rss: 0,
            shared_rss: 0,
        }
    }

    fn add_assign(&mut self, other: &RssValues) {
        self.total_rss += other.total_rss;
        self.private_rss += other.private_rss;
        self.shared_rss += other.shared_rss;
    }
}

/// One coherent RAM reading across the system, the target process, and its
/// descendants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RamSnapshot {
    /// Total physical RAM of the machine, in bytes. Constant over a run.
    pub system_capacity: u64,
    /// RAM currently in use by the OS as a whole (capacity minus available).
    pub system_used: u64,
    /// The target process itself.
    pub main: RssValues,
    /// Field-wise sum over the live descendants.
    pub descendents: RssValues,
    /// Whole-tree usage with shared memory counted once.
    pub combined: RssValues,
    /// Whether the private/shared split was observable.
    pub decomposition_available: bool,
}

/// A RAM snapshot together with the descendant set it covered, so GPU
/// attribution can reuse the same process enumeration.
#[derive(Debug, Clone)]
pub struct RamObservation {
    pub ram: RamSnapshot,
    pub descendants: BTreeSet<Pid>,
    /// Whether the target process existed when this observation was taken.
    pub target_alive: bool,
}

impl Default for RamObservation {
    fn default() -> Self {
        RamObservation {
            ram: RamSnapshot::default(),
            descendants: BTreeSet::new(),
            target_alive: true,
        }
    }
}

/// Source of RAM observations, injected into the sampler so the loop can be
/// driven by scripted values in tests.
pub trait RamSource: Send {
    fn observe(&mut self, target: Pid) -> RamObservation;
}

#[derive(Debug, Error)]
pub enum ProcError {
    #[error("system memory facility unreadable: {0}")]
    SystemMemoryUnreadable(#[source] std::io::Error),
    #[error("malformed system memory report: missing {0}")]
    SystemMemoryField(&'static str),
}

/// Transitive closure of live child processes of `target`, excluding the
/// target itself. A process that exits mid-traversal simply drops out of
/// the result; enumeration never fails.
pub fn list_descendants(target: Pid) -> BTreeSet<Pid> {
    let mut children_of: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    let entries = match fs::read_dir("/proc") {
        Ok(entries) => entries,
        Err(_) => return BTreeSet::new(),
    };
    for entry in entries.flatten() {
        let name = entry.file_name();
        let Some(pid) = name.to_str().and_then(|s| s.parse::<u32>().ok()) else {
            continue;
        };
        let stat_path = format!("/proc/{pid}/stat");
        let Ok(stat) = fs::read_to_string(stat_path) else {
            continue;
        };
        if let Some(ppid) = parse_stat_ppid(&stat) {
            children_of.entry(ppid).or_default().push(pid);
        }
    }

    let mut result = BTreeSet::new();
    let mut queue = vec![target.as_u32()];
    while let Some(pid) = queue.pop() {
        for &child in children_of.get(&pid).map(Vec::as_slice).unwrap_or(&[]) {
            if child != target.as_u32() && result.insert(Pid(child)) {
                queue.push(child);
            }
        }
    }
    result
}

/// Parent pid from `/proc/<pid>/stat` content. The comm field may contain
/// spaces and parentheses, so fields are taken after the last `)`.
fn parse_stat_ppid(stat: &str) -> Option<u32> {
    let after_comm = &stat[stat.rfind(')')? + 1..];
    // after_comm: " <state> <ppid> ..."
    after_comm.split_whitespace().nth(1)?.parse().ok()
}

/// Where the private/shared split comes from on this machine. Newer
/// kernels pre-sum the memory maps in `smaps_rollup`; older ones only have
/// the per-mapping `smaps`, which is summed here; failing both, only the
/// `VmRSS` total is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RssFacility {
    SmapsRollup,
    Smaps,
    StatusTotalOnly,
}

fn rss_facility() -> RssFacility {
    static PROBE: OnceLock<RssFacility> = OnceLock::new();
    *PROBE.get_or_init(|| {
        let readable = |name: &str| {
            fs::read_to_string(format!("/proc/{}/{name}", std::process::id()))
                .map(|text| parse_smaps(&text).is_some())
                .unwrap_or(false)
        };
        if readable("smaps_rollup") {
            RssFacility::SmapsRollup
        } else if readable("smaps") {
            RssFacility::Smaps
        } else {
            RssFacility::StatusTotalOnly
        }
    })
}

fn decomposition_probe() -> bool {
    rss_facility() != RssFacility::StatusTotalOnly
}

/// Current resident-set decomposition of one process. A process that has
/// exited (or is otherwise unreadable) contributes all zeros rather than an
/// error, so sampling races resolve quietly.
pub fn read_process_rss(pid: Pid) -> RssValues {
    let read = |name: &str| {
        fs::read_to_string(format!("/proc/{pid}/{name}"))
            .ok()
            .and_then(|text| parse_smaps(&text))
    };
    match rss_facility() {
        RssFacility::SmapsRollup => read("smaps_rollup"),
        RssFacility::Smaps => read("smaps"),
        RssFacility::StatusTotalOnly => read_status_total(pid),
    }
    .unwrap_or(RssValues::ZERO)
}

/// Extracts the private/shared split from smaps or smaps_rollup text,
/// summing repeated keys across mappings. The total is recomputed as
/// private + shared so the identity holds exactly even if the kernel's own
/// Rss line disagrees by a page.
fn parse_smaps(text: &str) -> Option<RssValues> {
    let mut private_kb: Option<u64> = None;
    let mut shared_kb: Option<u64> = None;
    for line in text.lines() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let add_to = match key.trim() {
            "Private_Clean" | "Private_Dirty" => &mut private_kb,
            "Shared_Clean" | "Shared_Dirty" => &mut shared_kb,
            _ => continue,
        };
        let kb: u64 = rest.trim().trim_end_matches("kB").trim().parse().ok()?;
        *add_to = Some(add_to.unwrap_or(0) + kb);
    }
    Some(RssValues::from_parts(private_kb? * 1024, shared_kb? * 1024))
}

fn read_status_total(pid: Pid) -> Option<RssValues> {
    let text = fs::read_to_string(format!("/proc/{pid}/status")).ok()?;
    let kb = parse_status_field_kb(&text, "VmRSS")?;
    Some(RssValues::total_only(kb * 1024))
}

fn parse_status_field_kb(text: &str, field: &str) -> Option<u64> {
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix(field) {
            let rest = rest.strip_prefix(':')?;
            return rest.trim().trim_end_matches("kB").trim().parse().ok();
        }
    }
    None
}

/// Total physical RAM and RAM currently in use by the OS, in bytes.
///
/// "In use" is capacity minus the kernel's availability estimate, which is
/// monotone with memory pressure. Fails only when the memory facility
/// itself is unreadable, which is a fatal configuration problem.
pub fn read_system_memory() -> Result<(u64, u64), ProcError> {
    let text =
        fs::read_to_string("/proc/meminfo").map_err(ProcError::SystemMemoryUnreadable)?;
    let total = parse_status_field_kb(&text, "MemTotal")
        .ok_or(ProcError::SystemMemoryField("MemTotal"))?
        * 1024;
    let available = parse_status_field_kb(&text, "MemAvailable")
        .ok_or(ProcError::SystemMemoryField("MemAvailable"))?
        * 1024;
    Ok((total, total.saturating_sub(available)))
}

/// Folds the members of a process tree into descendant and combined scopes.
///
/// With the decomposition available, combined private is the sum over the
/// whole set while combined shared is the largest single member's shared
/// value: a fully shared region is then counted once, at the cost of a
/// slight undercount when members share disjoint regions. Without the
/// decomposition the combined total is the plain sum of totals, which can
/// overcount shared pages.
pub fn combine_rss(
    main: &RssValues,
    descendant_members: &[RssValues],
    decomposition_available: bool,
) -> (RssValues, RssValues) {
    let mut descendents = RssValues::ZERO;
    for member in descendant_members {
        descendents.add_assign(member);
    }

    let combined = if decomposition_available {
        let private = main.private_rss
            + descendant_members
                .iter()
                .map(|m| m.private_rss)
                .sum::<u64>();
        let shared = descendant_members
            .iter()
            .map(|m| m.shared_rss)
            .fold(main.shared_rss, u64::max);
        RssValues::from_parts(private, shared)
    } else {
        RssValues::total_only(main.total_rss + descendents.total_rss)
    };
    (descendents, combined)
}

fn observe_procfs(target: Pid, system: (u64, u64)) -> RamObservation {
    let decomposition_available = decomposition_probe();
    let target_alive = pid_is_alive(target);
    let descendants = list_descendants(target);
    let main = read_process_rss(target);
    let members: Vec<RssValues> = descendants.iter().map(|&p| read_process_rss(p)).collect();
    let (descendents, combined) = combine_rss(&main, &members, decomposition_available);
    RamObservation {
        ram: RamSnapshot {
            system_capacity: system.0,
            system_used: system.1,
            main,
            descendents,
            combined,
            decomposition_available,
        },
        descendants,
        target_alive,
    }
}

/// One coherent RAM snapshot for `target` and its current descendants.
///
/// System fields are zero when the platform memory facility is unreadable;
/// use [`read_system_memory`] to surface that condition as an error.
pub fn snapshot_ram(target: Pid) -> RamSnapshot {
    observe_procfs(target, read_system_memory().unwrap_or((0, 0))).ram
}

/// Production RAM source reading procfs. Capacity is probed once at
/// construction, which also validates that the memory facility is readable.
#[derive(Debug)]
pub struct ProcfsRamSource {
    capacity: u64,
}

impl ProcfsRamSource {
    pub fn new() -> Result<Self, ProcError> {
        let (capacity, _) = read_system_memory()?;
        Ok(ProcfsRamSource { capacity })
    }
}

impl RamSource for ProcfsRamSource {
    fn observe(&mut self, target: Pid) -> RamObservation {
        let used = read_system_memory()
            .map(|(total, used)| used.min(total))
            .unwrap_or(0);
        observe_procfs(target, (self.capacity, used))
    }
}

/// Test and demo source that serves a fixed script of observations in
/// order, repeating the final one once the script is exhausted.
#[derive(Debug)]
pub struct ScriptedRamSource {
    script: Vec<RamObservation>,
    served: Arc<AtomicUsize>,
}

impl ScriptedRamSource {
    /// The script must be non-empty.
    pub fn new(script: Vec<RamObservation>) -> Self {
        assert!(!script.is_empty(), "script must contain at least one observation");
        ScriptedRamSource {
            script,
            served: Arc::new(AtomicUsize::new(0)),
        }
    }

    /// Shared counter of observations served so far, usable after the
    /// source has been moved into a tracker.
    pub fn served_counter(&self) -> Arc<AtomicUsize> {
        Arc::clone(&self.served)
    }
}

impl RamSource for ScriptedRamSource {
    fn observe(&mut self, _target: Pid) -> RamObservation {
        let index = self.served.fetch_add(1, Ordering::SeqCst);
        self.script[index.min(self.script.len() - 1)].clone()
    }
}

/// Whether `/proc/<pid>` exists right now.
pub(crate) fn pid_is_alive(pid: Pid) -> bool {
    Path::new(&format!("/proc/{pid}")).exists()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::process::{Command, Stdio};

    const SMAPS_ROLLUP_FIXTURE: &str = "\
00400000-7fff9b3e5000 ---p 00000000 00:00 0                              [rollup]
Rss:               10904 kB
Pss:                5106 kB
Pss_Anon:           3338 kB
Pss_File:           1768 kB
Pss_Shmem:             0 kB
Shared_Clean:       6344 kB
Shared_Dirty:       1216 kB
Private_Clean:       256 kB
Private_Dirty:      3088 kB
Referenced:        10904 kB
Anonymous:          4304 kB
LazyFree:              0 kB
AnonHugePages:         0 kB
ShmemPmdMapped:        0 kB
FilePmdMapped:         0 kB
Shared_Hugetlb:        0 kB
Private_Hugetlb:       0 kB
Swap:                  0 kB
SwapPss:               0 kB
Locked:                0 kB
";

    #[test]
    fn smaps_rollup_fixture_splits_private_and_shared() {
        let rss = parse_smaps(SMAPS_ROLLUP_FIXTURE).unwrap();
        assert_eq!(rss.private_rss, (256 + 3088) * 1024);
        assert_eq!(rss.shared_rss, (6344 + 1216) * 1024);
        assert_eq!(rss.total_rss, rss.private_rss + rss.shared_rss);
    }

    #[test]
    fn per_mapping_smaps_fixture_sums_across_mappings() {
        let text = "\
00400000-00452000 r-xp 00000000 08:02 173521  /usr/bin/demo
Rss:                 104 kB
Shared_Clean:         96 kB
Shared_Dirty:          0 kB
Private_Clean:         0 kB
Private_Dirty:         8 kB
VmFlags: rd ex mr mw me dw
00e03000-00e24000 rw-p 00000000 00:00 0       [heap]
Rss:                  12 kB
Shared_Clean:          0 kB
Shared_Dirty:          4 kB
Private_Clean:         0 kB
Private_Dirty:         8 kB
VmFlags: rd wr mr mw me ac
";
        let rss = parse_smaps(text).unwrap();
        assert_eq!(rss.private_rss, (8 + 8) * 1024);
        assert_eq!(rss.shared_rss, (96 + 4) * 1024);
        assert_eq!(rss.total_rss, rss.private_rss + rss.shared_rss);
    }

    #[test]
    fn smaps_missing_fields_is_none() {
        assert!(parse_smaps("Rss: 4 kB\n").is_none());
        assert!(parse_smaps("").is_none());
    }

    #[test]
    fn stat_ppid_handles_spaces_and_parens_in_comm() {
        let stat = "1234 (weird (name) here) S 77 1234 1234 0 -1 4194304 100 0 0 0 1 1 0 0";
        assert_eq!(parse_stat_ppid(stat), Some(77));
        assert_eq!(parse_stat_ppid("no parens at all"), None);
    }

    #[test]
    fn pid_rejects_zero() {
        assert!(Pid::new(0).is_none());
        assert_eq!(Pid::new(42).unwrap().as_u32(), 42);
    }

    #[test]
    fn combine_with_no_descendants_echoes_main() {
        let main = RssValues::from_parts(80, 20);
        let (descendents, combined) = combine_rss(&main, &[], true);
        assert_eq!(descendents, RssValues::ZERO);
        assert_eq!(combined, main);
        assert_eq!(combined.total_rss, 100);
    }

    #[test]
    fn combine_counts_shared_once() {
        // main (100, 80, 20), one child (70, 50, 20):
        // private 80+50, shared max(20, 20), total 150.
        let main = RssValues::from_parts(80, 20);
        let child = RssValues::from_parts(50, 20);
        let (descendents, combined) = combine_rss(&main, &[child], true);
        assert_eq!(descendents, RssValues::from_parts(50, 20));
        assert_eq!(combined, RssValues::from_parts(130, 20));
        assert_eq!(combined.total_rss, 150);
    }

    #[test]
    fn combine_without_decomposition_sums_totals() {
        let main = RssValues::total_only(100);
        let children = [RssValues::total_only(70), RssValues::total_only(30)];
        let (descendents, combined) = combine_rss(&main, &children, false);
        assert_eq!(descendents.total_rss, 100);
        assert_eq!(combined, RssValues::total_only(200));
    }

    proptest! {
        #[test]
        fn combine_invariants(
            main_parts in (0u64..1 << 40, 0u64..1 << 40),
            member_parts in proptest::collection::vec((0u64..1 << 40, 0u64..1 << 40), 0..8),
        ) {
            let main = RssValues::from_parts(main_parts.0, main_parts.1);
            let members: Vec<RssValues> = member_parts
                .iter()
                .map(|&(p, s)| RssValues::from_parts(p, s))
                .collect();
            let (descendents, combined) = combine_rss(&main, &members, true);

            // total = private + shared holds field-wise for every scope
            prop_assert_eq!(main.total_rss, main.private_rss + main.shared_rss);
            prop_assert_eq!(descendents.total_rss, descendents.private_rss + descendents.shared_rss);
            prop_assert_eq!(combined.total_rss, combined.private_rss + combined.shared_rss);

            // dedup never adds memory, and never drops the main process
            let member_total: u64 = members.iter().map(|m| m.total_rss).sum();
            prop_assert!(combined.total_rss <= main.total_rss + member_total);
            prop_assert!(combined.total_rss >= main.total_rss);

            // descendants scope is the plain field-wise sum
            prop_assert_eq!(descendents.private_rss, members.iter().map(|m| m.private_rss).sum::<u64>());
            prop_assert_eq!(descendents.shared_rss, members.iter().map(|m| m.shared_rss).sum::<u64>());

            // counted-once rule
            prop_assert_eq!(
                combined.private_rss,
                main.private_rss + descendents.private_rss
            );
            let max_shared = members
                .iter()
                .map(|m| m.shared_rss)
                .fold(main.shared_rss, u64::max);
            prop_assert_eq!(combined.shared_rss, max_shared);
        }
    }

    #[test]
    fn read_process_rss_of_self_matches_status_within_ten_percent() {
        let rss = read_process_rss(Pid::current());
        assert!(rss.total_rss > 0);

        // Independent oracle: VmRSS as the kernel reports it.
        let status = fs::read_to_string("/proc/self/status").unwrap();
        let vmrss = parse_status_field_kb(&status, "VmRSS").unwrap() * 1024;
        let diff = rss.total_rss.abs_diff(vmrss) as f64;
        assert!(
            diff <= vmrss as f64 * 0.10,
            "rss {} vs VmRSS {} differ by more than 10%",
            rss.total_rss,
            vmrss
        );
    }

    #[test]
    fn read_process_rss_of_exited_process_is_zero() {
        let mut child = Command::new("true").spawn().unwrap();
        let pid = Pid::new(child.id()).unwrap();
        child.wait().unwrap();
        assert_eq!(read_process_rss(pid), RssValues::ZERO);
    }

    #[test]
    fn touched_private_buffer_shows_up_as_private_rss() {
        let size = 200_000_000usize;
        let buffer = vec![1u8; size];
        let rss = read_process_rss(Pid::current());
        assert!(
            rss.private_rss >= size as u64,
            "private rss {} below buffer size {}",
            rss.private_rss,
            size
        );
        drop(buffer);
    }

    #[test]
    fn system_memory_is_bounded_and_capacity_is_stable() {
        let (capacity, used) = read_system_memory().unwrap();
        assert!(capacity > 0);
        assert!(used <= capacity);
        std::thread::sleep(std::time::Duration::from_millis(50));
        let (capacity2, _) = read_system_memory().unwrap();
        assert_eq!(capacity, capacity2);
    }

    #[test]
    fn leaf_process_has_no_descendants() {
        let mut child = Command::new("sleep")
            .arg("5")
            .stdout(Stdio::null())
            .spawn()
            .unwrap();
        let pid = Pid::new(child.id()).unwrap();
        assert!(list_descendants(pid).is_empty());
        child.kill().ok();
        child.wait().unwrap();
    }

    #[test]
    fn exited_process_has_no_descendants() {
        let mut child = Command::new("true").spawn().unwrap();
        let pid = Pid::new(child.id()).unwrap();
        child.wait().unwrap();
        assert!(list_descendants(pid).is_empty());
    }

    #[test]
    fn snapshot_of_leaf_self_holds_invariants() {
        let snap = snapshot_ram(Pid::current());
        assert!(snap.system_capacity >= snap.system_used);
        assert!(snap.main.total_rss > 0);
        if snap.decomposition_available {
            assert_eq!(
                snap.combined.total_rss,
                snap.combined.private_rss + snap.combined.shared_rss
            );
            assert!(snap.combined.total_rss >= snap.main.total_rss);
        }
    }

    #[test]
    fn scripted_source_repeats_last_observation() {
        let first = RamObservation::default();
        let mut second = RamObservation::default();
        second.ram.system_used = 7;
        let mut source = ScriptedRamSource::new(vec![first, second]);
        let counter = source.served_counter();
        assert_eq!(source.observe(Pid::current()).ram.system_used, 0);
        assert_eq!(source.observe(Pid::current()).ram.system_used, 7);
        assert_eq!(source.observe(Pid::current()).ram.system_used, 7);
        assert_eq!(counter.load(Ordering::SeqCst), 3);
    }
}
