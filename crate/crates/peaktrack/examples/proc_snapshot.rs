//! One-shot look at the low-level measurement operations: system memory,
//! the descendant closure, and a coherent RAM snapshot of this process.
//!
//! ```bash
//! cargo run --example proc_snapshot
//! ```

use peaktrack::{convert_ram, list_descendants, read_system_memory, snapshot_ram, Pid, RamUnit};

fn main() {
    let me = Pid::current();
    let (capacity, used) = read_system_memory().expect("system memory facility");
    println!(
        "system: {:.3} GB used of {:.3} GB",
        convert_ram(used, RamUnit::Gigabytes),
        convert_ram(capacity, RamUnit::Gigabytes),
    );

    let descendants = list_descendants(me);
    println!("process {me} has {} live descendant(s): {descendants:?}", descendants.len());

    let snap = snapshot_ram(me);
    println!(
        "main: total {} B = private {} B + shared {} B (split available: {})",
        snap.main.total_rss,
        snap.main.private_rss,
        snap.main.shared_rss,
        snap.decomposition_available,
    );
    println!(
        "combined over the tree: total {} B (descendants {} B)",
        snap.combined.total_rss, snap.descendents.total_rss,
    );
}
