//! Profile a block of code in the current process with explicit
//! start/stop calls, then print the text report.
//!
//! ```bash
//! cargo run --example track_block
//! ```

use peaktrack::{render_text, Tracker, TrackerConfig};

fn busy_work() -> u64 {
    // Touch ~200 MB so the peak is visible in the report.
    let buffer = vec![1u8; 200_000_000];
    buffer.iter().map(|&b| b as u64).sum()
}

fn main() -> Result<(), peaktrack::TrackerError> {
    let config = TrackerConfig {
        sleep_time: std::time::Duration::from_millis(100),
        ..TrackerConfig::default()
    };
    let mut tracker = Tracker::new(config)?;
    tracker.start()?;
    let checksum = busy_work();
    let results = tracker.stop()?;

    println!("{}", render_text(&results));
    eprintln!("(checksum {checksum})");
    Ok(())
}
