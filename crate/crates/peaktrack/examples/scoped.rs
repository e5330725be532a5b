//! Guard-form profiling with custom units: megabytes for memory and
//! seconds for time. The tracker stops even if the body panics.
//!
//! ```bash
//! cargo run --example scoped
//! ```

use peaktrack::{render_text, scoped_track, RamUnit, TimeUnit, TrackerConfig};

fn main() -> Result<(), peaktrack::TrackerError> {
    let config = TrackerConfig {
        sleep_time: std::time::Duration::from_millis(100),
        ram_unit: RamUnit::Megabytes,
        gpu_ram_unit: RamUnit::Megabytes,
        time_unit: TimeUnit::Seconds,
        ..TrackerConfig::default()
    };

    let (results, rows) = scoped_track(config, || {
        let table: Vec<Vec<u64>> = (0..2_000).map(|i| vec![i; 10_000]).collect();
        table.len()
    })?;

    println!("{}", render_text(&results));
    eprintln!("(built {rows} rows)");
    Ok(())
}
