//! Drive the whole sampler with scripted sources: a replay GPU backend
//! serving recorded CSV fixtures and a scripted RAM source. Runs the same
//! on any machine, GPU or not, which is how the hardware-dependent paths
//! stay testable.
//!
//! ```bash
//! cargo run --example replay_gpu
//! ```

use std::time::Duration;

use peaktrack::{
    render_text, Pid, RamObservation, RamUnit, ReplayBackend, RssValues, ScriptedRamSource,
    TimeUnit, Tracker, TrackerConfig,
};

fn main() -> Result<(), peaktrack::TrackerError> {
    let worker = Pid::new(4242).unwrap();
    let helper = Pid::new(4243).unwrap();

    // Three ticks of RAM usage: the worker grows, then the helper joins in.
    let tick = |main_mb: u64, helper_mb: u64| {
        let mut obs = RamObservation::default();
        obs.ram.system_capacity = 16_000_000_000;
        obs.ram.system_used = 4_000_000_000 + (main_mb + helper_mb) * 1_000_000;
        obs.ram.main = RssValues::from_parts(main_mb * 1_000_000, 30_000_000);
        obs.ram.descendents = RssValues::from_parts(helper_mb * 1_000_000, 0);
        let (_, combined) =
            peaktrack::combine_rss(&obs.ram.main, &[obs.ram.descendents], true);
        obs.ram.combined = combined;
        obs.ram.decomposition_available = true;
        if helper_mb > 0 {
            obs.descendants.insert(helper);
        }
        obs
    };
    let ram = ScriptedRamSource::new(vec![tick(100, 0), tick(450, 0), tick(300, 620)]);
    let served = ram.served_counter();

    // Matching GPU fixtures in the query tool's CSV wire format; the
    // helper's figure lands on the tick where it is a live descendant.
    let gpu = ReplayBackend::new(vec![
        "pid, used_gpu_memory [MiB]\n4242, 506 MiB\n".to_string(),
        "pid, used_gpu_memory [MiB]\n4242, 506 MiB\n".to_string(),
        "pid, used_gpu_memory [MiB]\n4242, 120 MiB\n4243, 314 MiB\n".to_string(),
    ]);

    let config = TrackerConfig {
        sleep_time: Duration::from_millis(10),
        ram_unit: RamUnit::Megabytes,
        gpu_ram_unit: RamUnit::Megabytes,
        time_unit: TimeUnit::Seconds,
        process_id: Some(worker),
        ..TrackerConfig::default()
    };
    let mut tracker = Tracker::with_sources(config, ram, gpu)?;
    tracker.start()?;
    while served.load(std::sync::atomic::Ordering::SeqCst) < 3 {
        std::thread::sleep(Duration::from_millis(1));
    }
    let results = tracker.stop()?;

    println!("{}", render_text(&results));
    Ok(())
}
