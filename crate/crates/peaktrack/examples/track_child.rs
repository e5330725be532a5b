//! Track an arbitrary child process by pid and print the report as JSON.
//! This is the same flow the `peaktrack` binary wraps.
//!
//! ```bash
//! cargo run --example track_child -- sleep 2
//! ```

use std::process::Command;
use std::time::Duration;

use peaktrack::{render_json, Pid, Tracker, TrackerConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let program = args.next().unwrap_or_else(|| {
        eprintln!("usage: track_child <program> [args...]");
        std::process::exit(2);
    });

    let mut child = Command::new(&program)
        .args(args)
        .spawn()
        .unwrap_or_else(|err| {
            eprintln!("could not launch {program:?}: {err}");
            std::process::exit(127);
        });

    let config = TrackerConfig {
        sleep_time: Duration::from_millis(200),
        process_id: Pid::new(child.id()),
        ..TrackerConfig::default()
    };
    let mut tracker = Tracker::new(config).expect("tracker construction");
    tracker.start().expect("tracker start");

    let status = child.wait().expect("child wait");
    let results = tracker.stop().expect("tracker stop");

    println!("{}", render_json(&results));
    std::process::exit(status.code().unwrap_or(1));
}
