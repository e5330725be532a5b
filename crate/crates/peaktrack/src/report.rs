//! Rendering of tracking results as human-readable text or JSON.
//!
//! Both layouts are a public output contract: the text form nests with two
//! spaces per level and prints every figure rounded half-even to three
//! decimals in minimal decimal form (`506.0`, `603.525`), while the JSON
//! form carries full-precision values under a fixed key order. A `notes`
//! section appears in either form only when there are warnings to show.

use std::fmt::Write;
use std::str::FromStr;

use crate::tracker::TrackingResults;

/// Output format selector. Defaults to text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ReportFormat {
    #[default]
    Text,
    Json,
}

/// Rejection of a format name other than `text` or `json`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid format {0:?}: expected 'text' or 'json'")]
pub struct InvalidFormat(String);

impl FromStr for ReportFormat {
    type Err = InvalidFormat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            other => Err(InvalidFormat(other.to_string())),
        }
    }
}

/// Rounds to three decimals (ties to even) and prints the shortest decimal
/// form that keeps at least one fractional digit.
fn format_value(value: f64) -> String {
    let rounded = (value * 1000.0).round_ties_even() / 1000.0;
    let text = format!("{rounded}");
    if text.contains('.') {
        text
    } else {
        format!("{text}.0")
    }
}

/// The fixed text layout, without a trailing newline.
pub fn render_text(results: &TrackingResults) -> String {
    let mut out = String::new();
    let ram = &results.max_ram;
    writeln!(out, "Max RAM:").unwrap();
    writeln!(out, "  Unit: {}", ram.unit).unwrap();
    writeln!(out, "  System capacity: {}", format_value(ram.system_capacity)).unwrap();
    writeln!(out, "  System: {}", format_value(ram.system)).unwrap();
    for (label, scope) in [
        ("Main", &ram.main),
        ("Descendents", &ram.descendents),
        ("Combined", &ram.combined),
    ] {
        writeln!(out, "  {label}:").unwrap();
        writeln!(out, "    Total RSS: {}", format_value(scope.total_rss)).unwrap();
        writeln!(out, "    Private RSS: {}", format_value(scope.private_rss)).unwrap();
        writeln!(out, "    Shared RSS: {}", format_value(scope.shared_rss)).unwrap();
    }

    let gpu = &results.max_gpu_ram;
    writeln!(out, "Max GPU RAM:").unwrap();
    writeln!(out, "  Unit: {}", gpu.unit).unwrap();
    writeln!(out, "  Main: {}", format_value(gpu.main)).unwrap();
    writeln!(out, "  Descendents: {}", format_value(gpu.descendents)).unwrap();
    writeln!(out, "  Combined: {}", format_value(gpu.combined)).unwrap();

    let time = &results.compute_time;
    writeln!(out, "Compute time:").unwrap();
    writeln!(out, "  Unit: {}", time.unit).unwrap();
    write!(out, "  Time: {}", format_value(time.time)).unwrap();

    if !results.notes.is_empty() {
        write!(out, "\nNotes:").unwrap();
        for note in &results.notes {
            write!(out, "\n  {note}").unwrap();
        }
    }
    out
}

/// The fixed JSON document: full-precision values, keys in layout order,
/// two-space indentation, no trailing newline.
pub fn render_json(results: &TrackingResults) -> String {
    serde_json::to_string_pretty(results).expect("results always serialize")
}

/// Renders in the requested format.
pub fn render(results: &TrackingResults, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => render_text(results),
        ReportFormat::Json => render_json(results),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::{ComputeTime, MaxGpuRam, MaxRam, RamUnit, ScaledRss, TimeUnit};
    use proptest::prelude::*;

    fn rss(total: f64, private: f64, shared: f64) -> ScaledRss {
        ScaledRss {
            total_rss: total,
            private_rss: private,
            shared_rss: shared,
        }
    }

    fn sample_results() -> TrackingResults {
        TrackingResults {
            max_ram: MaxRam {
                unit: RamUnit::Megabytes,
                system_capacity: 67254.165504,
                system: 1847.590912,
                main: rss(603.5251199999999, 585.269248, 18.255872),
                descendents: rss(0.0, 0.0, 0.0),
                combined: rss(523.5220479999999, 505.266176, 18.255872),
            },
            max_gpu_ram: MaxGpuRam {
                unit: RamUnit::Megabytes,
                main: 506.0,
                descendents: 0.0,
                combined: 506.0,
            },
            compute_time: ComputeTime {
                unit: TimeUnit::Seconds,
                time: 2.767793655395508,
            },
            notes: Vec::new(),
        }
    }

    #[test]
    fn values_round_half_even_to_three_decimals() {
        assert_eq!(format_value(603.5251199999999), "603.525");
        assert_eq!(format_value(506.0), "506.0");
        assert_eq!(format_value(0.0), "0.0");
        assert_eq!(format_value(0.0009229619635476007), "0.001");
        assert_eq!(format_value(2.767793655395508), "2.768");
        assert_eq!(format_value(67254.165504), "67254.166");
        assert_eq!(format_value(2.55), "2.55");
        assert_eq!(format_value(0.83), "0.83");
        assert_eq!(format_value(18.255872), "18.256");
        assert_eq!(format_value(0.000376832), "0.0");
    }

    #[test]
    fn format_parses_and_rejects() {
        assert_eq!("text".parse::<ReportFormat>().unwrap(), ReportFormat::Text);
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert_eq!(ReportFormat::default(), ReportFormat::Text);
        let err = "yaml".parse::<ReportFormat>().unwrap_err();
        assert!(err.to_string().contains("yaml"));
    }

    #[test]
    fn text_layout_nests_two_spaces_per_level() {
        let text = render_text(&sample_results());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "Max RAM:");
        assert_eq!(lines[1], "  Unit: megabytes");
        assert_eq!(lines[4], "  Main:");
        assert_eq!(lines[5], "    Total RSS: 603.525");
        assert!(lines.contains(&"Max GPU RAM:"));
        assert!(lines.contains(&"  Main: 506.0"));
        assert_eq!(lines.last(), Some(&"  Time: 2.768"));
        assert!(!text.contains("Notes:"));
    }

    #[test]
    fn notes_appear_only_when_present() {
        let mut results = sample_results();
        results.notes.push("GPU unavailable: tool not found".to_string());
        let text = render_text(&results);
        assert!(text.ends_with("Notes:\n  GPU unavailable: tool not found"));
        let json = render_json(&results);
        assert!(json.contains("\"notes\""));

        let silent = sample_results();
        assert!(!render_json(&silent).contains("\"notes\""));
    }

    #[test]
    fn json_parse_rerender_is_byte_identical() {
        let json = render_json(&sample_results());
        let parsed: TrackingResults = serde_json::from_str(&json).unwrap();
        assert_eq!(render_json(&parsed), json);
    }

    fn scaled_value() -> impl Strategy<Value = f64> {
        (0u64..1 << 53).prop_map(|raw| raw as f64 / 1024.0)
    }

    fn arbitrary_results() -> impl Strategy<Value = TrackingResults> {
        (
            proptest::collection::vec(scaled_value(), 14),
            proptest::collection::vec("[a-z ]{0,20}", 0..3),
        )
            .prop_map(|(v, notes)| TrackingResults {
                max_ram: MaxRam {
                    unit: RamUnit::Gigabytes,
                    system_capacity: v[0],
                    system: v[1],
                    main: rss(v[2], v[3], v[4]),
                    descendents: rss(v[5], v[6], v[7]),
                    combined: rss(v[8], v[9], v[10]),
                },
                max_gpu_ram: MaxGpuRam {
                    unit: RamUnit::Gigabytes,
                    main: v[11],
                    descendents: v[12],
                    combined: v[11] + v[12],
                },
                compute_time: ComputeTime {
                    unit: TimeUnit::Hours,
                    time: v[13],
                },
                notes,
            })
    }

    proptest! {
        #[test]
        fn json_round_trip_is_stable(results in arbitrary_results()) {
            let json = render_json(&results);
            let parsed: TrackingResults = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(&parsed, &results);
            prop_assert_eq!(render_json(&parsed), json);
        }

        #[test]
        fn text_agrees_with_json_after_rounding(results in arbitrary_results()) {
            let text = render_text(&results);
            let json: serde_json::Value =
                serde_json::from_str(&render_json(&results)).unwrap();

            let find = |line_prefix: &str| -> f64 {
                text.lines()
                    .find_map(|l| l.trim_start().strip_prefix(line_prefix))
                    .unwrap()
                    .parse()
                    .unwrap()
            };
            let rounded = |v: &serde_json::Value| {
                format_value(v.as_f64().unwrap()).parse::<f64>().unwrap()
            };
            prop_assert_eq!(find("System capacity: "), rounded(&json["max_ram"]["system_capacity"]));
            prop_assert_eq!(find("System: "), rounded(&json["max_ram"]["system"]));
            prop_assert_eq!(find("Time: "), rounded(&json["compute_time"]["time"]));
        }

        #[test]
        fn text_parses_back_to_the_rounded_values(results in arbitrary_results()) {
            // Line-based reader: section headers end with ':' and carry no
            // value; every other line is 'Label: value'.
            let text = render_text(&results);
            let mut parsed = std::collections::BTreeMap::new();
            let mut section = String::new();
            for line in text.lines() {
                let indent = line.len() - line.trim_start().len();
                let trimmed = line.trim_start();
                if trimmed.ends_with(':') && indent < 4 {
                    if indent == 0 {
                        section = trimmed.trim_end_matches(':').to_string();
                    } else {
                        section = format!("{} / {}", section.split(" / ").next().unwrap(), trimmed.trim_end_matches(':'));
                    }
                    continue;
                }
                if section == "Notes" {
                    continue;
                }
                let (label, value) = trimmed.split_once(": ").unwrap();
                parsed.insert(format!("{section} / {label}"), value.to_string());
            }
            let expect = |key: &str, value: f64| {
                let got = parsed.get(key).map(String::as_str);
                let want = format_value(value);
                got == Some(want.as_str())
            };
            prop_assert!(expect("Max RAM / Main / Total RSS", results.max_ram.main.total_rss));
            prop_assert!(expect("Max RAM / Combined / Shared RSS", results.max_ram.combined.shared_rss));
            prop_assert!(expect("Max GPU RAM / Descendents", results.max_gpu_ram.descendents));
            prop_assert!(expect("Compute time / Time", results.compute_time.time));
        }
    }
}
