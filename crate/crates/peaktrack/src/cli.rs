//! Command-line front end: launches a shell command as a child process,
//! profiles it by pid, and routes the report to the screen or a file.
//!
//! The command string is split with quote-aware shell-style rules and the
//! program is spawned directly, without an intermediate shell, so the
//! descendant tree holds only the processes the command itself creates.
//! The child inherits the standard streams; the status line and report are
//! printed after it completes, and the exit status mirrors the child's.

use std::path::PathBuf;
use std::process::{Command as Process, ExitStatus};
use std::time::Duration;

use thiserror::Error;

use crate::proc_metrics::Pid;
use crate::report::{render, ReportFormat};
use crate::tracker::{RamUnit, TimeUnit, Tracker, TrackerConfig, TrackerError};

pub const HELP: &str = "\
Tracks peak RAM, peak GPU RAM, and wall-clock time of a shell command run
as a child process, covering the command and everything it spawns.

Usage:
  peaktrack --execute=<command> [--output=<output>] [--format=<format>]
            [--st=<sleep-time>] [--ru=<ram-unit>] [--gru=<gpu-ram-unit>]
            [--tu=<time-unit>]

Options:
  -h --help               Show this help message.
  -e --execute=<command>  The command to profile, quoted together with its
                          arguments, e.g. \"ls -l -a\".
  -o --output=<output>    File path for the report. Prints to the screen
                          when unset.
  -f --format=<format>    Report format, either 'json' or 'text'.
                          Defaults to 'text'.
  --st=<sleep-time>       Seconds to pause between resource samples.
  --ru=<ram-unit>         One of 'bytes', 'kilobytes', 'megabytes',
                          'gigabytes', or 'terabytes'.
  --gru=<gpu-ram-unit>    One of 'bytes', 'kilobytes', 'megabytes',
                          'gigabytes', or 'terabytes'.
  --tu=<time-unit>        One of 'seconds', 'minutes', 'hours', or 'days'.";

/// Parsed command-line options. Unset profiling knobs take the tracker
/// defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct CliOptions {
    pub execute: String,
    pub output: Option<PathBuf>,
    pub format: ReportFormat,
    pub sleep_time: Duration,
    pub ram_unit: RamUnit,
    pub gpu_ram_unit: RamUnit,
    pub time_unit: TimeUnit,
}

/// What the argument vector asked for.
#[derive(Debug, Clone, PartialEq)]
pub enum CliCommand {
    Help,
    Run(CliOptions),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("could not launch {command:?}: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("lost track of the child process: {0}")]
    ChildWait(#[source] std::io::Error),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
}

impl CliError {
    /// Distinct codes: 2 for usage errors, 127 for spawn failures, 1 for
    /// everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Spawn { .. } => 127,
            _ => 1,
        }
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

/// Splits a command string into words with shell-style quoting: single
/// quotes are literal, double quotes allow `\"` and `\\` escapes, and a
/// backslash outside quotes escapes the next character.
pub fn split_command(text: &str) -> Result<Vec<String>, CliError> {
    let mut words = Vec::new();
    let mut current = String::new();
    let mut in_word = false;
    let mut chars = text.chars();

    while let Some(ch) = chars.next() {
        match ch {
            '\'' | '"' => {
                in_word = true;
                let quote = ch;
                loop {
                    match chars.next() {
                        None => return Err(usage(format!("unclosed {quote} quote in command"))),
                        Some(c) if c == quote => break,
                        Some('\\') if quote == '"' => match chars.next() {
                            Some(c @ ('"' | '\\')) => current.push(c),
                            Some(c) => {
                                current.push('\\');
                                current.push(c);
                            }
                            None => return Err(usage("unclosed \" quote in command")),
                        },
                        Some(c) => current.push(c),
                    }
                }
            }
            '\\' => {
                in_word = true;
                match chars.next() {
                    Some(c) => current.push(c),
                    None => return Err(usage("command ends with a dangling escape")),
                }
            }
            c if c.is_whitespace() => {
                if in_word {
                    words.push(std::mem::take(&mut current));
                    in_word = false;
                }
            }
            c => {
                in_word = true;
                current.push(c);
            }
        }
    }
    if in_word {
        words.push(current);
    }
    Ok(words)
}

fn take_value(
    name: &str,
    inline: Option<String>,
    rest: &mut impl Iterator<Item = String>,
) -> Result<String, CliError> {
    inline
        .or_else(|| rest.next())
        .ok_or_else(|| usage(format!("option {name} requires a value")))
}

/// Parses an argument vector (without the program name). `-h`/`--help`
/// anywhere wins; otherwise `--execute` is required and unset options take
/// the tracker defaults.
pub fn parse_args<I, S>(args: I) -> Result<CliCommand, CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let defaults = TrackerConfig::default();
    let mut execute: Option<String> = None;
    let mut output: Option<PathBuf> = None;
    let mut format = ReportFormat::default();
    let mut sleep_time = defaults.sleep_time;
    let mut ram_unit = defaults.ram_unit;
    let mut gpu_ram_unit = defaults.gpu_ram_unit;
    let mut time_unit = defaults.time_unit;

    let mut rest = args.into_iter().map(Into::into);
    while let Some(arg) = rest.next() {
        let (name, inline) = match arg.split_once('=') {
            Some((n, v)) if n.starts_with("--") => (n.to_string(), Some(v.to_string())),
            _ => (arg, None),
        };
        match name.as_str() {
            "-h" | "--help" => return Ok(CliCommand::Help),
            "-e" | "--execute" => execute = Some(take_value(&name, inline, &mut rest)?),
            "-o" | "--output" => {
                output = Some(PathBuf::from(take_value(&name, inline, &mut rest)?))
            }
            "-f" | "--format" => {
                let value = take_value(&name, inline, &mut rest)?;
                format = value
                    .parse()
                    .map_err(|e| usage(format!("{name}: {e}")))?;
            }
            "--st" => {
                let value = take_value(&name, inline, &mut rest)?;
                let seconds: f64 = value
                    .parse()
                    .map_err(|_| usage(format!("{name}: {value:?} is not a number")))?;
                if !seconds.is_finite() || seconds <= 0.0 {
                    return Err(usage(format!(
                        "{name}: sleep time must be a positive number of seconds"
                    )));
                }
                sleep_time = Duration::from_secs_f64(seconds);
            }
            "--ru" => {
                let value = take_value(&name, inline, &mut rest)?;
                ram_unit = value.parse().map_err(|e| usage(format!("{name}: {e}")))?;
            }
            "--gru" => {
                let value = take_value(&name, inline, &mut rest)?;
                gpu_ram_unit = value.parse().map_err(|e| usage(format!("{name}: {e}")))?;
            }
            "--tu" => {
                let value = take_value(&name, inline, &mut rest)?;
                time_unit = value.parse().map_err(|e| usage(format!("{name}: {e}")))?;
            }
            other => return Err(usage(format!("unknown option {other:?}"))),
        }
    }

    let execute = execute.ok_or_else(|| usage("the -e/--execute option is required"))?;
    if execute.trim().is_empty() {
        return Err(usage("the -e/--execute command must not be empty"));
    }
    Ok(CliCommand::Run(CliOptions {
        execute,
        output,
        format,
        sleep_time,
        ram_unit,
        gpu_ram_unit,
        time_unit,
    }))
}

#[cfg(unix)]
fn status_code(status: &ExitStatus) -> i32 {
    use std::os::unix::process::ExitStatusExt;
    status
        .code()
        .unwrap_or_else(|| 128 + status.signal().unwrap_or(0))
}

#[cfg(not(unix))]
fn status_code(status: &ExitStatus) -> i32 {
    status.code().unwrap_or(1)
}

/// Launches the command, profiles it to completion, prints the status line,
/// and routes the report. Returns the exit code the CLI should use, which
/// mirrors the child's unless writing the report failed.
pub fn run_command(opts: &CliOptions) -> Result<i32, CliError> {
    let words = split_command(&opts.execute)?;
    let (program, args) = words
        .split_first()
        .ok_or_else(|| usage("the -e/--execute command must not be empty"))?;

    let mut child = Process::new(program)
        .args(args)
        .spawn()
        .map_err(|source| CliError::Spawn {
            command: program.clone(),
            source,
        })?;
    let child_pid = Pid::new(child.id()).expect("spawned child has a nonzero pid");

    let config = TrackerConfig {
        sleep_time: opts.sleep_time,
        ram_unit: opts.ram_unit,
        gpu_ram_unit: opts.gpu_ram_unit,
        time_unit: opts.time_unit,
        process_id: Some(child_pid),
        ..TrackerConfig::default()
    };
    let mut tracker = match Tracker::new(config).and_then(|mut t| t.start().map(|_| t)) {
        Ok(tracker) => tracker,
        Err(err) => {
            // The child was already launched; see it through before failing.
            let _ = child.wait();
            return Err(err.into());
        }
    };

    let status = child.wait().map_err(CliError::ChildWait)?;
    let results = tracker.stop()?;
    let code = status_code(&status);
    println!("Resource tracking complete. Process completed with status code: {code}");

    let rendered = render(&results, opts.format);
    let mut exit_code = code;
    match &opts.output {
        None => println!("{rendered}"),
        Some(path) => {
            if let Err(err) = std::fs::write(path, format!("{rendered}\n")) {
                eprintln!(
                    "could not write the report to {}: {err}; printing it instead",
                    path.display()
                );
                println!("{rendered}");
                if exit_code == 0 {
                    exit_code = 1;
                }
            }
        }
    }
    Ok(exit_code)
}

/// Full driver for the binary: parse, dispatch, report errors. Returns the
/// process exit code.
pub fn main_entry<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    match parse_args(args) {
        Ok(CliCommand::Help) => {
            println!("{HELP}");
            0
        }
        Ok(CliCommand::Run(opts)) => match run_command(&opts) {
            Ok(code) => code,
            Err(err) => {
                eprintln!("{err}");
                err.exit_code()
            }
        },
        Err(err) => {
            eprintln!("{err}");
            eprintln!("run with --help for usage");
            err.exit_code()
        }
    }
}
