//! Runs user-defined feature extractors as external subprocesses.
//!
//! An extractor reads its input rows as TSV lines on stdin (in the
//! deterministic order produced by the input query), writes zero or more TSV
//! output lines per input line to stdout, and reserves stderr for
//! diagnostics. Exit status 0 means success. Output rows are buffered and
//! loaded into the target relation only after a clean exit, so a failing or
//! timed-out extractor leaves the store untouched and reruns never
//! accumulate partial state.
//!
//! The subprocess's stdin writer and stdout reader run on separate threads;
//! this is required, not an optimization: a single-threaded write-all then
//! read-all would deadlock once either pipe buffer fills.

use crate::relstore::{self, ConjunctiveQuery, RelStoreError, Store, Tuple};
use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};
use thiserror::Error;

/// Environment variable naming the output relation's columns, as
/// comma-separated `name:type` pairs, so extractors can self-validate.
pub const OUTPUT_SCHEMA_ENV: &str = "DEEPDIVE_OUTPUT_SCHEMA";

/// A feature-extractor specification.
#[derive(Debug, Clone)]
pub struct ExtractorSpec {
    pub name: String,
    pub input_query: ConjunctiveQuery,
    /// Shell command, executed via `sh -c`.
    pub command: String,
    pub output_relation: String,
    pub timeout: Duration,
    /// Working directory for the subprocess; inherited when `None`.
    pub working_dir: Option<std::path::PathBuf>,
}

#[derive(Debug, Error)]
pub enum UdfError {
    #[error("extractor `{name}`: invalid spec: {reason}")]
    InvalidSpec { name: String, reason: String },
    #[error("extractor `{name}`: failed to spawn `{command}`: {source}")]
    Spawn {
        name: String,
        command: String,
        source: std::io::Error,
    },
    #[error("extractor `{name}` exited with status {status}; stderr:\n{stderr}")]
    NonZeroExit {
        name: String,
        status: i32,
        stderr: String,
    },
    #[error("extractor `{name}`: malformed output line {line}: {cause} (raw: `{raw}`)")]
    MalformedOutput {
        name: String,
        line: usize,
        cause: String,
        raw: String,
    },
    #[error("extractor `{name}` exceeded its timeout of {timeout:.3}s")]
    Timeout { name: String, timeout: f64 },
    #[error("extractor `{name}`: subprocess stopped reading stdin (broken pipe)")]
    BrokenPipe { name: String },
    #[error(transparent)]
    Store(#[from] RelStoreError),
    #[error("extractor `{name}`: i/o error: {source}")]
    Io {
        name: String,
        source: std::io::Error,
    },
}

/// Runs one extractor and loads its output into `spec.output_relation`.
/// Returns the number of rows appended.
pub fn run_extractor(store: &mut Store, spec: &ExtractorSpec) -> Result<usize, UdfError> {
    if spec.timeout.is_zero() {
        return Err(UdfError::InvalidSpec {
            name: spec.name.clone(),
            reason: "timeout must be positive".into(),
        });
    }
    let output_schema = store.relation(&spec.output_relation)?.schema.clone();
    let input = store.eval_query(&spec.input_query)?;

    let schema_env: String = output_schema
        .columns
        .iter()
        .map(|c| format!("{}:{}", c.name, c.ty))
        .collect::<Vec<_>>()
        .join(",");

    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(&spec.command)
        .env(OUTPUT_SCHEMA_ENV, schema_env)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    // own process group, so a timeout can kill the whole command tree and
    // not just the shell (a surviving grandchild would hold the pipes open)
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }
    if let Some(dir) = &spec.working_dir {
        cmd.current_dir(dir);
    }
    let mut child = cmd.spawn().map_err(|source| UdfError::Spawn {
        name: spec.name.clone(),
        command: spec.command.clone(),
        source,
    })?;

    let mut stdin = child.stdin.take().expect("stdin piped");
    let stdout = child.stdout.take().expect("stdout piped");
    let stderr = child.stderr.take().expect("stderr piped");

    let input_lines: Vec<String> = input.rows.iter().map(|t| relstore::tsv_line(&t.0)).collect();
    let writer = std::thread::spawn(move || -> std::io::Result<()> {
        for line in &input_lines {
            stdin.write_all(line.as_bytes())?;
            stdin.write_all(b"\n")?;
        }
        // dropping stdin closes the pipe and signals EOF
        Ok(())
    });

    let schema = output_schema.clone();
    let ex_name = spec.name.clone();
    let reader = std::thread::spawn(move || -> Result<Vec<Tuple>, UdfError> {
        let mut rows = Vec::new();
        for (i, line) in BufReader::new(stdout).lines().enumerate() {
            let line = line.map_err(|source| UdfError::Io {
                name: ex_name.clone(),
                source,
            })?;
            let row = relstore::parse_tsv_line(&schema, &line, i + 1).map_err(|e| {
                UdfError::MalformedOutput {
                    name: ex_name.clone(),
                    line: i + 1,
                    cause: e.to_string(),
                    raw: line.clone(),
                }
            })?;
            rows.push(row);
        }
        Ok(rows)
    });

    let stderr_reader = std::thread::spawn(move || {
        let mut buf = String::new();
        use std::io::Read;
        let _ = BufReader::new(stderr).read_to_string(&mut buf);
        buf
    });

    // poll for exit so the timeout can fire while the pipe threads run
    let deadline = Instant::now() + spec.timeout;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) => {
                if Instant::now() >= deadline {
                    kill_tree(&mut child);
                    let _ = child.wait();
                    // unblock the pipe threads before returning
                    let _ = writer.join();
                    let _ = reader.join();
                    let _ = stderr_reader.join();
                    return Err(UdfError::Timeout {
                        name: spec.name.clone(),
                        timeout: spec.timeout.as_secs_f64(),
                    });
                }
                std::thread::sleep(Duration::from_millis(2));
            }
            Err(source) => {
                return Err(UdfError::Io {
                    name: spec.name.clone(),
                    source,
                })
            }
        }
    };

    let write_result = writer.join().expect("stdin writer panicked");
    let rows = reader.join().expect("stdout reader panicked")?;
    let stderr_text = stderr_reader.join().expect("stderr reader panicked");

    if !status.success() {
        return Err(UdfError::NonZeroExit {
            name: spec.name.clone(),
            status: status.code().unwrap_or(-1),
            stderr: stderr_text,
        });
    }
    if let Err(e) = write_result {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            return Err(UdfError::BrokenPipe {
                name: spec.name.clone(),
            });
        }
        return Err(UdfError::Io {
            name: spec.name.clone(),
            source: e,
        });
    }

    let count = rows.len();
    store.append_rows(&spec.output_relation, rows)?;
    Ok(count)
}

#[cfg(unix)]
fn kill_tree(child: &mut std::process::Child) {
    let pgid = child.id() as i32;
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
    let _ = child.kill();
}

#[cfg(not(unix))]
fn kill_tree(child: &mut std::process::Child) {
    let _ = child.kill();
}
