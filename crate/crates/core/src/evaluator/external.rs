//! Evaluator delegating to an external program over a line protocol.
//!
//! One process is spawned per evaluation. It receives a single request line
//! on stdin:
//!
//! ```text
//! eval <config_id> <name>=<value> ... encoded=<v1>,<v2>,...
//! ```
//!
//! and must answer with a single line on stdout, either
//! `ok error=<float> [key=value ...]` or `err <message>`, then exit 0.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use super::{EvaluationResult, Evaluator};
use crate::design_space::{CandidateConfig, DesignSpace, ParamValue};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalEvaluator {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl ExternalEvaluator {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>, timeout: Duration) -> Self {
        ExternalEvaluator {
            program: program.into(),
            args,
            timeout,
        }
    }
}

/// Formats the request line for `config`, without the trailing newline.
pub fn request_line(space: &DesignSpace, config: &CandidateConfig) -> Result<String> {
    let encoded = space.encode(config)?;
    let mut line = format!("eval {}", space.canonical_key(config));
    for (i, slot) in space.slots().iter().enumerate() {
        match space.value(config, i) {
            ParamValue::Absent => {}
            v => line.push_str(&format!(" {}={v}", slot.name)),
        }
    }
    let joined: Vec<String> = encoded.0.iter().map(|v| v.to_string()).collect();
    line.push_str(" encoded=");
    line.push_str(&joined.join(","));
    Ok(line)
}

/// Parses one response line.
pub fn parse_response(line: &str) -> Result<EvaluationResult> {
    let line = line.trim_end_matches(['\r', '\n']);
    if let Some(msg) = line.strip_prefix("err") {
        return Err(Error::Evaluator(format!("external evaluator: {}", msg.trim())));
    }
    let Some(rest) = line.strip_prefix("ok") else {
        return Err(Error::Evaluator(format!("malformed response `{line}`")));
    };
    let mut error = None;
    let mut metadata = Vec::new();
    for field in rest.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| Error::Evaluator(format!("malformed field `{field}`")))?;
        if k == "error" {
            let e: f64 = v
                .parse()
                .map_err(|_| Error::Evaluator(format!("unparseable error value `{v}`")))?;
            error = Some(e);
        } else {
            metadata.push((k.to_owned(), v.to_owned()));
        }
    }
    let error = error.ok_or_else(|| Error::Evaluator("response lacks error=".into()))?;
    let mut r = EvaluationResult::new(error)?;
    r.metadata.extend(metadata);
    Ok(r)
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, space: &DesignSpace, config: &CandidateConfig) -> Result<EvaluationResult> {
        let request = request_line(space, config)?;
        let start = Instant::now();
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Evaluator(format!("cannot launch {}: {e}", self.program.display())))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            // A program that exits without reading surfaces below through its
            // exit status or missing response.
            let _ = writeln!(stdin, "{request}");
        }
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut line = String::new();
            let read = BufReader::new(stdout).read_line(&mut line);
            let _ = tx.send(read.map(|n| (n, line)));
        });
        let response = match rx.recv_timeout(self.timeout) {
            Ok(r) => r,
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Evaluator(format!(
                    "timed out after {:?} evaluating {}",
                    self.timeout,
                    space.canonical_key(config)
                )));
            }
        };
        let remaining = self.timeout.saturating_sub(start.elapsed());
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if start.elapsed() >= self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Evaluator(format!("process did not exit within {remaining:?}")));
            }
            thread::sleep(Duration::from_millis(2));
        };
        if !status.success() {
            return Err(Error::Evaluator(format!("process exited with {status}")));
        }
        let (n, line) = response?;
        if n == 0 {
            return Err(Error::Evaluator("process closed stdout without a response".into()));
        }
        let mut r = parse_response(&line)?;
        r.wall_time = start.elapsed();
        Ok(r)
    }
}
