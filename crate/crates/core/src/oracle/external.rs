//! Subprocess oracle speaking JSON lines over stdin/stdout.
//!
//! Each request line is `{"left": <instance>, "right": <instance>}` where an
//! instance is a JSON array (numbers for numeric data, integers for
//! categorical data, strings for tokens). The command answers with exactly
//! one line per request, either a bare number or `{"distance": <number>}`.
//! Requests are sent in batches of at most [`MAX_BATCH`] lines.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde_json::{json, Value};

use super::DistanceOracle;
use crate::error::{Error, Result};
use crate::instance::{Instance, InstancePair};

pub const MAX_BATCH: usize = 256;

struct Channel {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

pub struct ExternalOracle {
    command: String,
    channel: Mutex<Channel>,
    symmetric: bool,
    concurrent: bool,
}

pub fn instance_to_json(inst: &Instance) -> Value {
    match inst {
        Instance::Numeric(v) => json!(v),
        Instance::Categorical(v) => json!(v),
        Instance::Tokens(v) => json!(v),
    }
}

fn parse_response(line: &str) -> Result<f64> {
    let v: Value = serde_json::from_str(line.trim())
        .map_err(|e| Error::Oracle(format!("bad oracle response {line:?}: {e}")))?;
    let d = match &v {
        Value::Number(n) => n.as_f64(),
        Value::Object(o) => o.get("distance").and_then(Value::as_f64),
        _ => None,
    };
    d.ok_or_else(|| Error::Oracle(format!("oracle response {line:?} carries no distance")))
}

impl ExternalOracle {
    /// Spawns `program args...` and performs a handshake on `probe`.
    pub fn spawn(program: &str, args: &[String], probe: &InstancePair) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Oracle(format!("cannot spawn {program}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let oracle = ExternalOracle {
            command: std::iter::once(program.to_string())
                .chain(args.iter().cloned())
                .collect::<Vec<_>>()
                .join(" "),
            channel: Mutex::new(Channel {
                child,
                stdin,
                stdout,
            }),
            symmetric: false,
            concurrent: false,
        };
        let d = oracle
            .distance(&probe.left, &probe.right)
            .map_err(|e| Error::Oracle(format!("handshake with {program} failed: {e}")))?;
        if !d.is_finite() {
            return Err(Error::Oracle(format!(
                "handshake with {program} returned non-finite distance"
            )));
        }
        Ok(oracle)
    }

    pub fn with_symmetry(mut self, symmetric: bool) -> Self {
        self.symmetric = symmetric;
        self
    }

    pub fn with_concurrency(mut self, concurrent: bool) -> Self {
        self.concurrent = concurrent;
        self
    }

    fn exchange(&self, pairs: &[(&Instance, &Instance)]) -> Result<Vec<f64>> {
        let mut ch = self.channel.lock().unwrap();
        let mut payload = String::new();
        for (l, r) in pairs {
            let line = json!({"left": instance_to_json(l), "right": instance_to_json(r)});
            payload.push_str(&line.to_string());
            payload.push('\n');
        }
        let stdin = ch
            .stdin
            .as_mut()
            .ok_or_else(|| Error::Oracle("oracle stdin closed".into()))?;
        stdin
            .write_all(payload.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::Oracle(format!("write to {}: {e}", self.command)))?;
        let mut out = Vec::with_capacity(pairs.len());
        let mut line = String::new();
        for _ in pairs {
            line.clear();
            let n = ch
                .stdout
                .read_line(&mut line)
                .map_err(|e| Error::Oracle(format!("read from {}: {e}", self.command)))?;
            if n == 0 {
                return Err(Error::Oracle(format!("{} closed its output", self.command)));
            }
            out.push(parse_response(&line)?);
        }
        Ok(out)
    }
}

impl DistanceOracle for ExternalOracle {
    fn distance(&self, left: &Instance, right: &Instance) -> Result<f64> {
        Ok(self.exchange(&[(left, right)])?[0])
    }

    fn distance_batch(&self, pairs: &[(&Instance, &Instance)]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(MAX_BATCH) {
            out.extend(self.exchange(chunk)?);
        }
        Ok(out)
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    fn concurrent_safe(&self) -> bool {
        self.concurrent
    }

    fn id(&self) -> String {
        format!("cmd:{}", self.command)
    }
}

impl Drop for ExternalOracle {
    fn drop(&mut self) {
        if let Ok(ch) = self.channel.get_mut() {
            ch.stdin.take();
            let _ = ch.child.wait();
        }
    }
}
