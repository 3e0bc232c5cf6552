//! Newline-delimited JSON predictor protocol.
//!
//! Request line:  `{"id":<int>,"designs":[[v1,...,vd],...]}`
//! Response line: `{"id":<int>,"outputs":[[c1,...,cm],...]}`
//!
//! Categorical values travel as their tokens. Non-finite outputs are sent as
//! the strings `"nan"`, `"inf"` or `"-inf"`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::design_space::{DesignPoint, DesignSchema};
use crate::scalar::Scalar;

use super::{Predictor, PredictorError, PredictorSpec};

pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_TIMEOUT_MS: u64 = 60_000;
pub const TIMEOUT_ENV: &str = "MCD_PREDICTOR_TIMEOUT_MS";

pub fn timeout_from_env() -> Duration {
    let ms = std::env::var(TIMEOUT_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<u64>().ok())
        .unwrap_or(DEFAULT_TIMEOUT_MS);
    Duration::from_millis(ms)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Request {
    id: u64,
    designs: Vec<Vec<Json>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Response {
    id: u64,
    outputs: Vec<Vec<Json>>,
}

fn encode_output(x: f64) -> Json {
    if x.is_nan() {
        Json::String("nan".into())
    } else if x.is_infinite() {
        Json::String(if x > 0.0 { "inf" } else { "-inf" }.into())
    } else {
        serde_json::Number::from_f64(x)
            .map(Json::Number)
            .unwrap_or(Json::Null)
    }
}

fn decode_output(v: &Json) -> Result<f64, String> {
    match v {
        Json::Number(n) => n.as_f64().ok_or_else(|| format!("bad number {n}")),
        Json::String(s) => match s.as_str() {
            "nan" => Ok(f64::NAN),
            "inf" | "+inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => Err(format!("unexpected output string `{other}`")),
        },
        other => Err(format!("unexpected output value {other}")),
    }
}

fn encode_request<S: Scalar>(id: u64, schema: &DesignSchema<S>, designs: &[DesignPoint<S>]) -> String {
    let request = Request {
        id,
        designs: designs.iter().map(|d| schema.point_to_json(d)).collect(),
    };
    serde_json::to_string(&request).expect("request serializes")
}

/// Parses one request line on the worker side.
pub fn decode_request<S: Scalar>(
    line: &str,
    schema: &DesignSchema<S>,
) -> Result<(u64, Vec<DesignPoint<S>>), String> {
    let request: Request = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let designs = request
        .designs
        .iter()
        .enumerate()
        .map(|(i, row)| {
            schema
                .point_from_json(&Json::Array(row.clone()))
                .map_err(|e| format!("design {i}: {e}"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((request.id, designs))
}

/// Renders one response line (without the trailing newline).
pub fn encode_response<S: Scalar>(id: u64, outputs: &[Vec<S>]) -> String {
    let response = Response {
        id,
        outputs: outputs
            .iter()
            .map(|row| row.iter().map(|x| encode_output(x.as_f64())).collect())
            .collect(),
    };
    serde_json::to_string(&response).expect("response serializes")
}

/// Serves `predictor` over the line protocol until `input` reaches end of file.
pub fn serve_worker<S: Scalar, R: BufRead, W: Write>(
    predictor: &dyn Predictor<S>,
    schema: &DesignSchema<S>,
    input: R,
    mut output: W,
) -> Result<(), PredictorError> {
    for line in input.lines() {
        let line = line.map_err(|e| PredictorError::Io(e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let (id, designs) = decode_request(&line, schema).map_err(PredictorError::Protocol)?;
        let outputs = predictor.evaluate(schema, &designs)?;
        writeln!(output, "{}", encode_response(id, &outputs))
            .and_then(|_| output.flush())
            .map_err(|e| PredictorError::Io(e.to_string()))?;
    }
    Ok(())
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Worker {
    fn spawn(command: &[String]) -> Result<Self, PredictorError> {
        let mut child = Command::new(&command[0])
            .args(&command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| PredictorError::Spawn(format!("{}: {e}", command[0])))?;
        let stdin = child.stdin.take().ok_or_else(|| PredictorError::Spawn("no stdin".into()))?;
        let stdout = child.stdout.take().ok_or_else(|| PredictorError::Spawn("no stdout".into()))?;
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Worker {
            child,
            stdin,
            lines: rx,
        })
    }
}

/// Talks to an external process over the line protocol. One request is in
/// flight per process at a time.
pub struct SubprocessPredictor<S> {
    spec: PredictorSpec,
    command: Vec<String>,
    deterministic: bool,
    batch_size: usize,
    timeout: Duration,
    worker: Mutex<Option<Worker>>,
    next_id: AtomicU64,
    _scalar: std::marker::PhantomData<fn() -> S>,
}

impl<S: Scalar> SubprocessPredictor<S> {
    pub fn new(
        spec: PredictorSpec,
        command: Vec<String>,
        deterministic: bool,
        batch_size: usize,
        timeout: Duration,
    ) -> Self {
        SubprocessPredictor {
            spec,
            command,
            deterministic,
            batch_size: batch_size.max(1),
            timeout,
            worker: Mutex::new(None),
            next_id: AtomicU64::new(1),
            _scalar: std::marker::PhantomData,
        }
    }

    fn exchange(
        &self,
        worker: &mut Worker,
        schema: &DesignSchema<S>,
        designs: &[DesignPoint<S>],
    ) -> Result<Vec<Vec<S>>, PredictorError> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let line = encode_request(id, schema, designs);
        writeln!(worker.stdin, "{line}")
            .and_then(|_| worker.stdin.flush())
            .map_err(|e| PredictorError::Io(e.to_string()))?;

        let reply = match worker.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => return Err(PredictorError::Io(e.to_string())),
            Err(RecvTimeoutError::Timeout) => {
                return Err(PredictorError::Timeout(self.timeout.as_millis() as u64))
            }
            Err(RecvTimeoutError::Disconnected) => {
                let status = worker
                    .child
                    .try_wait()
                    .ok()
                    .flatten()
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| "closed its output".into());
                return Err(PredictorError::Exited(status));
            }
        };
        let response: Response = serde_json::from_str(&reply)
            .map_err(|e| PredictorError::Protocol(format!("bad response line: {e}")))?;
        if response.id != id {
            return Err(PredictorError::Protocol(format!(
                "response id {} does not match request id {id}",
                response.id
            )));
        }
        if response.outputs.len() != designs.len() {
            return Err(PredictorError::Protocol(format!(
                "expected {} output rows, got {}",
                designs.len(),
                response.outputs.len()
            )));
        }
        let width = self.spec.channels.len();
        response
            .outputs
            .iter()
            .map(|row| {
                if row.len() != width {
                    return Err(PredictorError::Protocol(format!(
                        "expected {width} channels, got {}",
                        row.len()
                    )));
                }
                row.iter()
                    .map(|v| decode_output(v).map(S::lit).map_err(PredictorError::Protocol))
                    .collect()
            })
            .collect()
    }
}

impl<S: Scalar> Predictor<S> for SubprocessPredictor<S> {
    fn spec(&self) -> &PredictorSpec {
        &self.spec
    }

    fn deterministic(&self) -> bool {
        self.deterministic
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn evaluate(
        &self,
        schema: &DesignSchema<S>,
        designs: &[DesignPoint<S>],
    ) -> Result<Vec<Vec<S>>, PredictorError> {
        let mut slot = self.worker.lock().unwrap_or_else(|e| e.into_inner());
        if slot.is_none() {
            *slot = Some(Worker::spawn(&self.command)?);
        }
        let worker = slot.as_mut().expect("worker present");
        let result = self.exchange(worker, schema, designs);
        if result.is_err() {
            // a worker in an unknown state is not reused
            *slot = None;
        }
        result
    }
}
