use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::corpus::{Label, LabeledExample};
use crate::error::{Error, Result};

use super::protocol::{Request, Response};
use super::{Backend, BackendDescriptor, TrainedModel, TrainingSchedule, Transport};

struct Worker {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Worker {
    fn roundtrip(&mut self, line: &str) -> std::io::Result<String> {
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.write_all(b"\n")?;
        self.stdin.flush()?;
        let mut resp = String::new();
        if self.stdout.read_line(&mut resp)? == 0 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "plugin closed its output",
            ));
        }
        Ok(resp)
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Backend living in child processes speaking the line protocol.
///
/// Each slot of the pool holds one process with one request in flight.
/// Models are process-local, so requests naming a model are routed to the
/// slot that created it. A process that dies is respawned lazily on the
/// next request; the models it held are gone.
pub struct SubprocessBackend {
    descriptor: BackendDescriptor,
    command: Vec<String>,
    slots: Vec<Mutex<Option<Worker>>>,
    affinity: Mutex<HashMap<String, usize>>,
    next_slot: AtomicUsize,
}

impl SubprocessBackend {
    pub fn new(mut descriptor: BackendDescriptor, command: Vec<String>, pool_size: usize) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::ConfigInvalid {
                field: "backend.command".into(),
                message: "empty command".into(),
            });
        }
        descriptor.transport = Transport::Subprocess;
        Ok(Self {
            descriptor,
            command,
            slots: (0..pool_size.max(1)).map(|_| Mutex::new(None)).collect(),
            affinity: Mutex::default(),
            next_slot: AtomicUsize::new(0),
        })
    }

    fn spawn(&self) -> Result<Worker> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::backend(format!("spawning `{}`: {e}", self.command[0]), true))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Worker { child, stdin, stdout })
    }

    fn call(&self, request: &Request) -> Result<Response> {
        let slot = match request.model_id() {
            Some(id) => self.affinity.lock().expect("lock").get(id).copied(),
            None => None,
        }
        .unwrap_or_else(|| self.next_slot.fetch_add(1, Ordering::Relaxed) % self.slots.len());
        let line = serde_json::to_string(request)?;
        let mut guard = self.slots[slot].lock().expect("lock");
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let raw = match guard.as_mut().expect("worker").roundtrip(&line) {
            Ok(raw) => raw,
            Err(e) => {
                *guard = None;
                return Err(Error::backend(format!("plugin process failed: {e}"), true));
            }
        };
        drop(guard);
        let resp: Response = serde_json::from_str(&raw)
            .map_err(|e| Error::backend(format!("malformed plugin response: {e}"), false))?;
        let resp = resp.into_result()?;
        if let (Some(id), Request::TrainClassifier { .. } | Request::TuneGenerator { .. }) = (&resp.model_id, request) {
            self.affinity.lock().expect("lock").insert(id.clone(), slot);
        }
        Ok(resp)
    }
}

fn missing(field: &str) -> Error {
    Error::backend(format!("plugin response lacks `{field}`"), false)
}

impl Backend for SubprocessBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn train(&self, train: &[LabeledExample], val: &[LabeledExample], schedule: &TrainingSchedule) -> Result<TrainedModel> {
        let resp = self.call(&Request::TrainClassifier {
            train: train.to_vec(),
            val: val.to_vec(),
            schedule: schedule.clone(),
        })?;
        Ok(TrainedModel {
            model_id: resp.model_id.ok_or_else(|| missing("model_id"))?,
            log: resp.log.ok_or_else(|| missing("log"))?,
        })
    }

    fn score(&self, model_id: &str, texts: &[String]) -> Result<Vec<f64>> {
        self.call(&Request::Predict {
            model_id: model_id.into(),
            texts: texts.to_vec(),
        })?
        .scores
        .ok_or_else(|| missing("scores"))
    }

    fn tune(&self, examples: &[LabeledExample], dataset: &str, class: Label) -> Result<String> {
        self.call(&Request::TuneGenerator {
            examples: examples.to_vec(),
            dataset: dataset.into(),
            class,
        })?
        .model_id
        .ok_or_else(|| missing("model_id"))
    }

    fn generate(&self, model_id: &str, count: usize, max_tokens: usize, seed: u64) -> Result<Vec<String>> {
        self.call(&Request::Sample {
            model_id: model_id.into(),
            count,
            max_tokens,
            seed,
        })?
        .samples
        .ok_or_else(|| missing("samples"))
    }
}
