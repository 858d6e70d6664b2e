//! Wire protocol for out-of-process backends.
//!
//! Requests and responses are single JSON objects. Over a subprocess they
//! travel one per line on stdin/stdout with one request in flight; over HTTP
//! the same bodies are POSTed to `/v1/<op>`.
//!
//! ```text
//! -> {"op":"predict","model_id":"lex-…","texts":["…"]}
//! <- {"ok":true,"scores":[0.93]}
//! <- {"ok":false,"code":"UNTRAINED_CLASSIFIER","message":"…","retryable":false}
//! ```

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, LabeledExample};
use crate::error::{Error, Result};

use super::{Backend, TrainingLog, TrainingSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    TrainClassifier {
        train: Vec<LabeledExample>,
        val: Vec<LabeledExample>,
        schedule: TrainingSchedule,
    },
    Predict {
        model_id: String,
        texts: Vec<String>,
    },
    TuneGenerator {
        examples: Vec<LabeledExample>,
        dataset: String,
        class: Label,
    },
    Sample {
        model_id: String,
        count: usize,
        max_tokens: usize,
        seed: u64,
    },
}

impl Request {
    pub fn op(&self) -> &'static str {
        match self {
            Request::TrainClassifier { .. } => "train_classifier",
            Request::Predict { .. } => "predict",
            Request::TuneGenerator { .. } => "tune_generator",
            Request::Sample { .. } => "sample",
        }
    }

    /// Model the request must be routed to, if any.
    pub fn model_id(&self) -> Option<&str> {
        match self {
            Request::Predict { model_id, .. } | Request::Sample { model_id, .. } => Some(model_id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<TrainingLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retryable: Option<bool>,
}

impl Response {
    pub fn error(err: &Error) -> Self {
        Response {
            ok: false,
            code: Some(err.code().to_string()),
            message: Some(err.to_string()),
            retryable: Some(err.is_retryable()),
            ..Default::default()
        }
    }

    /// Converts a failed response into a local error. Remote contract
    /// violations surface as non-retryable backend failures carrying the
    /// remote code.
    pub fn into_result(self) -> Result<Response> {
        if self.ok {
            return Ok(self);
        }
        let code = self.code.unwrap_or_else(|| "BACKEND_FAILURE".into());
        let message = self.message.unwrap_or_default();
        Err(match code.as_str() {
            "UNTRAINED_CLASSIFIER" => Error::UntrainedClassifier { model_id: message },
            "UNKNOWN_GENERATOR" => Error::UnknownGenerator { model_id: message },
            _ => Error::BackendFailure {
                message: format!("{code}: {message}"),
                retryable: self.retryable.unwrap_or(false),
            },
        })
    }
}

/// Executes one request against a backend.
pub fn handle(backend: &dyn Backend, request: Request) -> Response {
    let result = match request {
        Request::TrainClassifier { train, val, schedule } => backend.train(&train, &val, &schedule).map(|t| Response {
            ok: true,
            model_id: Some(t.model_id),
            log: Some(t.log),
            ..Default::default()
        }),
        Request::Predict { model_id, texts } => backend.score(&model_id, &texts).map(|s| Response {
            ok: true,
            scores: Some(s),
            ..Default::default()
        }),
        Request::TuneGenerator { examples, dataset, class } => {
            backend.tune(&examples, &dataset, class).map(|id| Response {
                ok: true,
                model_id: Some(id),
                ..Default::default()
            })
        }
        Request::Sample {
            model_id,
            count,
            max_tokens,
            seed,
        } => backend.generate(&model_id, count, max_tokens, seed).map(|s| Response {
            ok: true,
            samples: Some(s),
            ..Default::default()
        }),
    };
    result.unwrap_or_else(|e| Response::error(&e))
}

/// Parses and executes one request line, always producing a response.
pub fn handle_line(backend: &dyn Backend, line: &str) -> Response {
    match serde_json::from_str::<Request>(line) {
        Ok(req) => handle(backend, req),
        Err(e) => Response::error(&Error::Format(format!("bad request: {e}"))),
    }
}

/// Serves newline-delimited requests until EOF. `crash_on_request`, when set,
/// makes the server exit abruptly (without answering) on that request,
/// which is how crash handling is exercised.
pub fn serve_lines<R: BufRead, W: Write>(
    backend: &dyn Backend,
    reader: R,
    mut writer: W,
    crash_on_request: Option<usize>,
) -> std::io::Result<()> {
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if crash_on_request == Some(n + 1) {
            std::process::exit(101);
        }
        let resp = handle_line(backend, &line);
        serde_json::to_writer(&mut writer, &resp)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ReferenceBackend;

    #[test]
    fn request_wire_format() {
        let r = Request::Predict {
            model_id: "m".into(),
            texts: vec!["a".into()],
        };
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"op":"predict","model_id":"m","texts":["a"]}"#);
        let ok = Response {
            ok: true,
            scores: Some(vec![0.5]),
            ..Default::default()
        };
        assert_eq!(serde_json::to_string(&ok).unwrap(), r#"{"ok":true,"scores":[0.5]}"#);
    }

    #[test]
    fn serve_loop_answers_each_line() {
        let backend = ReferenceBackend::default();
        let input = concat!(
            r#"{"op":"tune_generator","examples":[{"id":"1","text":"a b","label":"hate","source_dataset":"D","split":"train","origin":"gold","provenance":null}],"dataset":"D","class":"hate"}"#,
            "\n",
            "not json\n",
            r#"{"op":"predict","model_id":"missing","texts":["x"]}"#,
            "\n"
        );
        let mut out = Vec::new();
        serve_lines(&backend, input.as_bytes(), &mut out, None).unwrap();
        let lines: Vec<Response> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].ok && lines[0].model_id.as_deref().unwrap().starts_with("markov-"));
        assert_eq!(lines[1].code.as_deref(), Some("FORMAT_ERROR"));
        assert_eq!(lines[2].code.as_deref(), Some("UNTRAINED_CLASSIFIER"));
        assert_eq!(lines[2].retryable, Some(false));
    }
}
