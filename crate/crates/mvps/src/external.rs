//! Out-of-process scorers speaking a JSON-lines protocol.
//!
//! Per batch the engine writes one request line on the child's stdin:
//! `{"d":..,"h":..,"w":..,"prompts":[{"id":..,"embedding":[..],"mask_b64":..}],
//! "queries":[{"id":..,"embedding":[..]}]}` and reads one reply line
//! `{"masks_b64":[..]}` holding a mask per query in query order. Masks are
//! base64 of the bit-packed layout used by the embedding files.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use mvps_core::datamodel::Item;
use mvps_core::environment::Scorer;
use mvps_core::mask::Mask;
use serde::{Deserialize, Serialize};

use crate::error::ScorerError;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMsg {
    pub id: u64,
    pub embedding: Vec<f64>,
    pub mask_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMsg {
    pub id: u64,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub prompts: Vec<PromptMsg>,
    pub queries: Vec<QueryMsg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub masks_b64: Vec<String>,
}

pub fn encode_mask(mask: &Mask) -> String {
    B64.encode(mask.packed())
}

pub fn decode_mask(h: usize, w: usize, text: &str) -> Result<Mask, String> {
    let bytes = B64.decode(text).map_err(|e| format!("bad base64: {e}"))?;
    Mask::from_packed(h, w, &bytes).map_err(|e| e.to_string())
}

impl Request {
    /// Builds the request for one batch. Query masks are never sent.
    pub fn new(prompts: &[&Item], queries: &[&Item]) -> Result<Self, ScorerError> {
        let first = queries.first().or(prompts.first()).ok_or_else(|| ScorerError::Protocol("empty batch".into()))?;
        Ok(Request {
            d: first.embedding.len(),
            h: first.mask.h(),
            w: first.mask.w(),
            prompts: prompts
                .iter()
                .map(|p| PromptMsg { id: p.image_id, embedding: p.embedding.clone(), mask_b64: encode_mask(&p.mask) })
                .collect(),
            queries: queries.iter().map(|q| QueryMsg { id: q.image_id, embedding: q.embedding.clone() }).collect(),
        })
    }
}

/// A child process answering scoring requests, one at a time.
pub struct ExternalScorer {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
}

impl ExternalScorer {
    /// Starts `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self, ScorerError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ScorerError::Spawn { command: command.to_owned(), source })?;
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        // The reader thread ends when the child closes stdout or the receiver is dropped.
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ExternalScorer {
            command: command.to_owned(),
            stdin: child.stdin.take(),
            child,
            lines: rx,
            timeout: DEFAULT_TIMEOUT,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn request(&mut self, prompts: &[&Item], queries: &[&Item]) -> Result<Vec<Mask>, ScorerError> {
        let req = Request::new(prompts, queries)?;
        let mut line = serde_json::to_string(&req).map_err(|e| ScorerError::Protocol(e.to_string()))?;
        line.push('\n');
        let stdin = self.stdin.as_mut().ok_or_else(|| ScorerError::Exited("stdin closed".into()))?;
        if let Err(e) = stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()) {
            return Err(self.exit_reason().unwrap_or(ScorerError::Pipe(e)));
        }
        let reply = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(text)) => text,
            Ok(Err(e)) => return Err(ScorerError::Pipe(e)),
            Err(RecvTimeoutError::Timeout) => {
                let _ = self.child.kill();
                return Err(ScorerError::Timeout(self.timeout.as_secs()));
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(self.exit_reason().unwrap_or(ScorerError::Exited("closed stdout".into())));
            }
        };
        let reply: Reply = serde_json::from_str(&reply).map_err(|e| ScorerError::Protocol(e.to_string()))?;
        if reply.masks_b64.len() != queries.len() {
            return Err(ScorerError::CountMismatch { got: reply.masks_b64.len(), want: queries.len() });
        }
        reply.masks_b64.iter().map(|m| decode_mask(req.h, req.w, m).map_err(ScorerError::Protocol)).collect()
    }

    fn exit_reason(&mut self) -> Option<ScorerError> {
        // Give a dying child a moment so its status can be reported.
        for _ in 0..50 {
            if let Ok(Some(status)) = self.child.try_wait() {
                return Some(ScorerError::Exited(status.to_string()));
            }
            thread::sleep(Duration::from_millis(10));
        }
        None
    }
}

impl Scorer for ExternalScorer {
    fn predict(&mut self, prompts: &[&Item], queries: &[&Item]) -> mvps_core::Result<Vec<Mask>> {
        self.request(prompts, queries).map_err(|e| mvps_core::Error::Scorer { index: 0, message: e.to_string() })
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        // Closing stdin asks the child to exit; kill it if it lingers.
        self.stdin.take();
        for _ in 0..100 {
            if matches!(self.child.try_wait(), Ok(Some(_))) {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_base64_round_trip() {
        let m = Mask::from_fn(5, 3, |r, c| (r + c) % 2 == 0);
        assert_eq!(decode_mask(5, 3, &encode_mask(&m)).unwrap(), m);
        assert!(decode_mask(5, 3, "!!").is_err());
    }

    #[test]
    fn request_json_shape() {
        let item =
            Item { image_id: 9, embedding: vec![0.5, -1.0], class_label: 0, domain_id: 0, mask: Mask::full(2, 4) };
        let req = Request::new(&[&item], &[&item]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&req).unwrap();
        assert_eq!(v["d"], 2);
        assert_eq!(v["prompts"][0]["mask_b64"], "/w==");
        assert!(v["queries"][0].get("mask_b64").is_none());
    }
}
