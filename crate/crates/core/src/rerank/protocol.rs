//! Line-delimited JSON protocol spoken with external scorer processes.
//!
//! ```text
//! -> {"protocol": 1}
//! <- {"protocol": 1, ...}
//! -> {"id": "r0", "query": "...", "text": "..."}
//! -> {"id": "r1", "query": "...", "text": "..."}
//! ->
//! <- {"id": "r1", "score": 0.2}
//! <- {"id": "r0", "score": 1.5}
//! <-
//! ```
//!
//! Each batch ends with an empty line in both directions. Responses may
//! come back in any order; an `{"id", "error"}` record fails the batch.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u64 = 1;

pub struct ProtocolClient {
    child: Option<Child>,
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    timeout: Duration,
    handshake: Value,
    next_id: u64,
    poisoned: bool,
}

impl std::fmt::Debug for ProtocolClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProtocolClient")
            .field("timeout", &self.timeout)
            .field("handshake", &self.handshake)
            .finish()
    }
}

impl ProtocolClient {
    /// Starts `command` with piped stdio and performs the handshake.
    pub fn spawn(command: &mut Command, timeout: Duration) -> Result<Self> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Protocol(format!("cannot start scorer: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = ProtocolClient::connect(stdout, stdin, timeout);
        if let Ok(c) = client.as_mut() {
            c.child = Some(child);
        } else {
            let _ = child.kill();
            let _ = child.wait();
        }
        client
    }

    /// Speaks the protocol over an arbitrary byte stream pair.
    pub fn connect<R, W>(reader: R, writer: W, timeout: Duration) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut client = ProtocolClient {
            child: None,
            writer: Box::new(writer),
            lines: rx,
            timeout,
            handshake: Value::Null,
            next_id: 0,
            poisoned: false,
        };
        client.send_line(&json!({ "protocol": PROTOCOL_VERSION }).to_string())?;
        client.flush()?;
        let reply = client.recv("handshake")?;
        let reply: Value =
            serde_json::from_str(&reply).map_err(|e| Error::Protocol(format!("bad handshake reply: {e}")))?;
        if reply.get("protocol").and_then(Value::as_u64) != Some(PROTOCOL_VERSION) {
            return Err(Error::Protocol(format!("unsupported handshake reply {reply}")));
        }
        client.handshake = reply;
        Ok(client)
    }

    pub fn handshake_reply(&self) -> &Value {
        &self.handshake
    }

    fn send_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.writer, "{line}").map_err(|e| Error::Protocol(format!("write failed: {e}")))
    }

    fn flush(&mut self) -> Result<()> {
        self.writer
            .flush()
            .map_err(|e| Error::Protocol(format!("write failed: {e}")))
    }

    fn recv(&self, waiting_for: &str) -> Result<String> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::Protocol(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Scorer {
                id: waiting_for.to_owned(),
                message: format!("timed out after {:?}", self.timeout),
            }),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Scorer {
                id: waiting_for.to_owned(),
                message: "scorer closed its output".into(),
            }),
        }
    }

    /// Sends one batch of request objects (ids are assigned here) and
    /// returns `(id, response)` in request order. Any failure poisons the
    /// client, since the stream may be out of step afterwards.
    pub fn batch(&mut self, requests: Vec<Value>) -> Result<Vec<(String, Value)>> {
        if self.poisoned {
            return Err(Error::Protocol("client unusable after an earlier error".into()));
        }
        let result = self.batch_inner(requests);
        if result.is_err() {
            self.poisoned = true;
        }
        result
    }

    fn batch_inner(&mut self, requests: Vec<Value>) -> Result<Vec<(String, Value)>> {
        let mut ids = Vec::with_capacity(requests.len());
        for req in requests {
            let mut obj = match req {
                Value::Object(m) => m,
                other => return Err(Error::Protocol(format!("request must be an object, got {other}"))),
            };
            let id = format!("r{}", self.next_id);
            self.next_id += 1;
            obj.insert("id".into(), Value::String(id.clone()));
            self.send_line(&Value::Object(obj).to_string())?;
            ids.push(id);
        }
        self.send_line("")?;
        self.flush()?;

        let pending: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut results: Vec<Option<Value>> = vec![None; ids.len()];
        loop {
            let waiting = ids
                .iter()
                .zip(&results)
                .find(|(_, r)| r.is_none())
                .map_or("<batch terminator>", |(id, _)| id.as_str());
            let line = self.recv(waiting)?;
            if line.trim().is_empty() {
                break;
            }
            let resp: Value = serde_json::from_str(&line)
                .map_err(|e| Error::Protocol(format!("malformed response `{line}`: {e}")))?;
            let id = resp
                .get("id")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Protocol(format!("response without id: {line}")))?
                .to_owned();
            if let Some(err) = resp.get("error") {
                return Err(Error::Scorer {
                    id,
                    message: err.as_str().map_or_else(|| err.to_string(), str::to_owned),
                });
            }
            let Some(&pos) = pending.get(id.as_str()) else {
                return Err(Error::Scorer {
                    id,
                    message: "response for an unknown request".into(),
                });
            };
            if results[pos].is_some() {
                return Err(Error::Scorer {
                    id,
                    message: "duplicate response".into(),
                });
            }
            results[pos] = Some(resp);
        }
        ids.into_iter()
            .zip(results)
            .map(|(id, r)| match r {
                Some(v) => Ok((id, v)),
                None => Err(Error::Scorer {
                    id,
                    message: "no response before end of batch".into(),
                }),
            })
            .collect()
    }
}

impl Drop for ProtocolClient {
    fn drop(&mut self) {
        self.writer = Box::new(io::sink());
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Serves the protocol: answers the handshake with `handshake`, then
/// applies `handler` to each request and writes back `{"id", ...}` with the
/// handler's fields, or `{"id", "error"}` when it fails. Returns at end of
/// input.
pub fn serve<R, W, F>(reader: R, mut writer: W, handshake: Value, mut handler: F) -> io::Result<()>
where
    R: BufRead,
    W: Write,
    F: FnMut(&Value) -> std::result::Result<Map<String, Value>, String>,
{
    let mut lines = reader.lines();
    match lines.next() {
        Some(line) => {
            let hello: Value = serde_json::from_str(&line?).unwrap_or(Value::Null);
            if hello.get("protocol").and_then(Value::as_u64) != Some(PROTOCOL_VERSION) {
                writeln!(writer, "{}", json!({ "error": "unsupported protocol" }))?;
                return writer.flush();
            }
            writeln!(writer, "{handshake}")?;
            writer.flush()?;
        }
        None => return Ok(()),
    }
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            writeln!(writer)?;
            writer.flush()?;
            continue;
        }
        let response = match serde_json::from_str::<Value>(&line) {
            Ok(req) => match req.get("id").and_then(Value::as_str) {
                Some(id) => match handler(&req) {
                    Ok(mut fields) => {
                        fields.insert("id".into(), Value::String(id.to_owned()));
                        Value::Object(fields)
                    }
                    Err(message) => json!({ "id": id, "error": message }),
                },
                None => json!({ "id": "", "error": "request without id" }),
            },
            Err(e) => json!({ "id": "", "error": format!("malformed request: {e}") }),
        };
        writeln!(writer, "{response}")?;
    }
    writer.flush()
}
