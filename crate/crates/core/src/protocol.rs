//! Newline-delimited frames spoken between the host and an external guest
//! interpreter, and a host-side client that drives one guest.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::Schema;
use crate::sandbox::Intent;
use crate::udf::UdfMode;
use crate::value::Value;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntentKind {
    Syscall,
    Egress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Frame {
    Hello {
        version: u32,
    },
    Setup {
        env_id: u64,
        mode: UdfMode,
        schema: Schema,
        code: String,
    },
    Batch {
        seq: u64,
        rows: Vec<Vec<Value>>,
    },
    Result {
        seq: u64,
        rows: Vec<Vec<Value>>,
    },
    Stats {
        seq: u64,
        rss_bytes: u64,
    },
    Intent {
        kind: IntentKind,
        /// Syscall name, or `host:port` for egress.
        name: String,
        #[serde(default)]
        args: BTreeMap<String, String>,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seq: Option<u64>,
        message: String,
    },
    Bye,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unknown frame type `{0}`")]
    UnknownType(String),
    #[error("expected {expected}, got {got}")]
    Unexpected { expected: String, got: String },
    #[error("guest error{}: {message}", seq.map(|s| format!(" for batch {s}")).unwrap_or_default())]
    Guest { seq: Option<u64>, message: String },
    #[error("guest speaks protocol version {0}")]
    VersionMismatch(u32),
    #[error("guest closed the stream")]
    Closed,
    #[error("bad egress destination `{0}`")]
    BadDestination(String),
}

impl From<std::io::Error> for ProtocolError {
    fn from(e: std::io::Error) -> Self {
        ProtocolError::Io(e.to_string())
    }
}

impl Frame {
    pub fn type_name(&self) -> &'static str {
        match self {
            Frame::Hello { .. } => "hello",
            Frame::Setup { .. } => "setup",
            Frame::Batch { .. } => "batch",
            Frame::Result { .. } => "result",
            Frame::Stats { .. } => "stats",
            Frame::Intent { .. } => "intent",
            Frame::Error { .. } => "error",
            Frame::Bye => "bye",
        }
    }

    /// One line, without the trailing newline.
    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("frames serialize")
    }

    pub fn decode(line: &str) -> Result<Self, ProtocolError> {
        let raw: serde_json::Value =
            serde_json::from_str(line.trim_end()).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        let ty = raw
            .get("type")
            .and_then(|t| t.as_str())
            .ok_or_else(|| ProtocolError::Malformed("missing `type`".into()))?;
        const KNOWN: [&str; 8] = ["hello", "setup", "batch", "result", "stats", "intent", "error", "bye"];
        if !KNOWN.contains(&ty) {
            return Err(ProtocolError::UnknownType(ty.to_string()));
        }
        serde_json::from_value(raw).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }

    pub fn to_intent(&self) -> Result<Option<Intent>, ProtocolError> {
        let Frame::Intent { kind, name, args } = self else {
            return Ok(None);
        };
        Ok(Some(match kind {
            IntentKind::Syscall => Intent::Syscall {
                name: name.clone(),
                args: args.clone(),
            },
            IntentKind::Egress => {
                let bad = || ProtocolError::BadDestination(name.clone());
                let (host, port) = name.rsplit_once(':').ok_or_else(bad)?;
                Intent::Egress {
                    host: host.to_string(),
                    port: port.parse().map_err(|_| bad())?,
                }
            }
        }))
    }
}

/// What a guest sent back for one batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchReply {
    pub rows: Vec<Vec<Value>>,
    pub rss_samples: Vec<u64>,
    pub intents: Vec<Intent>,
}

/// Drives one guest: handshake, setup, then strictly paired batch/result
/// exchanges. Stats and intent frames arriving in between are collected.
pub struct GuestClient<R, W> {
    reader: R,
    writer: W,
    next_seq: u64,
    max_rss: u64,
    line: String,
}

impl<R: BufRead, W: Write> GuestClient<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self {
            reader,
            writer,
            next_seq: 0,
            max_rss: 0,
            line: String::new(),
        }
    }

    pub fn send(&mut self, frame: &Frame) -> Result<(), ProtocolError> {
        self.writer.write_all(frame.encode().as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn recv(&mut self) -> Result<Frame, ProtocolError> {
        self.line.clear();
        if self.reader.read_line(&mut self.line)? == 0 {
            return Err(ProtocolError::Closed);
        }
        Frame::decode(&self.line)
    }

    pub fn handshake(&mut self) -> Result<u32, ProtocolError> {
        match self.recv()? {
            Frame::Hello { version } if version == PROTOCOL_VERSION => Ok(version),
            Frame::Hello { version } => Err(ProtocolError::VersionMismatch(version)),
            other => Err(ProtocolError::Unexpected {
                expected: "hello".into(),
                got: other.type_name().into(),
            }),
        }
    }

    /// Setup has no positive acknowledgment; a rejected setup surfaces as an
    /// error frame on the next exchange.
    pub fn setup(&mut self, env_id: u64, mode: UdfMode, schema: &Schema, code: &str) -> Result<(), ProtocolError> {
        self.send(&Frame::Setup {
            env_id,
            mode,
            schema: schema.clone(),
            code: code.to_string(),
        })
    }

    pub fn call_batch(&mut self, rows: Vec<Vec<Value>>) -> Result<BatchReply, ProtocolError> {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.send(&Frame::Batch { seq, rows })?;
        let mut reply = BatchReply::default();
        loop {
            let frame = self.recv()?;
            if let Some(i) = frame.to_intent()? {
                reply.intents.push(i);
                continue;
            }
            match frame {
                Frame::Stats { rss_bytes, .. } => {
                    self.max_rss = self.max_rss.max(rss_bytes);
                    reply.rss_samples.push(rss_bytes);
                }
                Frame::Result { seq: s, rows } if s == seq => {
                    reply.rows = rows;
                    return Ok(reply);
                }
                Frame::Error { seq: s, message } if s.is_none() || s == Some(seq) => {
                    return Err(ProtocolError::Guest { seq: s, message });
                }
                other => {
                    return Err(ProtocolError::Unexpected {
                        expected: format!("result for batch {seq}"),
                        got: other.encode(),
                    })
                }
            }
        }
    }

    /// Running max over every stats frame seen so far.
    pub fn max_rss(&self) -> u64 {
        self.max_rss
    }

    pub fn bye(mut self) -> Result<(R, W), ProtocolError> {
        self.send(&Frame::Bye)?;
        Ok((self.reader, self.writer))
    }
}

/// A guest launched as a child process speaking frames over its stdio.
pub struct GuestProcess {
    pub child: Child,
    pub client: GuestClient<BufReader<ChildStdout>, ChildStdin>,
}

impl GuestProcess {
    pub fn spawn(program: &str, args: &[&str]) -> Result<Self, ProtocolError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self {
            child,
            client: GuestClient::new(BufReader::new(stdout), stdin),
        })
    }

    /// Sends bye and waits for the exit status.
    pub fn shutdown(self) -> Result<std::process::ExitStatus, ProtocolError> {
        let mut child = self.child;
        drop(self.client.bye()?);
        Ok(child.wait()?)
    }
}
