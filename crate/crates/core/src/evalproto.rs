//! Newline-delimited JSON ask/tell protocol for external evaluators.
//!
//! The client opens with `{"proto":"dots-eval","version":1,"dims":d}` and the
//! evaluator answers with the same line. After that every request is
//! `{"id":n,"x":[...]}` and every response is `{"id":n,"y":v}` or
//! `{"id":n,"error":"..."}`. Responses may arrive in any order.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{Direction, KnownOptimum, Objective};

pub const PROTO_NAME: &str = "dots-eval";
pub const PROTO_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Handshake {
    pub proto: String,
    pub version: u32,
    pub dims: usize,
}

impl Handshake {
    pub fn new(dims: usize) -> Self {
        Handshake {
            proto: PROTO_NAME.to_string(),
            version: PROTO_VERSION,
            dims,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRequest {
    pub id: u64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalResponse {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalResponse {
    pub fn parse(line: &str) -> Result<Self> {
        let r: EvalResponse = serde_json::from_str(line)
            .map_err(|e| Error::Protocol(format!("malformed response line {line:?}: {e}")))?;
        match (&r.y, &r.error) {
            (Some(_), None) | (None, Some(_)) => Ok(r),
            _ => Err(Error::Protocol(format!(
                "response {} must carry exactly one of `y` and `error`",
                r.id
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    /// Shell command talking over its stdin and stdout.
    Command(String),
    /// `host:port`.
    Tcp(String),
}

impl FromStr for Transport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("cmd:") {
            let cmd = cmd.trim();
            if cmd.is_empty() {
                return Err(Error::InvalidArgument("empty evaluator command".into()));
            }
            Ok(Transport::Command(cmd.to_string()))
        } else if let Some(addr) = s.strip_prefix("tcp:") {
            if !addr.contains(':') {
                return Err(Error::InvalidArgument(format!("tcp transport needs host:port, got {addr:?}")));
            }
            Ok(Transport::Tcp(addr.to_string()))
        } else {
            Err(Error::InvalidArgument(format!(
                "transport must start with `cmd:` or `tcp:`, got {s:?}"
            )))
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transport::Command(c) => write!(f, "cmd:{c}"),
            Transport::Tcp(a) => write!(f, "tcp:{a}"),
        }
    }
}

enum Incoming {
    Line(String),
    Closed(Option<std::io::Error>),
}

/// A raw line-level connection to an evaluator.
pub struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<Incoming>,
    child: Option<Child>,
    // The reader thread owns a clone of the socket, so dropping the writer
    // alone would leave the connection open.
    socket: Option<TcpStream>,
    closed: bool,
}

impl Connection {
    pub fn open(transport: &Transport) -> Result<Self> {
        match transport {
            Transport::Command(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::Session(format!("cannot start `{cmd}`: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Self::from_parts(Box::new(stdin), stdout, Some(child)))
            }
            Transport::Tcp(addr) => {
                let stream = TcpStream::connect(addr)
                    .map_err(|e| Error::Session(format!("cannot connect to {addr}: {e}")))?;
                stream.set_nodelay(true)?;
                let read = stream.try_clone()?;
                let socket = stream.try_clone()?;
                let mut conn = Self::from_parts(Box::new(stream), read, None);
                conn.socket = Some(socket);
                Ok(conn)
            }
        }
    }

    fn from_parts(
        writer: Box<dyn Write + Send>,
        reader: impl Read + Send + 'static,
        child: Option<Child>,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => {
                        let _ = tx.send(Incoming::Closed(None));
                        return;
                    }
                    Ok(_) => {
                        let line = line.trim_end_matches(['\n', '\r']).to_string();
                        if tx.send(Incoming::Line(line)).is_err() {
                            return;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Incoming::Closed(Some(e)));
                        return;
                    }
                }
            }
        });
        Connection {
            writer: Box::new(std::io::BufWriter::new(writer)),
            lines: rx,
            child,
            socket: None,
            closed: false,
        }
    }

    pub fn send_line(&mut self, line: &str) -> Result<()> {
        let sent = self
            .writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.write_all(b"\n"))
            .and_then(|_| self.writer.flush());
        sent.map_err(|e| Error::Session(format!("evaluator stopped reading: {e}")))
    }

    /// Next non-empty line; `Ok(None)` on timeout.
    pub fn recv_line(&mut self, timeout: Duration) -> Result<Option<String>> {
        if self.closed {
            return Err(Error::Session("evaluator exited".into()));
        }
        loop {
            match self.lines.recv_timeout(timeout) {
                Ok(Incoming::Line(l)) if l.trim().is_empty() => continue,
                Ok(Incoming::Line(l)) => return Ok(Some(l)),
                Ok(Incoming::Closed(err)) => {
                    self.closed = true;
                    return Err(Error::Session(match err {
                        Some(e) => format!("read failed: {e}"),
                        None => "evaluator exited".into(),
                    }));
                }
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => {
                    self.closed = true;
                    return Err(Error::Session("evaluator exited".into()));
                }
            }
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        let _ = self.writer.flush();
        // Closing stdin lets a well-behaved evaluator exit on its own.
        self.writer = Box::new(std::io::sink());
        if let Some(s) = &self.socket {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
        if let Some(mut child) = self.child.take() {
            for _ in 0..50 {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

struct Session {
    conn: Connection,
    next_id: u64,
}

/// An [`Objective`] served by an external program.
pub struct ExternalObjective {
    name: String,
    dims: usize,
    direction: Direction,
    optimum: Option<KnownOptimum>,
    timeout: Duration,
    inflight: usize,
    session: Mutex<Session>,
}

impl fmt::Debug for ExternalObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalObjective")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .field("inflight", &self.inflight)
            .finish()
    }
}

/// Connects to an evaluator and completes the handshake.
pub fn external_objective(transport: &Transport, dims: usize, timeout: Duration) -> Result<ExternalObjective> {
    let mut conn = Connection::open(transport)?;
    let hello = serde_json::to_string(&Handshake::new(dims)).expect("handshake serializes");
    conn.send_line(&hello)?;
    let line = conn
        .recv_line(timeout)?
        .ok_or_else(|| Error::Protocol("no handshake from evaluator".into()))?;
    let reply: Handshake = serde_json::from_str(&line)
        .map_err(|_| Error::Protocol(format!("expected handshake, got {line:?}")))?;
    if reply != Handshake::new(dims) {
        return Err(Error::Protocol(format!(
            "handshake mismatch: sent {hello}, got {line}"
        )));
    }
    Ok(ExternalObjective {
        name: transport.to_string(),
        dims,
        direction: Direction::Minimize,
        optimum: None,
        timeout,
        inflight: 1,
        session: Mutex::new(Session { conn, next_id: 1 }),
    })
}

impl ExternalObjective {
    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn with_optimum(mut self, optimum: KnownOptimum) -> Self {
        self.optimum = Some(optimum);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Requests kept outstanding at once during batch evaluation.
    pub fn with_inflight(mut self, inflight: usize) -> Self {
        self.inflight = inflight.max(1);
        self
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    fn exchange(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if let Some(x) = xs.iter().find(|x| x.len() != self.dims) {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                actual: x.len(),
            });
        }
        let mut s = self.session.lock().unwrap_or_else(|p| p.into_inner());
        let first = s.next_id;
        s.next_id += xs.len() as u64;
        let mut out: Vec<Option<f64>> = vec![None; xs.len()];
        let mut outstanding: VecDeque<u64> = VecDeque::new();
        let mut early: HashMap<u64, EvalResponse> = HashMap::new();
        let mut sent = 0;
        let mut done = 0;
        while done < xs.len() {
            while sent < xs.len() && outstanding.len() < self.inflight {
                let id = first + sent as u64;
                let req = EvalRequest { id, x: xs[sent].clone() };
                s.conn.send_line(&serde_json::to_string(&req).expect("request serializes"))?;
                outstanding.push_back(id);
                sent += 1;
            }
            let line = s
                .conn
                .recv_line(self.timeout)?
                .ok_or(Error::Timeout { id: outstanding[0] })?;
            let resp = EvalResponse::parse(&line)?;
            if !outstanding.contains(&resp.id) || early.contains_key(&resp.id) {
                return Err(Error::Protocol(format!("response for unknown request id {}", resp.id)));
            }
            early.insert(resp.id, resp);
            // Retire answered requests in id order.
            while let Some(id) = outstanding.front().copied() {
                let Some(resp) = early.remove(&id) else { break };
                outstanding.pop_front();
                let slot = (id - first) as usize;
                match (resp.y, resp.error) {
                    (Some(y), _) => out[slot] = Some(y),
                    (None, Some(msg)) => return Err(Error::Evaluation { id, message: msg }),
                    (None, None) => unreachable!("parse checks"),
                }
                done += 1;
            }
        }
        Ok(out.into_iter().map(|y| y.expect("all answered")).collect())
    }
}

impl Objective for ExternalObjective {
    fn name(&self) -> &str {
        &self.name
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok(self.exchange(std::slice::from_ref(&x.to_vec()))?[0])
    }

    fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.exchange(xs)
    }

    fn known_optimum(&self) -> Option<KnownOptimum> {
        self.optimum.clone()
    }
}

/// Runs a conforming evaluator for `objective` over a line stream until the
/// client hangs up. Requests are answered in arrival order.
pub fn serve<R: BufRead, W: Write>(objective: &dyn Objective, input: R, mut output: W) -> Result<()> {
    let mut lines = input.lines();
    let Some(first) = lines.next() else {
        return Ok(());
    };
    let first = first?;
    let hello: Handshake = serde_json::from_str(&first)
        .map_err(|_| Error::Protocol(format!("expected handshake, got {first:?}")))?;
    if hello.proto != PROTO_NAME || hello.version != PROTO_VERSION {
        return Err(Error::Protocol(format!("unsupported handshake {first}")));
    }
    writeln!(output, "{}", serde_json::to_string(&hello).expect("handshake serializes"))?;
    output.flush()?;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: EvalRequest = serde_json::from_str(&line)
            .map_err(|e| Error::Protocol(format!("malformed request {line:?}: {e}")))?;
        let resp = match objective.evaluate(&req.x) {
            Ok(y) if y.is_finite() => EvalResponse { id: req.id, y: Some(y), error: None },
            Ok(y) => EvalResponse { id: req.id, y: None, error: Some(y.to_string()) },
            Err(e) => EvalResponse { id: req.id, y: None, error: Some(e.to_string()) },
        };
        writeln!(output, "{}", serde_json::to_string(&resp).expect("response serializes"))?;
        output.flush()?;
    }
    Ok(())
}

/// Outcome of probing an evaluator.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    /// `(step, failure)` for every step attempted; `None` means it passed.
    pub steps: Vec<(String, Option<String>)>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.steps.iter().all(|(_, f)| f.is_none())
    }

    pub fn failures(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().filter_map(|(_, f)| f.as_deref())
    }
}

/// Handshake plus three canned requests, each checked for conformance.
pub fn check_evaluator(transport: &Transport, dims: usize, timeout: Duration) -> Result<CheckReport> {
    let mut conn = Connection::open(transport)?;
    let mut steps = Vec::new();
    let hello = Handshake::new(dims);
    conn.send_line(&serde_json::to_string(&hello).expect("handshake serializes"))?;
    let handshake_fault = match conn.recv_line(timeout) {
        Ok(None) => Some("handshake missing: no reply before timeout".to_string()),
        Err(e) => Some(format!("handshake missing: {e}")),
        Ok(Some(line)) => match serde_json::from_str::<Handshake>(&line) {
            Err(_) => Some(format!("handshake missing: first line was {line:?}")),
            Ok(h) if h != hello => Some(format!("handshake mismatch: got {line}")),
            Ok(_) => None,
        },
    };
    let abort = handshake_fault.is_some();
    steps.push(("handshake".to_string(), handshake_fault));
    if abort {
        return Ok(CheckReport { steps });
    }

    let probes = [vec![0.0; dims], vec![0.5; dims], vec![-1.25; dims]];
    for (i, x) in probes.into_iter().enumerate() {
        let id = i as u64 + 1;
        let step = format!("request {id}");
        conn.send_line(&serde_json::to_string(&EvalRequest { id, x }).expect("request serializes"))?;
        let fault = match conn.recv_line(timeout) {
            Ok(None) => Some(format!("timeout waiting for response {id}")),
            Err(e) => Some(format!("no response {id}: {e}")),
            Ok(Some(line)) => match EvalResponse::parse(&line) {
                Err(e) => Some(e.to_string()),
                Ok(r) if r.id != id => Some(format!("mismatched id: expected {id}, got {}", r.id)),
                Ok(EvalResponse { error: Some(msg), .. }) => Some(format!("evaluator error for {id}: {msg}")),
                Ok(_) => None,
            },
        };
        let fatal = fault.is_some();
        steps.push((step, fault));
        if fatal {
            break;
        }
    }
    Ok(CheckReport { steps })
}
