//! Running the code section of a response.
//!
//! Two dialects exist. If the code is a formulation document (the IR dialect)
//! it is solved in-process. Anything else is a solver script and goes to an
//! external sandbox runner over a length-prefixed JSON protocol: a 4-byte
//! big-endian length followed by that many bytes of UTF-8 JSON, once per
//! request and once per response.

use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::formulation::{parse_formulation, Formulation};
use crate::rational::{parse_rational, Rational};
use crate::solver::{relax_integrality, solve_with, SolveStatus, SolverOptions};

/// Maximum accepted frame size on the wire.
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub code: String,
    /// Seconds.
    pub timeout: f64,
    /// Bytes.
    pub memory_limit: u64,
}

impl ExecRequest {
    pub fn new(code: impl Into<String>) -> Self {
        ExecRequest { code: code.into(), timeout: 30.0, memory_limit: 1 << 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    ExecError,
    Timeout,
    NoObjective,
    Oom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    pub status: ExecStatus,
    #[serde(default)]
    pub objective: Option<String>,
    #[serde(default)]
    pub stdout_tail: String,
    #[serde(default)]
    pub stderr_tail: String,
    /// Seconds.
    #[serde(default)]
    pub wall_time: f64,
}

/// What happened when a piece of code was run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecOutcome {
    Optimal(Rational),
    Infeasible,
    Unbounded,
    Timeout,
    NoObjective,
    Oom,
    Error(String),
    /// No executor can run this dialect (e.g. a script with no sandbox).
    Unavailable(String),
}

/// Whether to run the code as written or with integrality dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    AsDeclared,
    Relaxed,
}

pub trait Executor: Send + Sync {
    fn run(&self, code: &str, variant: Variant) -> ExecOutcome;
}

/// Parses code as an IR document if it looks like one.
pub fn as_ir(code: &str) -> Option<Formulation> {
    let trimmed = code.trim_start();
    if !trimmed.starts_with('{') {
        return None;
    }
    parse_formulation(code).ok()
}

/// In-process executor for the IR dialect; scripts are reported as errors.
#[derive(Debug, Clone, Copy, Default)]
pub struct IrExecutor {
    pub options: SolverOptions,
}

impl IrExecutor {
    pub fn run_formulation(&self, f: &Formulation, variant: Variant) -> ExecOutcome {
        let result = match variant {
            Variant::AsDeclared => solve_with(f, &self.options),
            Variant::Relaxed => solve_with(&relax_integrality(f), &self.options),
        };
        match result.status {
            SolveStatus::Optimal => ExecOutcome::Optimal(result.objective.expect("optimal has objective")),
            SolveStatus::Infeasible => ExecOutcome::Infeasible,
            SolveStatus::Unbounded => ExecOutcome::Unbounded,
            SolveStatus::Error => ExecOutcome::Error(result.diagnostic.unwrap_or_else(|| "solver error".into())),
        }
    }
}

impl Executor for IrExecutor {
    fn run(&self, code: &str, variant: Variant) -> ExecOutcome {
        if code.trim_start().starts_with('{') {
            return match parse_formulation(code) {
                Ok(f) => self.run_formulation(&f, variant),
                Err(e) => ExecOutcome::Error(e.to_string()),
            };
        }
        ExecOutcome::Unavailable("code is not an IR document and no sandbox runner is configured".into())
    }
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|l| (*l as usize) <= MAX_FRAME)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Writes one request and reads one result over any duplex stream.
pub fn exchange<S: Read + Write>(stream: &mut S, req: &ExecRequest) -> io::Result<ExecResult> {
    let payload = serde_json::to_vec(req).map_err(io::Error::other)?;
    write_frame(stream, &payload)?;
    let reply = read_frame(stream)?;
    serde_json::from_slice(&reply).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// How to reach the sandbox runner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunnerEndpoint {
    /// A runner listening on a Unix socket.
    Socket(PathBuf),
    /// A program started per request in one-shot mode; the framed request goes
    /// to its stdin and the framed result comes back on stdout.
    OneShot { program: String, args: Vec<String> },
}

#[derive(Debug, Clone)]
pub struct SandboxClient {
    pub endpoint: RunnerEndpoint,
    pub timeout: Duration,
    pub memory_limit: u64,
    /// Extra wall-clock allowance on top of the request timeout.
    pub grace: Duration,
}

impl SandboxClient {
    pub fn new(endpoint: RunnerEndpoint) -> Self {
        SandboxClient {
            endpoint,
            timeout: Duration::from_secs(30),
            memory_limit: 1 << 30,
            grace: Duration::from_secs(5),
        }
    }

    pub fn request(&self, code: &str) -> ExecRequest {
        ExecRequest { code: code.to_string(), timeout: self.timeout.as_secs_f64(), memory_limit: self.memory_limit }
    }

    pub fn execute(&self, req: &ExecRequest) -> io::Result<ExecResult> {
        let deadline = Duration::from_secs_f64(req.timeout) + self.grace;
        match &self.endpoint {
            RunnerEndpoint::Socket(path) => {
                #[cfg(unix)]
                {
                    let mut stream = std::os::unix::net::UnixStream::connect(path)?;
                    stream.set_read_timeout(Some(deadline))?;
                    stream.set_write_timeout(Some(deadline))?;
                    exchange(&mut stream, req)
                }
                #[cfg(not(unix))]
                {
                    let _ = path;
                    Err(io::Error::new(io::ErrorKind::Unsupported, "unix sockets unavailable"))
                }
            }
            RunnerEndpoint::OneShot { program, args } => one_shot(program, args, req, deadline),
        }
    }
}

fn one_shot(program: &str, args: &[String], req: &ExecRequest, deadline: Duration) -> io::Result<ExecResult> {
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()?;
    let payload = serde_json::to_vec(req).map_err(io::Error::other)?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let mut stdout = child.stdout.take().expect("piped stdout");
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let result = write_frame(&mut stdin, &payload).and_then(|_| {
            drop(stdin);
            read_frame(&mut stdout)
        });
        let _ = tx.send(result);
    });
    let outcome = rx.recv_timeout(deadline);
    let _ = child.kill();
    let _ = child.wait();
    match outcome {
        Ok(frame) => serde_json::from_slice(&frame?).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
        Err(_) => Err(io::Error::new(io::ErrorKind::TimedOut, "runner did not answer in time")),
    }
}

/// Rewrites integer variable declarations in common solver-API spellings to
/// continuous ones. Binary declarations are left alone since dropping their
/// type would also drop the implied unit bounds.
pub fn relax_script(code: &str) -> String {
    let rules = [
        (r"GRB\.INTEGER", "GRB.CONTINUOUS"),
        (r#"vtype\s*=\s*(['"])I(['"])"#, "vtype=${1}C${2}"),
        (r#"cat\s*=\s*(['"])Integer(['"])"#, "cat=${1}Continuous${2}"),
        (r"\bNonNegativeIntegers\b", "NonNegativeReals"),
        (r"\bNonPositiveIntegers\b", "NonPositiveReals"),
        (r"\bIntegers\b", "Reals"),
        (r"integer\s*=\s*True", "integer=False"),
    ];
    let mut out = code.to_string();
    for (pat, rep) in rules {
        let re = Regex::new(pat).expect("static pattern");
        out = re.replace_all(&out, rep).into_owned();
    }
    out
}

impl ExecResult {
    pub fn outcome(&self) -> ExecOutcome {
        match self.status {
            ExecStatus::Ok => match self.objective.as_deref().map(parse_rational) {
                Some(Ok(v)) => ExecOutcome::Optimal(v),
                Some(Err(e)) => ExecOutcome::Error(e.to_string()),
                None => ExecOutcome::NoObjective,
            },
            ExecStatus::ExecError => ExecOutcome::Error(tail_message(&self.stderr_tail)),
            ExecStatus::Timeout => ExecOutcome::Timeout,
            ExecStatus::NoObjective => ExecOutcome::NoObjective,
            ExecStatus::Oom => ExecOutcome::Oom,
        }
    }
}

fn tail_message(stderr: &str) -> String {
    stderr.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("script failed").trim().to_string()
}

/// IR code runs in-process; scripts go to the sandbox when one is configured.
#[derive(Debug, Clone, Default)]
pub struct DefaultExecutor {
    pub ir: IrExecutor,
    pub sandbox: Option<SandboxClient>,
}

impl DefaultExecutor {
    pub fn with_sandbox(sandbox: SandboxClient) -> Self {
        DefaultExecutor { ir: IrExecutor::default(), sandbox: Some(sandbox) }
    }
}

impl Executor for DefaultExecutor {
    fn run(&self, code: &str, variant: Variant) -> ExecOutcome {
        if let Some(f) = as_ir(code) {
            return self.ir.run_formulation(&f, variant);
        }
        let Some(sandbox) = &self.sandbox else {
            return self.ir.run(code, variant);
        };
        let code = match variant {
            Variant::AsDeclared => code.to_string(),
            Variant::Relaxed => relax_script(code),
        };
        match sandbox.execute(&sandbox.request(&code)) {
            Ok(result) => result.outcome(),
            Err(e) if e.kind() == io::ErrorKind::TimedOut || e.kind() == io::ErrorKind::WouldBlock => {
                ExecOutcome::Timeout
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::NotFound | io::ErrorKind::ConnectionRefused) => {
                ExecOutcome::Unavailable(format!("sandbox runner: {e}"))
            }
            Err(e) => ExecOutcome::Error(format!("sandbox runner: {e}")),
        }
    }
}
