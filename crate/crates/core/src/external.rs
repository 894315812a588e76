//! Cost evaluation by external simulator processes.
//!
//! Each child process reads one JSON request per line on stdin and answers with one JSON
//! response per line on stdout:
//!
//! ```text
//! -> {"id":7,"fidelity":"hi","rows":2,"cols":3,"design":"100110"}
//! <- {"id":7,"cost":-0.42}
//! <- {"id":8,"error":"solver diverged"}
//! ```
//!
//! Responses are matched to requests by id and may arrive in any order. A child that dies
//! is restarted once and its outstanding requests are replayed; a second death aborts.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdg::BinaryDesign;
use crate::grid::DesignGrid;
use crate::problem::{CostError, CostFunction, CostJob, Fidelity};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalCostRequest {
    pub id: u64,
    pub fidelity: Fidelity,
    pub rows: usize,
    pub cols: usize,
    pub design: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExternalCostResponse {
    Cost { id: u64, cost: f64 },
    Error { id: u64, error: String },
}

impl ExternalCostResponse {
    pub fn id(&self) -> u64 {
        match self {
            ExternalCostResponse::Cost { id, .. } | ExternalCostResponse::Error { id, .. } => *id,
        }
    }
}

impl ExternalCostRequest {
    pub fn new(id: u64, design: &BinaryDesign, fidelity: Fidelity) -> Self {
        ExternalCostRequest {
            id,
            fidelity,
            rows: design.rows(),
            cols: design.cols(),
            design: design.to_bit_string(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("request serialises")
    }

    pub fn parse(line: &str) -> Result<Self> {
        let req: Self = serde_json::from_str(line.trim()).map_err(|e| Error::parse(e.to_string()))?;
        BinaryDesign::from_bit_string(req.rows, req.cols, &req.design)?;
        Ok(req)
    }

    pub fn design(&self) -> Result<BinaryDesign> {
        BinaryDesign::from_bit_string(self.rows, self.cols, &self.design)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResponse {
    id: u64,
    #[serde(default)]
    cost: Option<f64>,
    #[serde(default)]
    error: Option<String>,
}

/// Parses one response line.
pub fn parse_response(line: &str) -> Result<ExternalCostResponse> {
    let raw: RawResponse = serde_json::from_str(line.trim()).map_err(|e| Error::parse(e.to_string()))?;
    match (raw.cost, raw.error) {
        (Some(cost), None) if cost.is_finite() => Ok(ExternalCostResponse::Cost { id: raw.id, cost }),
        (Some(_), None) => Err(Error::parse("cost must be finite")),
        (None, Some(error)) => Ok(ExternalCostResponse::Error { id: raw.id, error }),
        _ => Err(Error::parse("response needs exactly one of `cost` or `error`")),
    }
}

pub fn format_response(resp: &ExternalCostResponse) -> String {
    match resp {
        ExternalCostResponse::Cost { id, cost } => serde_json::json!({ "id": id, "cost": cost }).to_string(),
        ExternalCostResponse::Error { id, error } => serde_json::json!({ "id": id, "error": error }).to_string(),
    }
}

struct ChildProc {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Drop for ChildProc {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct Slot {
    proc: Mutex<Option<ChildProc>>,
    deaths: AtomicUsize,
}

/// Cost function backed by one or more child processes speaking the line protocol.
pub struct ExternalCost {
    grid: DesignGrid,
    command: Vec<String>,
    slots: Vec<Slot>,
    next_id: AtomicU64,
}

impl ExternalCost {
    pub fn new(grid: DesignGrid, command: Vec<String>, processes: usize) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::Config("external cost command is empty".into()));
        }
        let slots = (0..processes.max(1))
            .map(|_| Slot { proc: Mutex::new(None), deaths: AtomicUsize::new(0) })
            .collect();
        Ok(ExternalCost { grid, command, slots, next_id: AtomicU64::new(1) })
    }

    fn spawn(&self) -> std::io::Result<ChildProc> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ChildProc { child, stdin, stdout })
    }

    fn run_on_slot(&self, slot: &Slot, requests: &[ExternalCostRequest]) -> HashMap<u64, Result<f64, CostError>> {
        let mut results = HashMap::new();
        let mut guard = slot.proc.lock().unwrap();
        loop {
            let outstanding: Vec<&ExternalCostRequest> =
                requests.iter().filter(|r| !results.contains_key(&r.id)).collect();
            if outstanding.is_empty() {
                return results;
            }
            if guard.is_none() {
                match self.spawn() {
                    Ok(p) => *guard = Some(p),
                    Err(e) => {
                        let msg = format!("cannot start `{}`: {e}", self.command[0]);
                        for r in outstanding {
                            results.insert(r.id, Err(CostError::Backend(msg.clone())));
                        }
                        return results;
                    }
                }
            }
            let proc = guard.as_mut().unwrap();
            match exchange(proc, &outstanding, &mut results) {
                Ok(()) => {}
                Err(why) => {
                    *guard = None;
                    let deaths = slot.deaths.fetch_add(1, Ordering::SeqCst) + 1;
                    if deaths >= 2 {
                        let msg = format!("external cost process died twice ({why})");
                        for r in requests {
                            results.entry(r.id).or_insert_with(|| Err(CostError::Backend(msg.clone())));
                        }
                        return results;
                    }
                    log::warn!("external cost process died ({why}); restarting and replaying");
                }
            }
        }
    }
}

// Sends all outstanding requests and reads responses until each is answered.
fn exchange(
    proc: &mut ChildProc,
    outstanding: &[&ExternalCostRequest],
    results: &mut HashMap<u64, Result<f64, CostError>>,
) -> std::result::Result<(), String> {
    let mut pending: std::collections::HashSet<u64> = outstanding.iter().map(|r| r.id).collect();
    let payload: String = outstanding.iter().map(|r| r.to_line() + "\n").collect();
    let ChildProc { stdin, stdout, .. } = proc;
    std::thread::scope(|s| {
        let writer = s.spawn(move || -> std::io::Result<()> {
            stdin.write_all(payload.as_bytes())?;
            stdin.flush()
        });
        let mut line = String::new();
        let read_result = loop {
            if pending.is_empty() {
                break Ok(());
            }
            line.clear();
            match stdout.read_line(&mut line) {
                Ok(0) => break Err("end of output".to_string()),
                Ok(_) => {}
                Err(e) => break Err(e.to_string()),
            }
            if line.trim().is_empty() {
                continue;
            }
            match parse_response(&line) {
                Ok(resp) => {
                    let id = resp.id();
                    if !pending.remove(&id) {
                        log::warn!("ignoring response for unknown or repeated id {id}");
                        continue;
                    }
                    let value = match resp {
                        ExternalCostResponse::Cost { cost, .. } => Ok(cost),
                        ExternalCostResponse::Error { error, .. } => Err(CostError::Member(error)),
                    };
                    results.insert(id, value);
                }
                Err(e) => log::warn!("ignoring malformed response line: {e}"),
            }
        };
        let write_result = writer.join().unwrap_or_else(|_| Err(std::io::Error::other("writer panicked")));
        match (read_result, write_result) {
            (Ok(()), _) => Ok(()),
            (Err(e), Ok(())) => Err(e),
            (Err(e), Err(w)) => Err(format!("{e}; write failed: {w}")),
        }
    })
}

impl CostFunction for ExternalCost {
    fn grid(&self) -> &DesignGrid {
        &self.grid
    }

    fn evaluate(&self, design: &BinaryDesign, fidelity: Fidelity) -> Result<f64, CostError> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let req = ExternalCostRequest::new(id, design, fidelity);
        let slot = &self.slots[(id as usize) % self.slots.len()];
        self.run_on_slot(slot, std::slice::from_ref(&req))
            .remove(&id)
            .unwrap_or_else(|| Err(CostError::Backend("no response".into())))
    }

    fn evaluate_batch(&self, jobs: &[CostJob<'_>], _pool: &rayon::ThreadPool) -> Vec<Result<f64, CostError>> {
        let base = self.next_id.fetch_add(jobs.len() as u64, Ordering::SeqCst);
        let requests: Vec<ExternalCostRequest> = jobs
            .iter()
            .enumerate()
            .map(|(k, j)| ExternalCostRequest::new(base + k as u64, j.design, j.fidelity))
            .collect();
        let n = self.slots.len();
        let shares: Vec<Vec<ExternalCostRequest>> =
            (0..n).map(|s| requests.iter().skip(s).step_by(n).cloned().collect()).collect();
        let mut merged = HashMap::new();
        std::thread::scope(|sc| {
            let handles: Vec<_> = self
                .slots
                .iter()
                .zip(&shares)
                .filter(|(_, share)| !share.is_empty())
                .map(|(slot, share)| sc.spawn(move || self.run_on_slot(slot, share)))
                .collect();
            for h in handles {
                merged.extend(h.join().expect("dispatch thread panicked"));
            }
        });
        requests
            .iter()
            .map(|r| merged.remove(&r.id).unwrap_or_else(|| Err(CostError::Backend("no response".into()))))
            .collect()
    }
}
