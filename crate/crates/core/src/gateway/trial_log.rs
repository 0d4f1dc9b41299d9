//! Trial logs: a JSON-lines record of everything needed to re-simulate a trial
//! and check its metrics.
//!
//! ```text
//! {"kind":"header",...}        configuration, mode, seed, checkpoint fingerprint
//! {"kind":"input","tick":..}   one per operator input, in arrival order
//! {"kind":"leg","tick":..}     one per completed leg
//! {"kind":"summary",...}       tick count, completeness, M and T
//! ```

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arbiter::{ArbiterConfig, ArbiterError, CoarsePolicy, OperatorInput, TrialOutcome, TrialPlan, TrialSession};
use crate::metrics::{completion_time, travel_length, TrialMode, TrialRecord};
use crate::sim_env::{EnvConfig, PegEnv};

pub const TRIAL_LOG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrialLogError {
    #[error("trial log i/o: {0}")]
    Io(#[from] io::Error),
    #[error("trial log line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("trial log: {0}")]
    Structure(String),
    #[error("unsupported trial log version {0}")]
    Version(u32),
    #[error(transparent)]
    Arbiter(#[from] ArbiterError),
    #[error("{metric} mismatch: logged {logged}, replayed {replayed}")]
    MetricMismatch { metric: &'static str, logged: String, replayed: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialHeader {
    pub version: u32,
    pub mode: TrialMode,
    pub seed: u64,
    pub tick_hz: f64,
    pub env: EnvConfig,
    pub plan: TrialPlan,
    pub arbiter: ArbiterConfig,
    /// Checkpoint that drove the coarse phase, if any.
    pub checkpoint: Option<String>,
    pub checkpoint_fnv1a: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub ticks: u64,
    pub complete: bool,
    pub legs_completed: usize,
    pub travel_length_mm: f64,
    pub completion_time_s: Option<f64>,
}

impl TrialSummary {
    pub fn from_record(record: &TrialRecord, ticks: u64) -> Self {
        Self {
            ticks,
            complete: record.complete,
            legs_completed: record.leg_markers.len(),
            travel_length_mm: travel_length(record),
            completion_time_s: completion_time(record).ok(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(TrialHeader),
    Input { tick: u64, input: OperatorInput },
    Leg { tick: u64, leg: usize },
    Summary(TrialSummary),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialLog {
    pub header: TrialHeader,
    pub inputs: Vec<(u64, OperatorInput)>,
    pub leg_markers: Vec<u64>,
    pub summary: TrialSummary,
}

impl TrialLog {
    pub fn from_outcome(header: TrialHeader, outcome: &TrialOutcome) -> Self {
        Self {
            header,
            inputs: outcome.inputs.clone(),
            leg_markers: outcome.record.leg_markers.clone(),
            summary: TrialSummary::from_record(&outcome.record, outcome.ticks),
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut put = |line: &Line| -> io::Result<()> {
            serde_json::to_writer(&mut out, line)?;
            out.write_all(b"\n")
        };
        put(&Line::Header(self.header.clone()))?;
        for &(tick, input) in &self.inputs {
            put(&Line::Input { tick, input })?;
        }
        for (leg, &tick) in self.leg_markers.iter().enumerate() {
            put(&Line::Leg { tick, leg })?;
        }
        put(&Line::Summary(self.summary.clone()))
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut f = io::BufWriter::new(fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, TrialLogError> {
        let mut header = None;
        let mut summary = None;
        let mut inputs = Vec::new();
        let mut leg_markers = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|source| TrialLogError::Parse { line: i + 1, source })?;
            if summary.is_some() {
                return Err(TrialLogError::Structure(format!("line {} follows the summary", i + 1)));
            }
            match parsed {
                Line::Header(h) if header.is_none() && i == 0 => {
                    if h.version != TRIAL_LOG_VERSION {
                        return Err(TrialLogError::Version(h.version));
                    }
                    header = Some(h);
                }
                Line::Header(_) => return Err(TrialLogError::Structure("header must be the first line".into())),
                _ if header.is_none() => return Err(TrialLogError::Structure("missing header".into())),
                Line::Input { tick, input } => inputs.push((tick, input)),
                Line::Leg { tick, .. } => leg_markers.push(tick),
                Line::Summary(s) => summary = Some(s),
            }
        }
        Ok(Self {
            header: header.ok_or_else(|| TrialLogError::Structure("empty log".into()))?,
            inputs,
            leg_markers,
            summary: summary.ok_or_else(|| TrialLogError::Structure("missing summary".into()))?,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TrialLogError> {
        Self::read(BufReader::new(fs::File::open(path)?))
    }
}

/// 64-bit FNV-1a, used to pin the checkpoint a trial ran with.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Re-simulates a logged trial and returns the recomputed summary.
pub fn resimulate(log: &TrialLog, agent: &mut dyn CoarsePolicy) -> Result<(TrialSummary, Vec<u64>), TrialLogError> {
    let h = &log.header;
    let env = PegEnv::new(h.env.clone()).map_err(ArbiterError::from)?;
    let mut session = TrialSession::new(env, h.plan.clone(), h.arbiter, h.mode, h.seed, h.tick_hz)?;
    let mut next = 0;
    for tick in 1..=log.summary.ticks {
        while next < log.inputs.len() && log.inputs[next].0 <= tick {
            if log.inputs[next].0 < tick {
                return Err(TrialLogError::Structure(format!("input for tick {} is out of order", log.inputs[next].0)));
            }
            session.submit(log.inputs[next].1);
            next += 1;
        }
        session.tick(agent);
    }
    if next != log.inputs.len() {
        return Err(TrialLogError::Structure("inputs logged after the final tick".into()));
    }
    let outcome = session.finish();
    Ok((TrialSummary::from_record(&outcome.record, outcome.ticks), outcome.record.leg_markers))
}

fn mismatch<T: std::fmt::Debug>(metric: &'static str, logged: T, replayed: T) -> TrialLogError {
    TrialLogError::MetricMismatch { metric, logged: format!("{logged:?}"), replayed: format!("{replayed:?}") }
}

/// Re-simulates and checks every logged metric bit for bit.
pub fn verify_replay(log: &TrialLog, agent: &mut dyn CoarsePolicy) -> Result<TrialSummary, TrialLogError> {
    let (summary, markers) = resimulate(log, agent)?;
    let logged = &log.summary;
    if markers != log.leg_markers {
        return Err(mismatch("leg markers", &log.leg_markers, &markers));
    }
    if summary.complete != logged.complete {
        return Err(mismatch("completion flag", logged.complete, summary.complete));
    }
    if summary.legs_completed != logged.legs_completed {
        return Err(mismatch("legs completed", logged.legs_completed, summary.legs_completed));
    }
    if summary.travel_length_mm.to_bits() != logged.travel_length_mm.to_bits() {
        return Err(mismatch("M", logged.travel_length_mm, summary.travel_length_mm));
    }
    let bits = |t: Option<f64>| t.map(f64::to_bits);
    if bits(summary.completion_time_s) != bits(logged.completion_time_s) {
        return Err(mismatch("T", logged.completion_time_s, summary.completion_time_s));
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arbiter::{run_scripted_trial, IdlePolicy, VirtualOperator};

    fn manual_log() -> TrialLog {
        let env = PegEnv::new(EnvConfig::default()).unwrap();
        let plan = TrialPlan::default();
        let cfg = ArbiterConfig::default();
        let out = run_scripted_trial(&env, &plan, &cfg, &VirtualOperator::default(), TrialMode::Manual, 5, &mut IdlePolicy, 30.0, 20_000).unwrap();
        let header = TrialHeader {
            version: TRIAL_LOG_VERSION,
            mode: TrialMode::Manual,
            seed: 5,
            tick_hz: 30.0,
            env: env.config().clone(),
            plan,
            arbiter: cfg,
            checkpoint: None,
            checkpoint_fnv1a: None,
        };
        TrialLog::from_outcome(header, &out)
    }

    #[test]
    fn write_read_roundtrip() {
        let log = manual_log();
        let mut buf = Vec::new();
        log.write(&mut buf).unwrap();
        assert_eq!(TrialLog::read(&buf[..]).unwrap(), log);
    }

    #[test]
    fn replay_matches() {
        let log = manual_log();
        let s = verify_replay(&log, &mut IdlePolicy).unwrap();
        assert_eq!(s, log.summary);
    }

    #[test]
    fn tampered_summary_detected() {
        let mut log = manual_log();
        log.summary.travel_length_mm += 1e-9;
        assert!(matches!(verify_replay(&log, &mut IdlePolicy), Err(TrialLogError::MetricMismatch { metric: "M", .. })));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
