//! Trial accounting (operator travel length and completion time) and
//! training-curve summaries.
//!
//! In semi-autonomous trials only manual-phase motion counts towards the
//! travel length: the operator's device is stationary while the agent
//! drives, so auto-phase samples contribute nothing.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trial is incomplete: {0}")]
    IncompleteTrial(&'static str),
    #[error("reference value must be positive, got {0}")]
    NonPositiveReference(f64),
    #[error("window {window} exceeds {episodes} episodes")]
    WindowTooLarge { window: usize, episodes: usize },
    #[error("window must be positive")]
    EmptyWindow,
    #[error("timestamps must be strictly increasing (sample {0})")]
    NonMonotonic(usize),
    #[error("unknown trial mode {0:?}")]
    UnknownMode(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialMode {
    Manual,
    SemiAutonomous,
}

impl FromStr for TrialMode {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "manual" => Ok(TrialMode::Manual),
            "semi" | "semi_autonomous" | "semi-autonomous" => Ok(TrialMode::SemiAutonomous),
            other => Err(MetricsError::UnknownMode(other.to_string())),
        }
    }
}

impl fmt::Display for TrialMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrialMode::Manual => "manual",
            TrialMode::SemiAutonomous => "semi",
        })
    }
}

/// Operator device position at one instant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t_ms: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Taken while the operator had control.
    pub manual: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub mode: TrialMode,
    pub samples: Vec<Sample>,
    /// Tick index at which each leg was completed.
    pub leg_markers: Vec<u64>,
    pub complete: bool,
}

impl TrialRecord {
    pub fn new(mode: TrialMode) -> Self {
        Self { mode, samples: Vec::new(), leg_markers: Vec::new(), complete: false }
    }

    pub fn check_monotonic(&self) -> Result<(), MetricsError> {
        for (i, w) in self.samples.windows(2).enumerate() {
            if !(w[1].t_ms > w[0].t_ms) {
                return Err(MetricsError::NonMonotonic(i + 1));
            }
        }
        Ok(())
    }

    /// Appends `other`, which must start after this record ends.
    pub fn concat(&self, other: &TrialRecord) -> TrialRecord {
        let mut out = self.clone();
        out.samples.extend_from_slice(&other.samples);
        out.leg_markers.extend_from_slice(&other.leg_markers);
        out.complete = self.complete && other.complete;
        out
    }
}

fn dist(a: &Sample, b: &Sample) -> f64 {
    ((b.x - a.x).powi(2) + (b.y - a.y).powi(2) + (b.z - a.z).powi(2)).sqrt()
}

/// Polyline length of the commanded positions, in millimetres.
pub fn travel_length(record: &TrialRecord) -> f64 {
    record
        .samples
        .windows(2)
        .filter(|w| record.mode == TrialMode::Manual || w[1].manual)
        .map(|w| dist(&w[0], &w[1]))
        .sum()
}

/// Last minus first timestamp, in seconds.
pub fn completion_time(record: &TrialRecord) -> Result<f64, MetricsError> {
    if record.leg_markers.is_empty() {
        return Err(MetricsError::IncompleteTrial("no legs completed"));
    }
    if !record.complete {
        return Err(MetricsError::IncompleteTrial("trial not finished"));
    }
    match (record.samples.first(), record.samples.last()) {
        (Some(a), Some(b)) => Ok((b.t_ms - a.t_ms) / 1000.0),
        _ => Err(MetricsError::IncompleteTrial("no samples")),
    }
}

/// Percentage reduction of `assisted` relative to `manual`.
pub fn reduction(manual: f64, assisted: f64) -> Result<f64, MetricsError> {
    if !(manual > 0.0) {
        return Err(MetricsError::NonPositiveReference(manual));
    }
    Ok(100.0 * (manual - assisted) / manual)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode_return: f64,
    pub length: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
}

impl TrainingCurve {
    pub fn push(&mut self, episode_return: f64, length: usize) {
        self.points.push(CurvePoint { episode_return, length });
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub window: usize,
    pub avg_return: Vec<f64>,
    pub avg_length: Vec<f64>,
    /// 1-based episode after which the moving-average length stays within
    /// ±20% of its final value.
    pub convergence_episode: usize,
}

impl ConvergenceReport {
    /// Largest relative deviation of the moving-average length from its
    /// final value over the last `n` episodes.
    pub fn length_variation(&self, n: usize) -> f64 {
        let last = *self.avg_length.last().unwrap_or(&0.0);
        let start = self.avg_length.len().saturating_sub(n);
        self.avg_length[start..]
            .iter()
            .map(|v| (v - last).abs() / last.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }
}

const CONVERGENCE_BAND: f64 = 0.2;

/// Trailing moving averages; the first `window - 1` entries average over
/// what is available.
fn moving_average(values: impl Iterator<Item = f64>, window: usize) -> Vec<f64> {
    let values: Vec<f64> = values.collect();
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

pub fn summarize_training(curve: &TrainingCurve, window: usize) -> Result<ConvergenceReport, MetricsError> {
    if window == 0 {
        return Err(MetricsError::EmptyWindow);
    }
    if window > curve.len() {
        return Err(MetricsError::WindowTooLarge { window, episodes: curve.len() });
    }
    let avg_return = moving_average(curve.points.iter().map(|p| p.episode_return), window);
    let avg_length = moving_average(curve.points.iter().map(|p| p.length as f64), window);
    let last = *avg_length.last().expect("non-empty");
    let band = CONVERGENCE_BAND * last.abs();
    let mut convergence = avg_length.len();
    for i in (0..avg_length.len()).rev() {
        if (avg_length[i] - last).abs() <= band {
            convergence = i;
        } else {
            break;
        }
    }
    Ok(ConvergenceReport { window, avg_return, avg_length, convergence_episode: convergence + 1 })
}

/// M and T of one mode, averaged over trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub travel_length_mm: f64,
    pub completion_time_s: f64,
    pub trials: usize,
}

pub fn summarize_mode(records: &[TrialRecord]) -> Result<ModeSummary, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::IncompleteTrial("no trials"));
    }
    let n = records.len() as f64;
    let mut m = 0.0;
    let mut t = 0.0;
    for r in records {
        m += travel_length(r);
        t += completion_time(r)?;
    }
    Ok(ModeSummary { travel_length_mm: m / n, completion_time_s: t / n, trials: records.len() })
}

/// Plain-text table followed by `key=value` lines.
pub fn format_report(manual: &ModeSummary, semi: &ModeSummary) -> Result<String, MetricsError> {
    let m_red = reduction(manual.travel_length_mm, semi.travel_length_mm)?;
    let t_red = reduction(manual.completion_time_s, semi.completion_time_s)?;
    let mut s = String::new();
    let _ = writeln!(s, "{:<4}{:>14}{:>18}", "", "Manual", "Semi-autonomous");
    let _ = writeln!(s, "{:<4}{:>12.1}mm{:>16.1}mm", "M", manual.travel_length_mm, semi.travel_length_mm);
    let _ = writeln!(s, "{:<4}{:>13.2}s{:>17.2}s", "T", manual.completion_time_s, semi.completion_time_s);
    let _ = writeln!(s, "manual.M_mm={}", manual.travel_length_mm);
    let _ = writeln!(s, "manual.T_s={}", manual.completion_time_s);
    let _ = writeln!(s, "semi.M_mm={}", semi.travel_length_mm);
    let _ = writeln!(s, "semi.T_s={}", semi.completion_time_s);
    let _ = writeln!(s, "reduction.M_pct={m_red}");
    let _ = writeln!(s, "reduction.T_pct={t_red}");
    Ok(s)
}
