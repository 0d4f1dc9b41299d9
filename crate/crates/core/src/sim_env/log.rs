//! Line-delimited coarse-episode logs.
//!
//! One tab-separated record per step, preceded by a `#` header line:
//!
//! ```text
//! # tick  x  y  z  roll  action  reward  d  dtheta  terminal
//! 1  6  -50  20  0  22  36  ...  0
//! ```
//!
//! Floats use the shortest representation that parses back to the same
//! value, so a log can be compared byte for byte across runs.

use std::io::{self, Write};

use super::{Action, StepOutcome};

pub const EPISODE_LOG_HEADER: &str = "# tick\tx\ty\tz\troll\taction\treward\td\tdtheta\tterminal";

pub struct EpisodeLogWriter<W: Write> {
    out: W,
}

impl<W: Write> EpisodeLogWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "{EPISODE_LOG_HEADER}")?;
        Ok(Self { out })
    }

    pub fn record(&mut self, action: Action, outcome: &StepOutcome) -> io::Result<()> {
        let g = &outcome.next_state.gripper;
        writeln!(
            self.out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            outcome.next_state.tick,
            g.x,
            g.y,
            g.z,
            g.roll,
            action.index(),
            outcome.reward,
            outcome.d_next,
            outcome.dtheta_next,
            u8::from(outcome.terminal)
        )
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
