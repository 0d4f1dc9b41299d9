use std::fmt;

use super::{EnvConfig, EnvError};

pub const ACTION_COUNT: usize = 27;
pub const STEP_X_MM: f64 = 6.0;
pub const STEP_Y_MM: f64 = 8.0;

/// Discrete coarse-control action.
///
/// Each axis has three levels {-1, 0, +1}; the index is `9·ix + 3·iy + iphi`
/// with level codes -1→0, 0→1, +1→2, so index 13 is the identity action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action(u8);

impl Action {
    pub const IDLE: Action = Action(13);

    pub fn from_index(index: usize) -> Result<Self, EnvError> {
        if index < ACTION_COUNT {
            Ok(Action(index as u8))
        } else {
            Err(EnvError::InvalidAction(index))
        }
    }

    /// Builds an action from per-axis levels, each in {-1, 0, 1}.
    pub fn from_levels(x: i8, y: i8, phi: i8) -> Result<Self, EnvError> {
        let code = |l: i8| -> Option<usize> { (-1..=1).contains(&l).then(|| (l + 1) as usize) };
        match (code(x), code(y), code(phi)) {
            (Some(ix), Some(iy), Some(ip)) => Ok(Action((9 * ix + 3 * iy + ip) as u8)),
            _ => Err(EnvError::InvalidLevels(x, y, phi)),
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn levels(self) -> (i8, i8, i8) {
        let i = self.0 as i8;
        (i / 9 - 1, (i / 3) % 3 - 1, i % 3 - 1)
    }

    /// (dx mm, dy mm, dphi rad) under `config`'s angular-step reading.
    pub fn deltas(self, config: &EnvConfig) -> (f64, f64, f64) {
        let (x, y, p) = self.levels();
        (
            f64::from(x) * STEP_X_MM,
            f64::from(y) * STEP_Y_MM,
            f64::from(p) * config.angular_step_rad(),
        )
    }

    pub fn all() -> impl Iterator<Item = Action> {
        (0..ACTION_COUNT as u8).map(Action)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
