use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "BIO")]
    Bio,
    #[serde(rename = "SCRAM")]
    Scram,
    #[serde(rename = "REST")]
    Rest,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Bio => "BIO",
            Condition::Scram => "SCRAM",
            Condition::Rest => "REST",
        })
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "BIO" => Ok(Condition::Bio),
            "SCRAM" => Ok(Condition::Scram),
            "REST" => Ok(Condition::Rest),
            other => Err(Error::Format(format!("unknown condition tag {other:?}"))),
        }
    }
}

/// Per-frame stimulus conditions for a block-design run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusSchedule {
    pub conditions: Vec<Condition>,
    /// Hemodynamic delay: a stimulus at frame `i` is read out at `i + lag`.
    pub lag_frames: usize,
}

impl StimulusSchedule {
    pub fn new(conditions: Vec<Condition>, lag_frames: usize) -> Result<Self> {
        if conditions.is_empty() {
            return Err(Error::Validation("schedule must cover at least one frame".into()));
        }
        Ok(StimulusSchedule {
            conditions,
            lag_frames,
        })
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    /// Frames whose signal reflects `cond` after the lag shift. Stimulus
    /// frames shifted past the end are dropped.
    pub fn shifted_frames(&self, cond: Condition) -> Vec<usize> {
        let t = self.conditions.len();
        self.conditions
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cond)
            .map(|(i, _)| i + self.lag_frames)
            .filter(|&f| f < t)
            .collect()
    }

    /// Condition label of each frame after the lag shift; `None` for leading
    /// frames that no stimulus maps onto.
    pub fn shifted(&self) -> Vec<Option<Condition>> {
        let lag = self.lag_frames;
        (0..self.conditions.len())
            .map(|f| f.checked_sub(lag).map(|i| self.conditions[i]))
            .collect()
    }

    /// Errors unless both contrast conditions have at least `min` frames
    /// after the lag shift.
    pub fn require_contrast(&self, min: usize) -> Result<()> {
        for cond in [Condition::Bio, Condition::Scram] {
            let n = self.shifted_frames(cond).len();
            if n < min {
                return Err(Error::Validation(format!(
                    "schedule has {n} {cond} frames after lag {} (need {min})",
                    self.lag_frames
                )));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("lag_frames: {}\n", self.lag_frames);
        for c in &self.conditions {
            s.push_str(&c.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty schedule file".into()))?;
        let lag = header
            .strip_prefix("lag_frames:")
            .ok_or_else(|| Error::Format(format!("expected 'lag_frames:' header, found {header:?}")))?
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::Format(format!("bad lag_frames: {e}")))?;
        let conditions = lines.map(str::parse).collect::<Result<Vec<_>>>()?;
        StimulusSchedule::new(conditions, lag)
    }
}

/// Tiles `order` in runs of `block_len` frames, truncated to `t` frames.
pub fn build_block_schedule(
    t: usize,
    block_len: usize,
    order: &[Condition],
    lag_frames: usize,
) -> Result<StimulusSchedule> {
    if t < 1 {
        return Err(Error::Validation("schedule length T must be >= 1".into()));
    }
    if block_len < 1 {
        return Err(Error::Validation("block length must be >= 1".into()));
    }
    if order.is_empty() {
        return Err(Error::Validation("block order must not be empty".into()));
    }
    let conditions = (0..t).map(|i| order[(i / block_len) % order.len()]).collect();
    StimulusSchedule::new(conditions, lag_frames)
}

/// Builds a schedule from explicit `(condition, length)` blocks. Frames past
/// the last block repeat its condition; blocks past `t` are truncated.
pub fn schedule_from_blocks(
    t: usize,
    blocks: &[(Condition, usize)],
    lag_frames: usize,
) -> Result<StimulusSchedule> {
    if t < 1 {
        return Err(Error::Validation("schedule length T must be >= 1".into()));
    }
    let last = blocks
        .last()
        .ok_or_else(|| Error::Validation("no blocks given".into()))?
        .0;
    let mut conditions: Vec<Condition> = blocks
        .iter()
        .flat_map(|&(c, n)| std::iter::repeat(c).take(n))
        .take(t)
        .collect();
    conditions.resize(t, last);
    StimulusSchedule::new(conditions, lag_frames)
}
