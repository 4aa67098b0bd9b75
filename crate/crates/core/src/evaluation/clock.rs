use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SNAPSHOT_INTERVAL_SECS: u64 = 30;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ClockError {
    #[error("resume without a matching pause")]
    UnmatchedResume,
    #[error("clock moved backwards: {at_ms} ms is before {last_ms} ms")]
    Backwards { at_ms: u64, last_ms: u64 },
}

/// Wall time minus backend waits. Pauses nest; time is excluded while at
/// least one pause is open.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveClock {
    start_ms: u64,
    last_ms: u64,
    waited_ms: u64,
    depth: u32,
    paused_at_ms: u64,
}

impl ActiveClock {
    pub fn new(start_ms: u64) -> Self {
        ActiveClock {
            start_ms,
            last_ms: start_ms,
            waited_ms: 0,
            depth: 0,
            paused_at_ms: 0,
        }
    }

    fn advance(&mut self, at_ms: u64) -> Result<(), ClockError> {
        if at_ms < self.last_ms {
            return Err(ClockError::Backwards { at_ms, last_ms: self.last_ms });
        }
        self.last_ms = at_ms;
        Ok(())
    }

    pub fn is_paused(&self) -> bool {
        self.depth > 0
    }

    pub fn pause(&mut self, at_ms: u64) -> Result<(), ClockError> {
        self.advance(at_ms)?;
        if self.depth == 0 {
            self.paused_at_ms = at_ms;
        }
        self.depth += 1;
        Ok(())
    }

    pub fn resume(&mut self, at_ms: u64) -> Result<(), ClockError> {
        if self.depth == 0 {
            return Err(ClockError::UnmatchedResume);
        }
        self.advance(at_ms)?;
        self.depth -= 1;
        if self.depth == 0 {
            self.waited_ms += at_ms - self.paused_at_ms;
        }
        Ok(())
    }

    /// Active milliseconds elapsed at wall time `at_ms` (not before the
    /// last recorded pause or resume).
    pub fn active_ms(&self, at_ms: u64) -> u64 {
        let at_ms = at_ms.max(self.last_ms);
        let open = if self.depth > 0 { at_ms - self.paused_at_ms } else { 0 };
        at_ms - self.start_ms - self.waited_ms - open
    }

    /// Snapshot boundaries (in seconds) crossed when active time moves
    /// from `from_ms` to `to_ms`: every multiple of 30 s in `(from, to]`.
    pub fn boundaries(from_ms: u64, to_ms: u64) -> Vec<u64> {
        let step = SNAPSHOT_INTERVAL_SECS * 1000;
        let first = from_ms / step + 1;
        let last = to_ms / step;
        (first..=last).map(|k| k * SNAPSHOT_INTERVAL_SECS).collect()
    }

    /// Label for the end-of-session snapshot: active seconds rounded up.
    pub fn final_seconds(active_ms: u64) -> u64 {
        active_ms.div_ceil(1000)
    }
}
