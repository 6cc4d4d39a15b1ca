use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    /// Exported to the controller as training data.
    Sample,
    /// Kept in the switch and scored against the installed tables.
    Score,
}

/// Deterministic per-step token bucket: the first `rate` events of a step are
/// sampled, the rest are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meter {
    rate: u64,
    tokens: u64,
}

impl Meter {
    pub fn new(rate: u64) -> Self {
        Meter { rate, tokens: rate }
    }

    pub fn rate(&self) -> u64 {
        self.rate
    }

    pub fn tokens(&self) -> u64 {
        self.tokens
    }

    pub fn set_rate(&mut self, rate: u64) {
        self.rate = rate;
        self.tokens = rate;
    }

    pub fn refill(&mut self) {
        self.tokens = self.rate;
    }

    pub fn decide(&mut self) -> Decision {
        if self.tokens > 0 {
            self.tokens -= 1;
            Decision::Sample
        } else {
            Decision::Score
        }
    }
}
