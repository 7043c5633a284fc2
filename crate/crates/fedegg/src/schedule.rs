//! Piecewise-constant learning-rate schedules.

use crate::error::{Error, Result};

/// Piecewise-constant round -> rate map.
///
/// Stages are `(start_round, value)` pairs with strictly increasing starts;
/// the value of the last stage whose start is <= t applies.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    stages: Vec<(u64, f64)>,
}

impl Schedule {
    pub fn new(stages: Vec<(u64, f64)>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::InvalidConfig("schedule has no stages".into()));
        }
        if stages[0].0 != 0 {
            return Err(Error::InvalidConfig(
                "schedule must start at round 0".into(),
            ));
        }
        for w in stages.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidConfig(
                    "schedule stage starts must be strictly increasing".into(),
                ));
            }
        }
        if stages.iter().any(|(_, v)| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig(
                "schedule rates must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { stages })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            stages: vec![(0, value)],
        }
    }

    /// Drops in the learning rate by a factor of 10 at rounds 100 and 200.
    pub fn default_eta() -> Self {
        Self {
            stages: vec![(0, 1e-2), (100, 1e-3), (200, 1e-4)],
        }
    }

    pub fn value(&self, t: u64) -> f64 {
        let mut v = self.stages[0].1;
        for &(start, rate) in &self.stages {
            if start <= t {
                v = rate;
            } else {
                break;
            }
        }
        v
    }

    pub fn stages(&self) -> &[(u64, f64)] {
        &self.stages
    }

    /// Parses "0:1e-2,100:1e-3,200:1e-4".
    pub fn parse(s: &str) -> Result<Self> {
        let mut stages = Vec::new();
        for part in s.split(',') {
            let (start, rate) = part.split_once(':').ok_or_else(|| {
                Error::InvalidConfig(format!("bad schedule stage '{part}', want start:rate"))
            })?;
            let start: u64 = start
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad stage start '{start}'")))?;
            let rate: f64 = rate
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad stage rate '{rate}'")))?;
            stages.push((start, rate));
        }
        Self::new(stages)
    }

    pub fn render(&self) -> String {
        self.stages
            .iter()
            .map(|(s, r)| format!("{s}:{r}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}
