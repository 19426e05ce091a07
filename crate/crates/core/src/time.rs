//! UTC instants with millisecond precision and the clocks that produce them.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Milliseconds since the Unix epoch, rendered as RFC 3339 with a `Z` suffix.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Timestamp(i64);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid timestamp `{0}`")]
pub struct TimestampParseError(pub String);

impl Timestamp {
    pub const fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub fn as_millis(&self) -> i64 {
        self.0
    }

    pub fn now() -> Self {
        Timestamp(Utc::now().timestamp_millis())
    }

    pub fn plus_millis(&self, ms: i64) -> Self {
        Timestamp(self.0 + ms)
    }

    pub fn abs_diff_millis(&self, other: Timestamp) -> u64 {
        self.0.abs_diff(other.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match Utc.timestamp_millis_opt(self.0).single() {
            Some(dt) => f.write_str(&dt.to_rfc3339_opts(SecondsFormat::Millis, true)),
            None => write!(f, "@{}ms", self.0),
        }
    }
}

impl FromStr for Timestamp {
    type Err = TimestampParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DateTime::parse_from_rfc3339(s)
            .map(|dt| Timestamp(dt.timestamp_millis()))
            .map_err(|_| TimestampParseError(s.to_string()))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::now()
    }
}

/// Deterministic clock for replays: starts at a fixed instant and advances
/// by `step_ms` on every reading.
#[derive(Debug)]
pub struct SteppingClock {
    next: AtomicI64,
    step_ms: i64,
}

impl SteppingClock {
    pub fn new(start: Timestamp, step_ms: i64) -> Self {
        SteppingClock { next: AtomicI64::new(start.as_millis()), step_ms }
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.next.fetch_add(self.step_ms, Ordering::SeqCst))
    }
}

/// How a node or client obtains the current time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum ClockConfig {
    #[default]
    System,
    /// Time starts at `at` and advances one millisecond per reading.
    Pinned { at: Timestamp },
}

impl ClockConfig {
    pub fn build(&self) -> std::sync::Arc<dyn Clock> {
        match *self {
            ClockConfig::System => std::sync::Arc::new(SystemClock),
            ClockConfig::Pinned { at } => std::sync::Arc::new(SteppingClock::new(at, 1)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_millisecond_precision() {
        let t = Timestamp::from_millis(1_735_689_600_123);
        assert_eq!(t.to_string(), "2025-01-01T00:00:00.123Z");
        assert_eq!(t.to_string().parse::<Timestamp>().unwrap(), t);
    }

    #[test]
    fn stepping_clock_advances() {
        let c = SteppingClock::new(Timestamp::from_millis(10), 5);
        assert_eq!(c.now().as_millis(), 10);
        assert_eq!(c.now().as_millis(), 15);
    }

    #[test]
    fn serde_round_trip() {
        let t = Timestamp::from_millis(0);
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, "\"1970-01-01T00:00:00.000Z\"");
        assert_eq!(serde_json::from_str::<Timestamp>(&s).unwrap(), t);
    }
}
