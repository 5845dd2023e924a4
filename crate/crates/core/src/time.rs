//! Year-less timestamps and closed time intervals.
//!
//! Diary and GPS data carry timestamps of the form `mm-dd hh:mm:ss` with the
//! year removed. Internally they are anchored to a fixed non-leap year so that
//! durations and weekdays are well defined.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Non-leap year every timestamp is anchored to. 2023-05-08 is a Monday.
pub const ANCHOR_YEAR: i32 = 2023;

const FORMAT: &str = "%m-%d %H:%M:%S";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimeError {
    #[error("cannot parse timestamp {0:?}, expected \"mm-dd hh:mm:ss\"")]
    Parse(String),
    #[error("interval start {start} is after end {end}")]
    Reversed { start: Timestamp, end: Timestamp },
}

/// Seconds since `ANCHOR_YEAR-01-01 00:00:00`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

fn anchor() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(ANCHOR_YEAR, 1, 1)
        .expect("valid anchor date")
        .and_hms_opt(0, 0, 0)
        .expect("valid anchor time")
}

impl Timestamp {
    pub const fn from_seconds(secs: i64) -> Self {
        Timestamp(secs)
    }

    pub const fn seconds(self) -> i64 {
        self.0
    }

    pub fn parse(s: &str) -> Result<Self, TimeError> {
        let full = format!("{ANCHOR_YEAR}-{}", s.trim());
        let dt = NaiveDateTime::parse_from_str(&full, &format!("%Y-{FORMAT}"))
            .map_err(|_| TimeError::Parse(s.to_string()))?;
        Ok(Self::from_datetime(dt))
    }

    fn from_datetime(dt: NaiveDateTime) -> Self {
        Timestamp((dt - anchor()).num_seconds())
    }

    fn datetime(self) -> NaiveDateTime {
        anchor() + Duration::seconds(self.0)
    }

    pub fn weekday(self) -> Weekday {
        self.datetime().weekday()
    }

    pub fn hour(self) -> u32 {
        self.datetime().hour()
    }

    pub fn plus_seconds(self, secs: i64) -> Self {
        Timestamp(self.0 + secs)
    }

    pub fn abs_diff(self, other: Timestamp) -> i64 {
        (self.0 - other.0).abs()
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.datetime().format(FORMAT))
    }
}

impl FromStr for Timestamp {
    type Err = TimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Timestamp::parse(s)
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
        Timestamp::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Closed interval `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Interval {
    pub start: Timestamp,
    pub end: Timestamp,
}

#[derive(Deserialize)]
struct RawInterval {
    start: Timestamp,
    end: Timestamp,
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawInterval::deserialize(deserializer)?;
        Interval::new(raw.start, raw.end).map_err(serde::de::Error::custom)
    }
}

impl Interval {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self, TimeError> {
        if start > end {
            return Err(TimeError::Reversed { start, end });
        }
        Ok(Interval { start, end })
    }

    pub fn parse(start: &str, end: &str) -> Result<Self, TimeError> {
        Interval::new(Timestamp::parse(start)?, Timestamp::parse(end)?)
    }

    /// Interval of total length `length_secs` centered on `center`.
    pub fn centered(center: Timestamp, length_secs: i64) -> Self {
        let half = length_secs.max(0) / 2;
        Interval {
            start: center.plus_seconds(-half),
            end: center.plus_seconds(length_secs.max(0) - half),
        }
    }

    pub fn instant(t: Timestamp) -> Self {
        Interval { start: t, end: t }
    }

    pub fn duration_secs(&self) -> i64 {
        self.end.0 - self.start.0
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// Closed-interval overlap: sharing a single endpoint counts.
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    /// Overlap of positive length.
    pub fn overlaps_strictly(&self, other: &Interval) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn intersection(&self, other: &Interval) -> Option<Interval> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start <= end).then_some(Interval { start, end })
    }

    pub fn clamp_to(&self, outer: &Interval) -> Option<Interval> {
        self.intersection(outer)
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format_round_trip() {
        let t = Timestamp::parse("05-08 22:02:19").unwrap();
        assert_eq!(t.to_string(), "05-08 22:02:19");
        assert_eq!(t.weekday(), Weekday::Mon);
        assert_eq!(t.hour(), 22);
    }

    #[test]
    fn rejects_garbage_and_feb_29() {
        assert!(Timestamp::parse("13-01 00:00:00").is_err());
        assert!(Timestamp::parse("02-29 00:00:00").is_err());
        assert!(Timestamp::parse("yesterday").is_err());
    }

    #[test]
    fn centered_interval() {
        let t = Timestamp::parse("05-08 12:00:00").unwrap();
        let iv = Interval::centered(t, 30 * 60);
        assert_eq!(iv.start.to_string(), "05-08 11:45:00");
        assert_eq!(iv.end.to_string(), "05-08 12:15:00");
    }

    #[test]
    fn overlap_rules() {
        let a = Interval::parse("05-08 11:45:00", "05-08 12:15:00").unwrap();
        let b = Interval::parse("05-08 12:15:00", "05-08 12:45:00").unwrap();
        assert!(a.overlaps(&b));
        assert!(!a.overlaps_strictly(&b));
        assert_eq!(a.intersection(&b).unwrap().duration_secs(), 0);
        assert!(Interval::parse("05-09 00:00:00", "05-08 00:00:00").is_err());
    }
}
