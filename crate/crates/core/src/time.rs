//! UTC instants with whole-second resolution.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, Timelike, Utc};

use crate::error::{Error, Result};

pub const SECONDS_PER_HOUR: i64 = 3600;

/// Seconds since the Unix epoch, always interpreted as UTC+00:00.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UtcTime(pub i64);

impl UtcTime {
    pub fn from_ymd_h(year: i32, month: u32, day: u32, hour: u32) -> Result<Self> {
        let date = NaiveDate::from_ymd_opt(year, month, day)
            .ok_or_else(|| Error::Input(format!("invalid date {year}-{month}-{day}")))?;
        let dt = date.and_hms_opt(hour, 0, 0).ok_or_else(|| Error::Input(format!("invalid hour {hour}")))?;
        Ok(UtcTime(dt.and_utc().timestamp()))
    }

    /// Parses an RFC 3339 / ISO-8601 timestamp. Offsets other than `Z` are
    /// converted to UTC.
    pub fn parse(s: &str) -> Result<Self> {
        let dt =
            DateTime::parse_from_rfc3339(s.trim()).map_err(|e| Error::Input(format!("bad timestamp {s:?}: {e}")))?;
        Ok(UtcTime(dt.timestamp()))
    }

    pub fn seconds(self) -> i64 {
        self.0
    }

    pub fn add_hours(self, hours: i64) -> Self {
        UtcTime(self.0 + hours * SECONDS_PER_HOUR)
    }

    pub fn hours_since(self, earlier: UtcTime) -> i64 {
        (self.0 - earlier.0).div_euclid(SECONDS_PER_HOUR)
    }

    /// True when the instant falls exactly on a multiple of `hours` since midnight UTC.
    pub fn on_cadence(self, hours: i64) -> bool {
        self.0.rem_euclid(hours * SECONDS_PER_HOUR) == 0
    }

    fn datetime(self) -> DateTime<Utc> {
        // Range is far beyond anything a forecast archive holds.
        DateTime::from_timestamp(self.0, 0).expect("timestamp within chrono range")
    }

    pub fn year(self) -> i32 {
        self.datetime().year()
    }

    pub fn month(self) -> u32 {
        self.datetime().month()
    }

    pub fn day(self) -> u32 {
        self.datetime().day()
    }

    pub fn hour(self) -> u32 {
        self.datetime().hour()
    }
}

impl fmt::Display for UtcTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.datetime().format("%Y-%m-%dT%H:%M:%SZ"))
    }
}

impl FromStr for UtcTime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UtcTime::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn offsets_normalize_to_utc() {
        let a = UtcTime::parse("2018-03-30T10:00:00+08:00").unwrap();
        let b = UtcTime::parse("2018-03-30T02:00:00Z").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_string(), "2018-03-30T02:00:00Z");
        assert_eq!((a.hour(), a.day(), a.month(), a.year()), (2, 30, 3, 2018));
    }

    #[test]
    fn cadence() {
        let t = UtcTime::from_ymd_h(2018, 3, 29, 12).unwrap();
        assert!(t.on_cadence(3));
        assert!(!t.add_hours(5).on_cadence(3));
        assert!(t.add_hours(6).on_cadence(3));
    }

    #[test]
    fn rejects_garbage() {
        assert!(UtcTime::parse("2018-13-01T00:00:00Z").is_err());
        assert!(UtcTime::parse("yesterday").is_err());
    }

    proptest! {
        #[test]
        fn iso_round_trip(secs in -2_000_000_000i64..4_000_000_000i64) {
            let t = UtcTime(secs);
            prop_assert_eq!(UtcTime::parse(&t.to_string()).unwrap(), t);
        }
    }
}
