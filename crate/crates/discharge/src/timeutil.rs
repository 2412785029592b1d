//! Small UTC time helpers. Day boundaries are UTC midnights throughout.

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};

use crate::error::{Error, Result};

pub const DAY_SECS: i64 = 86_400;
pub const HOUR_SECS: i64 = 3_600;

/// Midnight at or before `ts` (epoch seconds).
pub fn floor_day(ts: i64) -> i64 {
    ts - ts.rem_euclid(DAY_SECS)
}

/// First midnight at or after `ts`.
pub fn ceil_day(ts: i64) -> i64 {
    let f = floor_day(ts);
    if f == ts {
        ts
    } else {
        f + DAY_SECS
    }
}

pub fn from_epoch(ts: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(ts, 0).single().expect("timestamp out of range")
}

/// RFC 3339 with whole seconds and a `Z` suffix; the one format the
/// pipeline emits.
pub fn format_utc(ts: i64) -> String {
    from_epoch(ts).to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn parse_utc(text: &str) -> Result<i64> {
    DateTime::parse_from_rfc3339(text)
        .map(|dt| dt.with_timezone(&Utc).timestamp())
        .map_err(|e| Error::data(format!("bad timestamp {text:?}: {e}")))
}

/// Accepts either a date (`2017-01-01`, midnight UTC) or a full RFC 3339
/// timestamp. Config files typically use the date form.
pub fn parse_date_or_datetime(text: &str) -> Result<i64> {
    if let Ok(ts) = parse_utc(text) {
        return Ok(ts);
    }
    let date = chrono::NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .map_err(|e| Error::data(format!("bad date {text:?}: {e}")))?;
    let dt = date.and_hms_opt(0, 0, 0).expect("midnight exists");
    Ok(Utc.from_utc_datetime(&dt).timestamp())
}

/// Serde adapter: epoch-second i64 fields as RFC 3339 strings.
pub mod serde_epoch {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &i64, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&super::format_utc(*ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<i64, D::Error> {
        let text = String::deserialize(de)?;
        super::parse_utc(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn day_rounding() {
        let ts = parse_utc("2017-03-05T13:45:00Z").unwrap();
        assert_eq!(format_utc(floor_day(ts)), "2017-03-05T00:00:00Z");
        assert_eq!(format_utc(ceil_day(ts)), "2017-03-06T00:00:00Z");
        let midnight = parse_utc("2017-03-05T00:00:00Z").unwrap();
        assert_eq!(ceil_day(midnight), midnight);
        assert_eq!(floor_day(midnight), midnight);
    }

    #[test]
    fn round_trip_format() {
        let ts = parse_date_or_datetime("2015-06-01").unwrap();
        assert_eq!(format_utc(ts), "2015-06-01T00:00:00Z");
        assert_eq!(parse_utc(&format_utc(ts)).unwrap(), ts);
    }
}
