//! Timestamp parsing and BTC display formatting.

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, TimeZone, Utc};

pub const SATOSHI_PER_BTC: u64 = 100_000_000;

/// Parses unix seconds or an ISO-8601 date / date-time (UTC unless an offset is given).
pub fn parse_time(s: &str) -> Result<i64, String> {
    let s = s.trim();
    if let Ok(secs) = s.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp());
    }
    Err(format!("cannot parse `{s}` as unix seconds or ISO-8601"))
}

/// `123456789` sat → `"1.23456789"`.
pub fn format_btc(sat: u64) -> String {
    format!("{}.{:08}", sat / SATOSHI_PER_BTC, sat % SATOSHI_PER_BTC)
}

pub fn format_time(t: i64) -> String {
    match Utc.timestamp_opt(t, 0).single() {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => t.to_string(),
    }
}

/// Start of the UTC calendar month containing `t`.
pub fn month_start(t: i64) -> i64 {
    let dt = DateTime::from_timestamp(t, 0).unwrap_or_default();
    NaiveDate::from_ymd_opt(dt.year(), dt.month(), 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
        .and_utc()
        .timestamp()
}

/// Start of the UTC calendar month after the one containing `t`.
pub fn next_month_start(t: i64) -> i64 {
    let dt = DateTime::from_timestamp(t, 0).unwrap_or_default();
    let (y, m) = if dt.month() == 12 { (dt.year() + 1, 1) } else { (dt.year(), dt.month() + 1) };
    NaiveDate::from_ymd_opt(y, m, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
        .and_utc()
        .timestamp()
}
