//! Time primitives: node-local active timestamps, datetimes and durations.
//!
//! Datetimes and durations are plain microsecond counts. Active timestamps pair
//! a node-local microsecond reading with a sequence counter so that a node never
//! hands out the same timestamp twice.

use std::cmp::Ordering;
use std::fmt;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};

use crate::error::{EngineError, ErrorKind, Result};

pub const MICROS_PER_SECOND: i64 = 1_000_000;
pub const MICROS_PER_MINUTE: i64 = 60 * MICROS_PER_SECOND;
pub const MICROS_PER_HOUR: i64 = 60 * MICROS_PER_MINUTE;
pub const MICROS_PER_DAY: i64 = 24 * MICROS_PER_HOUR;

/// Type tag written in front of every serialized active timestamp.
pub const ACTIVE_TIMESTAMP_TAG: u8 = 0x2B;
/// Serialized width of an active timestamp: one tag byte plus eight value bytes.
pub const ACTIVE_TIMESTAMP_BYTES: usize = 9;

const MICROS_BITS: u32 = 48;
const MAX_RELATIVE_MICROS: i64 = (1 << MICROS_BITS) - 1;

/// Hidden per-record timestamp assigned by a node when the record becomes visible.
///
/// `micros` is the node's local clock reading on the datetime axis (epoch
/// microseconds, offset by the node's skew). Ordering is lexicographic on
/// `(micros, seq)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct ActiveTimestamp {
    pub micros: i64,
    pub seq: u16,
}

impl ActiveTimestamp {
    pub const fn new(micros: i64, seq: u16) -> Self {
        ActiveTimestamp { micros, seq }
    }

    /// Largest timestamp that can carry the given microsecond reading.
    pub const fn ceiling(micros: i64) -> Self {
        ActiveTimestamp { micros, seq: u16::MAX }
    }

    pub fn shifted(self, delta_micros: i64) -> Self {
        ActiveTimestamp { micros: self.micros + delta_micros, seq: self.seq }
    }

    /// Packs into the 9-byte storage form: tag, then 48 bits of
    /// micros-since-`engine_epoch` and 16 bits of sequence, big endian.
    pub fn encode(&self, engine_epoch: i64) -> Result<[u8; ACTIVE_TIMESTAMP_BYTES]> {
        let relative = self.micros - engine_epoch;
        if !(0..=MAX_RELATIVE_MICROS).contains(&relative) {
            return Err(EngineError::new(
                ErrorKind::MalformedRecord,
                format!("active timestamp {self} is outside the 48-bit engine window"),
            ));
        }
        let packed = ((relative as u64) << 16) | self.seq as u64;
        let mut out = [0u8; ACTIVE_TIMESTAMP_BYTES];
        out[0] = ACTIVE_TIMESTAMP_TAG;
        out[1..].copy_from_slice(&packed.to_be_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8], engine_epoch: i64) -> Result<Self> {
        if bytes.len() != ACTIVE_TIMESTAMP_BYTES || bytes[0] != ACTIVE_TIMESTAMP_TAG {
            return Err(EngineError::malformed("bad active timestamp encoding"));
        }
        let mut raw = [0u8; 8];
        raw.copy_from_slice(&bytes[1..]);
        let packed = u64::from_be_bytes(raw);
        Ok(ActiveTimestamp { micros: engine_epoch + (packed >> 16) as i64, seq: (packed & 0xFFFF) as u16 })
    }

    /// Packed 8-byte value (without the tag) as an integer, used in manifests.
    pub fn packed(&self, engine_epoch: i64) -> Result<u64> {
        let bytes = self.encode(engine_epoch)?;
        let mut raw = [0u8; 8];
        raw.copy_from_slice(&bytes[1..]);
        Ok(u64::from_be_bytes(raw))
    }

    pub fn from_packed(packed: u64, engine_epoch: i64) -> Self {
        ActiveTimestamp { micros: engine_epoch + (packed >> 16) as i64, seq: (packed & 0xFFFF) as u16 }
    }

    /// Compares against a plain datetime, which sorts before every sequence
    /// number at the same microsecond.
    pub fn cmp_datetime(&self, datetime_micros: i64) -> Ordering {
        self.micros.cmp(&datetime_micros).then(if self.seq > 0 { Ordering::Greater } else { Ordering::Equal })
    }
}

impl fmt::Display for ActiveTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", format_datetime(self.micros), self.seq)
    }
}

pub fn format_datetime(micros: i64) -> String {
    match Utc.timestamp_micros(micros).single() {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%S%.6fZ").to_string(),
        None => format!("@{micros}"),
    }
}

/// Parses ISO-8601 datetimes; a missing zone means UTC.
pub fn parse_datetime(text: &str) -> Result<i64> {
    let text = text.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Ok(dt.with_timezone(&Utc).timestamp_micros());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(text, fmt) {
            return Ok(naive.and_utc().timestamp_micros());
        }
    }
    if let Ok(date) = chrono::NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return Ok(date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp_micros());
    }
    Err(EngineError::new(ErrorKind::ParseError, format!("invalid datetime literal `{text}`")))
}

/// Formats a duration as ISO-8601 day-time text, e.g. `PT10S`, `P1DT2H`.
pub fn format_duration(micros: i64) -> String {
    if micros == 0 {
        return "PT0S".to_string();
    }
    let mut out = String::new();
    if micros < 0 {
        out.push('-');
    }
    let mut rest = micros.unsigned_abs();
    let days = rest / MICROS_PER_DAY as u64;
    rest %= MICROS_PER_DAY as u64;
    let hours = rest / MICROS_PER_HOUR as u64;
    rest %= MICROS_PER_HOUR as u64;
    let minutes = rest / MICROS_PER_MINUTE as u64;
    rest %= MICROS_PER_MINUTE as u64;
    let seconds = rest / MICROS_PER_SECOND as u64;
    let frac = rest % MICROS_PER_SECOND as u64;
    out.push('P');
    if days > 0 {
        out.push_str(&format!("{days}D"));
    }
    if hours > 0 || minutes > 0 || seconds > 0 || frac > 0 {
        out.push('T');
        if hours > 0 {
            out.push_str(&format!("{hours}H"));
        }
        if minutes > 0 {
            out.push_str(&format!("{minutes}M"));
        }
        if seconds > 0 || frac > 0 {
            if frac > 0 {
                let frac_text = format!("{frac:06}");
                out.push_str(&format!("{seconds}.{}S", frac_text.trim_end_matches('0')));
            } else {
                out.push_str(&format!("{seconds}S"));
            }
        }
    }
    out
}

/// Parses ISO-8601 day-time durations (`PnDTnHnMn.nS`, optional leading `-`).
/// Year and month designators are rejected because they have no fixed length.
pub fn parse_duration(text: &str) -> Result<i64> {
    let bad = || EngineError::new(ErrorKind::ParseError, format!("invalid duration literal `{text}`"));
    let trimmed = text.trim();
    let (negative, body) = match trimmed.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, trimmed),
    };
    let body = body.strip_prefix('P').or_else(|| body.strip_prefix('p')).ok_or_else(bad)?;
    if body.is_empty() {
        return Err(bad());
    }
    let mut total: i64 = 0;
    let mut in_time = false;
    let mut number = String::new();
    let mut saw_component = false;
    for ch in body.chars() {
        match ch {
            'T' | 't' => {
                if in_time || !number.is_empty() {
                    return Err(bad());
                }
                in_time = true;
            }
            '0'..='9' | '.' => number.push(ch),
            _ => {
                if number.is_empty() {
                    return Err(bad());
                }
                let unit = match (in_time, ch.to_ascii_uppercase()) {
                    (false, 'D') => MICROS_PER_DAY,
                    (false, 'W') => 7 * MICROS_PER_DAY,
                    (true, 'H') => MICROS_PER_HOUR,
                    (true, 'M') => MICROS_PER_MINUTE,
                    (true, 'S') => MICROS_PER_SECOND,
                    _ => return Err(bad()),
                };
                let micros = if number.contains('.') {
                    if unit != MICROS_PER_SECOND {
                        return Err(bad());
                    }
                    let (whole, frac) = number.split_once('.').ok_or_else(bad)?;
                    if frac.len() > 6 || frac.contains('.') {
                        return Err(bad());
                    }
                    let whole: i64 = if whole.is_empty() { 0 } else { whole.parse().map_err(|_| bad())? };
                    let frac_micros: i64 = format!("{frac:0<6}").parse().map_err(|_| bad())?;
                    whole.checked_mul(unit).and_then(|w| w.checked_add(frac_micros)).ok_or_else(bad)?
                } else {
                    let n: i64 = number.parse().map_err(|_| bad())?;
                    n.checked_mul(unit).ok_or_else(bad)?
                };
                total = total.checked_add(micros).ok_or_else(bad)?;
                number.clear();
                saw_component = true;
            }
        }
    }
    if !number.is_empty() || !saw_component {
        return Err(bad());
    }
    Ok(if negative { -total } else { total })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duration_text_forms() {
        assert_eq!(parse_duration("PT10S").unwrap(), 10 * MICROS_PER_SECOND);
        assert_eq!(parse_duration("PT10M").unwrap(), 10 * MICROS_PER_MINUTE);
        assert_eq!(parse_duration("PT1H").unwrap(), MICROS_PER_HOUR);
        assert_eq!(parse_duration("PT0.5S").unwrap(), 500_000);
        assert_eq!(parse_duration("-PT2S").unwrap(), -2 * MICROS_PER_SECOND);
        assert_eq!(parse_duration("P1DT1S").unwrap(), MICROS_PER_DAY + MICROS_PER_SECOND);
        assert!(parse_duration("P1Y").is_err());
        assert!(parse_duration("PT").is_err());
        assert!(parse_duration("10S").is_err());
        assert_eq!(format_duration(600 * MICROS_PER_SECOND), "PT10M");
        assert_eq!(format_duration(0), "PT0S");
        assert_eq!(format_duration(1_500_000), "PT1.5S");
    }

    #[test]
    fn datetime_text_forms() {
        let a = parse_datetime("2017-07-14T10:10:00").unwrap();
        let b = parse_datetime("2017-07-14T10:10:00Z").unwrap();
        assert_eq!(a, b);
        assert_eq!(parse_datetime(&format_datetime(a + 7)).unwrap(), a + 7);
        assert!(parse_datetime("yesterday").is_err());
    }

    #[test]
    fn nine_byte_encoding() {
        let epoch = 1_000_000;
        let ts = ActiveTimestamp::new(epoch + 42, 7);
        let bytes = ts.encode(epoch).unwrap();
        assert_eq!(bytes.len(), 9);
        assert_eq!(ActiveTimestamp::decode(&bytes, epoch).unwrap(), ts);
        assert!(ActiveTimestamp::new(epoch - 1, 0).encode(epoch).is_err());
    }

    #[test]
    fn datetime_compares_below_sequenced_timestamps() {
        let ts = ActiveTimestamp::new(100, 3);
        assert_eq!(ts.cmp_datetime(100), Ordering::Greater);
        assert_eq!(ActiveTimestamp::new(100, 0).cmp_datetime(100), Ordering::Equal);
        assert_eq!(ts.cmp_datetime(101), Ordering::Less);
    }
}
