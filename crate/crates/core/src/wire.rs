//! The agent→collector line protocol: one newline-terminated ASCII record
//! per measurement,
//!
//! ```text
//! V1 <seq> <timestamp_s> <device_id> <region_id> <decay_time_ms> <flip_count>
//! ```
//!
//! with space-separated decimal fields. Sending only the flip count keeps
//! the channel tiny and inconspicuous; the bitmap never crosses the wire.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: &str = "V1";

/// One spy measurement on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpyMessage {
    /// Strictly increasing per device.
    pub seq: u64,
    /// Seconds since scenario start.
    pub timestamp_s: u64,
    pub device_id: String,
    pub region_id: String,
    pub decay_time_ms: u64,
    pub flip_count: u64,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || b == b'.')
}

/// Canonical single-line encoding (no trailing newline; writers add it).
pub fn encode_message(msg: &SpyMessage) -> Result<String> {
    for (field, id) in [("device_id", &msg.device_id), ("region_id", &msg.region_id)] {
        if !valid_id(id) {
            return Err(Error::Argument(format!(
                "{field} `{id}` must be non-empty ASCII alphanumeric/._-"
            )));
        }
    }
    if msg.decay_time_ms == 0 {
        return Err(Error::Argument("decay_time_ms must be > 0".into()));
    }
    Ok(format!(
        "{PROTOCOL_VERSION} {} {} {} {} {} {}",
        msg.seq, msg.timestamp_s, msg.device_id, msg.region_id, msg.decay_time_ms, msg.flip_count
    ))
}

struct FieldWalker<'a> {
    line: &'a str,
    offset: usize,
}

impl<'a> FieldWalker<'a> {
    fn next_field(&mut self, what: &str) -> Result<(usize, &'a str)> {
        if self.offset > self.line.len() {
            return Err(Error::Parse {
                offset: self.line.len(),
                message: format!("missing field `{what}`"),
            });
        }
        let rest = &self.line[self.offset..];
        if rest.is_empty() {
            return Err(Error::Parse {
                offset: self.offset,
                message: format!("missing field `{what}`"),
            });
        }
        let start = self.offset;
        let end_rel = rest.find(' ').unwrap_or(rest.len());
        if end_rel == 0 {
            return Err(Error::Parse {
                offset: start,
                message: format!("empty field `{what}` (double space?)"),
            });
        }
        let field = &rest[..end_rel];
        self.offset = start + end_rel + 1; // skip the separating space
        Ok((start, field))
    }

    fn next_u64(&mut self, what: &str) -> Result<(usize, u64)> {
        let (at, field) = self.next_field(what)?;
        let v = field.parse::<u64>().map_err(|_| Error::Parse {
            offset: at,
            message: format!("field `{what}` is not a decimal number: `{field}`"),
        })?;
        Ok((at, v))
    }
}

/// Parse one record; trailing `\n`/`\r\n` is tolerated, anything else after
/// the last field is a parse error carrying its byte offset.
pub fn decode_message(line: &str) -> Result<SpyMessage> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let mut w = FieldWalker { line, offset: 0 };

    let (at, version) = w.next_field("version")?;
    if version != PROTOCOL_VERSION {
        if version.len() >= 2 && version.starts_with('V') {
            return Err(Error::Version(version.to_string()));
        }
        return Err(Error::Parse {
            offset: at,
            message: format!("expected version token, got `{version}`"),
        });
    }
    let (_, seq) = w.next_u64("seq")?;
    let (_, timestamp_s) = w.next_u64("timestamp_s")?;
    let (dev_at, device_id) = w.next_field("device_id")?;
    if !valid_id(device_id) {
        return Err(Error::Parse {
            offset: dev_at,
            message: format!("bad device_id `{device_id}`"),
        });
    }
    let (reg_at, region_id) = w.next_field("region_id")?;
    if !valid_id(region_id) {
        return Err(Error::Parse {
            offset: reg_at,
            message: format!("bad region_id `{region_id}`"),
        });
    }
    let (ms_at, decay_time_ms) = w.next_u64("decay_time_ms")?;
    if decay_time_ms == 0 {
        return Err(Error::Parse {
            offset: ms_at,
            message: "decay_time_ms must be > 0".into(),
        });
    }
    let (_, flip_count) = w.next_u64("flip_count")?;
    if w.offset <= line.len() {
        return Err(Error::Parse {
            offset: w.offset,
            message: "trailing data after flip_count".into(),
        });
    }
    Ok(SpyMessage {
        seq,
        timestamp_s,
        device_id: device_id.to_string(),
        region_id: region_id.to_string(),
        decay_time_ms,
        flip_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_example_line_parses() {
        let msg = decode_message("V1 7 840 galileo2 r0 120000 1532").unwrap();
        assert_eq!(msg.seq, 7);
        assert_eq!(msg.timestamp_s, 840);
        assert_eq!(msg.device_id, "galileo2");
        assert_eq!(msg.region_id, "r0");
        assert_eq!(msg.decay_time_ms, 120_000);
        assert_eq!(msg.flip_count, 1532);
    }

    #[test]
    fn canonical_lines_round_trip() {
        let line = "V1 7 840 galileo2 r0 120000 1532";
        assert_eq!(encode_message(&decode_message(line).unwrap()).unwrap(), line);
        let msg = SpyMessage {
            seq: u64::MAX,
            timestamp_s: 0,
            device_id: "a-b.c_9".into(),
            region_id: "s12".into(),
            decay_time_ms: 1,
            flip_count: 0,
        };
        assert_eq!(decode_message(&encode_message(&msg).unwrap()).unwrap(), msg);
    }

    #[test]
    fn unknown_versions_are_version_errors() {
        assert!(matches!(
            decode_message("V2 1 0 d r0 1000 5"),
            Err(Error::Version(v)) if v == "V2"
        ));
    }

    #[test]
    fn malformed_lines_carry_byte_offsets() {
        match decode_message("V1 7 840 galileo2 r0 bogus 1532") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 21),
            other => panic!("expected parse error, got {other:?}"),
        }
        match decode_message("V1 7 840") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("expected parse error, got {other:?}"),
        }
        match decode_message("V1 7 840 galileo2 r0 120000 1532 extra") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 33),
            other => panic!("expected parse error, got {other:?}"),
        }
        // Zero decay time violates the message invariant.
        assert!(decode_message("V1 7 840 g r0 0 5").is_err());
        assert!(encode_message(&SpyMessage {
            seq: 1,
            timestamp_s: 1,
            device_id: "has space".into(),
            region_id: "r0".into(),
            decay_time_ms: 1,
            flip_count: 1,
        })
        .is_err());
    }
}
