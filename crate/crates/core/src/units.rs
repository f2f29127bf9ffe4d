//! Region-size parsing. Sizes are bits internally; the CLI and config files
//! accept byte suffixes (KiB, MiB) and bit suffixes (KiBit, MiBit).

use crate::error::{Error, Result};

pub const BITS_PER_KIB: u64 = 8 * 1024;
pub const BITS_PER_MIB: u64 = 8 * 1024 * 1024;
pub const BITS_PER_KIBIT: u64 = 1024;
pub const BITS_PER_MIBIT: u64 = 1024 * 1024;

/// Parse a region size like `2MiB`, `512KiB`, `256KiBit` or a plain bit
/// count into bits.
pub fn parse_region_size(text: &str) -> Result<u64> {
    let s = text.trim();
    if s.is_empty() {
        return Err(Error::config("region_size", "empty value"));
    }
    let split = s
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(s.len());
    let (num, suffix) = s.split_at(split);
    let value: u64 = num
        .parse()
        .map_err(|_| Error::config("region_size", format!("bad number in `{s}`")))?;
    let mult = match suffix.trim().to_ascii_lowercase().as_str() {
        "" | "b" | "bit" | "bits" => 1,
        "kibit" => BITS_PER_KIBIT,
        "mibit" => BITS_PER_MIBIT,
        "kib" => BITS_PER_KIB,
        "mib" => BITS_PER_MIB,
        "gib" => BITS_PER_MIB * 1024,
        other => {
            return Err(Error::config(
                "region_size",
                format!("unknown size suffix `{other}` (use KiB, MiB, KiBit, MiBit or plain bits)"),
            ))
        }
    };
    value
        .checked_mul(mult)
        .filter(|&bits| bits >= 1)
        .ok_or_else(|| Error::config("region_size", format!("size `{s}` out of range")))
}

/// Human-friendly rendering of a bit count.
pub fn format_region_size(bits: u64) -> String {
    if bits.is_multiple_of(BITS_PER_MIB) {
        format!("{}MiB", bits / BITS_PER_MIB)
    } else if bits.is_multiple_of(BITS_PER_KIB) {
        format!("{}KiB", bits / BITS_PER_KIB)
    } else if bits.is_multiple_of(BITS_PER_KIBIT) {
        format!("{}KiBit", bits / BITS_PER_KIBIT)
    } else {
        format!("{bits}bits")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_common_sizes() {
        assert_eq!(parse_region_size("2MiB").unwrap(), 16_777_216);
        assert_eq!(parse_region_size("1MiB").unwrap(), 8_388_608);
        assert_eq!(parse_region_size("512KiB").unwrap(), 4_194_304);
        assert_eq!(parse_region_size("256KiBit").unwrap(), 262_144);
        assert_eq!(parse_region_size("8388608").unwrap(), 8_388_608);
        assert_eq!(parse_region_size(" 64 KiB ").unwrap(), 524_288);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_region_size("").is_err());
        assert!(parse_region_size("2XB").is_err());
        assert!(parse_region_size("MiB").is_err());
        assert!(parse_region_size("0").is_err());
    }

    #[test]
    fn formats_canonically() {
        assert_eq!(format_region_size(16_777_216), "2MiB");
        assert_eq!(format_region_size(4_194_304), "512KiB");
        // 256 KiBit == 32 KiB; byte units win when divisible.
        assert_eq!(format_region_size(262_144), "32KiB");
        assert_eq!(format_region_size(2048), "2KiBit");
        assert_eq!(format_region_size(100), "100bits");
    }
}
