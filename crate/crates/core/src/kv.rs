//! The key-value config file format: one `key = value` per line, `#`
//! starts a comment (full-line or trailing), duplicate keys allowed
//! (order preserved).

use crate::error::{Error, Result};

/// Parse into an ordered multimap.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(
                "config",
                format!("line {}: expected `key = value`, got `{line}`", lineno + 1),
            )
        })?;
        let value = value.split('#').next().unwrap_or("");
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Last value for a key, if present.
pub fn get<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs
        .iter()
        .rev()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_duplicates() {
        let text = "# header\n\nmaster_seed = 7\nbreakpoint = 0,25\nbreakpoint = 10,30\n";
        let pairs = parse(text).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(get(&pairs, "master_seed"), Some("7"));
        assert_eq!(
            pairs.iter().filter(|(k, _)| k == "breakpoint").count(),
            2
        );
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(parse("just words\n").is_err());
    }

    #[test]
    fn strips_trailing_comments() {
        let pairs = parse("region_size = 2MiB   # bytes\n").unwrap();
        assert_eq!(get(&pairs, "region_size"), Some("2MiB"));
    }
}
