//! Grid-mapfile parsing: maps certificate distinguished names to local
//! account names.
//!
//! Line format, bit-exact: `"<DN>" <username>` — the DN double-quoted (it
//! usually contains spaces), one username token, `#` comments and blank
//! lines ignored. A later line for the same DN overrides an earlier one.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::ConfigError;

pub type GridMap = BTreeMap<String, String>;

pub fn load_gridmap(path: &Path) -> Result<GridMap, ConfigError> {
    let content =
        std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{path:?}: {e}")))?;
    parse_gridmap(&content)
}

pub fn parse_gridmap(content: &str) -> Result<GridMap, ConfigError> {
    let mut map = GridMap::new();
    for (idx, raw) in content.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rest = line
            .strip_prefix('"')
            .ok_or_else(|| ConfigError::at(lineno, "DN must be double-quoted"))?;
        let (dn, after) = rest
            .split_once('"')
            .ok_or_else(|| ConfigError::at(lineno, "unterminated DN quote"))?;
        if dn.is_empty() {
            return Err(ConfigError::at(lineno, "empty DN"));
        }
        let mut tokens = after.split_whitespace();
        let user = tokens
            .next()
            .ok_or_else(|| ConfigError::at(lineno, "missing user field"))?;
        if tokens.next().is_some() {
            return Err(ConfigError::at(lineno, "trailing tokens after user field"));
        }
        map.insert(dn.to_string(), user.to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_line() {
        let map = parse_gridmap("\"/O=Grid/CN=Alice\" alice\n").unwrap();
        assert_eq!(map.get("/O=Grid/CN=Alice").map(String::as_str), Some("alice"));
    }

    #[test]
    fn later_duplicate_overrides() {
        let map = parse_gridmap("\"/CN=X\" bob\n\"/CN=X\" alice\n").unwrap();
        assert_eq!(map.get("/CN=X").map(String::as_str), Some("alice"));
    }

    #[test]
    fn unquoted_dn_rejected_with_line() {
        let err = parse_gridmap("# ok\n/CN=NoQuotes alice\n").unwrap_err();
        assert_eq!(err, ConfigError::at(2, "DN must be double-quoted"));
    }

    #[test]
    fn missing_user_rejected() {
        let err = parse_gridmap("\"/CN=X\"\n").unwrap_err();
        assert_eq!(err, ConfigError::at(1, "missing user field"));
    }

    #[test]
    fn dn_may_contain_spaces() {
        let map = parse_gridmap("\"/O=Some Org/CN=Alice Smith\" asmith\n").unwrap();
        assert_eq!(
            map.get("/O=Some Org/CN=Alice Smith").map(String::as_str),
            Some("asmith")
        );
    }

    #[test]
    fn reparsing_is_idempotent() {
        let content = "\"/CN=A\" a\n\"/CN=B\" b\n\"/CN=A\" a2\n";
        assert_eq!(parse_gridmap(content), parse_gridmap(content));
    }
}
