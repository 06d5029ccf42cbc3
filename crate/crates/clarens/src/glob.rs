//! Minimal glob matching: `*` matches any (possibly empty) substring, every
//! other character matches itself. This is the full pattern language used by
//! ACL entries and registry name lookups.

/// Iterative matcher with single-star backtracking.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let pat = pattern.as_bytes();
    let txt = text.as_bytes();
    let (mut p, mut t) = (0usize, 0usize);
    let mut star: Option<(usize, usize)> = None; // (pattern idx after '*', text idx)
    while t < txt.len() {
        if p < pat.len() && pat[p] == b'*' {
            star = Some((p + 1, t));
            p += 1;
        } else if p < pat.len() && pat[p] == txt[t] {
            p += 1;
            t += 1;
        } else if let Some((sp, st)) = star {
            p = sp;
            t = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    while p < pat.len() && pat[p] == b'*' {
        p += 1;
    }
    p == pat.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Reference matcher: straightforward recursion.
    fn oracle(pattern: &[u8], text: &[u8]) -> bool {
        match pattern.split_first() {
            None => text.is_empty(),
            Some((b'*', rest)) => (0..=text.len()).any(|skip| oracle(rest, &text[skip..])),
            Some((c, rest)) => match text.split_first() {
                Some((tc, trest)) => tc == c && oracle(rest, trest),
                None => false,
            },
        }
    }

    #[test]
    fn basics() {
        assert!(glob_match("*", ""));
        assert!(glob_match("*", "anything"));
        assert!(glob_match("shell.*", "shell.cmd"));
        assert!(!glob_match("shell.*", "file.get"));
        assert!(glob_match("*.cmd", "shell.cmd"));
        assert!(glob_match("s*l.c*d", "shell.cmd"));
        assert!(!glob_match("", "x"));
        assert!(glob_match("", ""));
        assert!(glob_match("catalog*", "catalog"));
        assert!(glob_match("catalog*", "catalog-east"));
    }

    proptest! {
        #[test]
        fn agrees_with_oracle(pattern in "[ab*.]{0,8}", text in "[ab.]{0,10}") {
            prop_assert_eq!(
                glob_match(&pattern, &text),
                oracle(pattern.as_bytes(), text.as_bytes())
            );
        }
    }
}
