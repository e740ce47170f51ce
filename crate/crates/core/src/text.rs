//! Character-offset helpers.
//!
//! All offsets in this crate count Unicode scalar values, never bytes, so the
//! same corpus file yields the same offsets in any language runtime.

/// Number of Unicode scalar values in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Byte index of the `char_idx`-th scalar value, or `s.len()` when it equals the length.
fn byte_index(s: &str, char_idx: usize) -> Option<usize> {
    if char_idx == 0 {
        return Some(0);
    }
    let mut seen = 0;
    for (b, _) in s.char_indices() {
        if seen == char_idx {
            return Some(b);
        }
        seen += 1;
    }
    (seen == char_idx).then_some(s.len())
}

/// Substring covering scalar offsets `[start, end)`.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let b0 = byte_index(s, start)?;
    let b1 = byte_index(s, end)?;
    Some(&s[b0..b1])
}

/// Scalar offset of every occurrence of `needle` in `haystack`, in order.
///
/// Overlapping occurrences are reported.
pub fn find_all_chars(haystack: &str, needle: &str) -> Vec<usize> {
    if needle.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(rel) = haystack[from..].find(needle) {
        let b = from + rel;
        out.push(haystack[..b].chars().count());
        // advance by one scalar so overlapping matches are found
        let step = haystack[b..].chars().next().map_or(1, char::len_utf8);
        from = b + step;
    }
    out
}

/// Scalar offset of the first occurrence of `needle` in `haystack`.
pub fn find_chars(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    haystack.find(needle).map(|b| haystack[..b].chars().count())
}

/// Lowercased, whitespace-collapsed form used for text-equality fallbacks.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slices_by_scalar_not_byte() {
        let s = "héllo wörld";
        assert_eq!(char_slice(s, 1, 5), Some("éllo"));
        assert_eq!(char_slice(s, 6, 11), Some("wörld"));
        assert_eq!(char_slice(s, 6, 12), None);
        assert_eq!(char_slice(s, 3, 2), None);
        assert_eq!(char_slice(s, 11, 11), Some(""));
    }

    #[test]
    fn finds_offsets_in_chars() {
        let s = "ça va, ça va";
        assert_eq!(find_chars(s, "va"), Some(3));
        assert_eq!(find_all_chars(s, "ça"), vec![0, 7]);
        assert_eq!(find_all_chars("aaa", "aa"), vec![0, 1]);
        assert_eq!(find_chars(s, ""), None);
    }

    #[test]
    fn normalization_collapses_case_and_space() {
        assert_eq!(normalize_text("  Take  Ibuprofen\n daily "), "take ibuprofen daily");
    }
}
