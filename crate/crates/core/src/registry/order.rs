//! Version-aware ordering of tag names.

use std::cmp::Ordering;

#[derive(Debug, PartialEq, Eq)]
enum Run<'a> {
    Num(&'a str),
    Text(&'a str),
}

fn runs(tag: &str) -> Vec<Run<'_>> {
    let mut out = Vec::new();
    let bytes = tag.as_bytes();
    let mut start = 0;
    while start < bytes.len() {
        let digit = bytes[start].is_ascii_digit();
        let mut end = start + 1;
        while end < bytes.len() && bytes[end].is_ascii_digit() == digit {
            end += 1;
        }
        // keep multi-byte characters intact
        while !tag.is_char_boundary(end) {
            end += 1;
        }
        let piece = &tag[start..end];
        out.push(if digit {
            Run::Num(piece)
        } else {
            Run::Text(piece)
        });
        start = end;
    }
    out
}

fn cmp_numeric(a: &str, b: &str) -> Ordering {
    let a_trim = a.trim_start_matches('0');
    let b_trim = b.trim_start_matches('0');
    a_trim
        .len()
        .cmp(&b_trim.len())
        .then_with(|| a_trim.cmp(b_trim))
}

/// Compares tags by splitting them into digit and non-digit runs; digit
/// runs compare numerically, other runs as text. Ties fall back to plain
/// string order so the result is a total order.
pub fn version_cmp(a: &str, b: &str) -> Ordering {
    let ra = runs(a);
    let rb = runs(b);
    for (x, y) in ra.iter().zip(rb.iter()) {
        let ord = match (x, y) {
            (Run::Num(x), Run::Num(y)) => cmp_numeric(x, y),
            (Run::Text(x), Run::Text(y)) => x.cmp(y),
            (Run::Num(_), Run::Text(_)) => Ordering::Greater,
            (Run::Text(_), Run::Num(_)) => Ordering::Less,
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    ra.len().cmp(&rb.len()).then_with(|| a.cmp(b))
}

/// Sorts and deduplicates tags oldest to newest.
pub fn sort_tags(tags: &mut Vec<String>) {
    tags.sort_by(|a, b| version_cmp(a, b));
    tags.dedup();
}
