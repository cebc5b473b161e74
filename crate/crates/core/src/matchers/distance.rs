/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (short, long) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    if short.is_empty() {
        return long.len();
    }
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, lc) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, sc) in short.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if lc == sc { diag } else { 1 + diag.min(above).min(row[j]) };
            diag = above;
        }
    }
    row[short.len()]
}

/// Similarity in 0..=100: `round(100 × (1 − distance / max_len))`, half up.
/// Two empty strings score 100; distinct strings score at most 99.
pub fn similarity_score(a: &str, b: &str) -> u32 {
    let max_len = a.chars().count().max(b.chars().count());
    if max_len == 0 {
        return 100;
    }
    let distance = levenshtein(a, b);
    let same = (max_len - distance) as u64;
    let max_len = max_len as u64;
    let score = ((200 * same + max_len) / (2 * max_len)) as u32;
    if distance > 0 {
        score.min(99)
    } else {
        score
    }
}
